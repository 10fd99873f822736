#include "tad/ndgrad.hpp"

#include "tad/errors.hpp"
#include "tad/kernels.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace tad {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.tape() || a.tape() != b.tape())
    throw ValueError(std::string(op) + ": operands on different tapes");
  return *a.tape();
}

std::string shape_str(const Array& a) {
  return "[" + std::to_string(a.rows) + "x" + std::to_string(a.cols) + "]";
}

void require_same_shape(const Array& a, const Array& b, const char* op) {
  require(a.same_shape(b),
          std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

// ---- Var / Tape ------------------------------------------------------------

const Array& Var::val() const { return tape_->node(idx_).value; }
const Array& Var::grad() const { return tape_->node(idx_).grad; }
bool Var::needs_grad() const { return tape_->node(idx_).needs_grad; }

double Var::item() const {
  const Array& v = val();
  require(v.rows == 1 && v.cols == 1, "Var::item: node is not scalar");
  return v.data[0];
}

Var Tape::leaf(Array v, bool requires_grad) {
  Node n;
  if (requires_grad) n.grad = Array(v.rows, v.cols, 0.0);
  n.value = std::move(v);
  n.needs_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Array value, bool needs_grad, BackFn bwd) {
  Node n;
  if (needs_grad) {
    n.grad = Array(value.rows, value.cols, 0.0);
    n.backward = std::move(bwd);
  }
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t i, const Array& gy) {
  Node& n = nodes_[i];
  if (!n.needs_grad) return;
  require_same_shape(n.grad, gy, "Tape::accumulate");
  for (std::size_t j = 0; j < gy.size(); ++j) n.grad.data[j] += gy.data[j];
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ValueError("Tape::backward: loss from another tape");
  const Node& ln = nodes_[loss.index()];
  require(ln.value.rows == 1 && ln.value.cols == 1, "Tape::backward: loss must be scalar");
  if (!ln.needs_grad) throw ValueError("Tape::backward: loss does not require grad");
  nodes_[loss.index()].grad.data[0] += 1.0;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.backward) n.backward(*this, n.grad);
  }
}

// ---- elementwise helpers ----------------------------------------------------

namespace {

// Unary op: y = f(x); backward pulls gy through df given (x, y, gy).
template <typename F, typename DF>
Var unary(Var a, const char* /*op*/, F f, DF df) {
  Tape& t = *a.tape();
  Array y(a.val().rows, a.val().cols);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = f(a.val().data[i]);
  const std::size_t ai = a.index(), yi = t.size();
  return t.record(std::move(y), a.needs_grad(), [ai, yi, df](Tape& tp, const Array& gy) {
    if (!tp.node(ai).needs_grad) return;
    Array& ga = tp.node(ai).grad;
    const Array& x = tp.node(ai).value;
    const Array& yv = tp.node(yi).value;
    for (std::size_t i = 0; i < gy.size(); ++i)
      ga.data[i] += gy.data[i] * df(x.data[i], yv.data[i]);
  });
}

// Binary elementwise: y = f(a, b); dfa/dfb give partials from (a, b).
template <typename F, typename DFA, typename DFB>
Var binary(Var a, Var b, const char* op, F f, DFA dfa, DFB dfb) {
  Tape& t = same_tape(a, b, op);
  require_same_shape(a.val(), b.val(), op);
  Array y(a.val().rows, a.val().cols);
  for (std::size_t i = 0; i < y.size(); ++i)
    y.data[i] = f(a.val().data[i], b.val().data[i]);
  const std::size_t ai = a.index(), bi = b.index();
  const bool ng = a.needs_grad() || b.needs_grad();
  return t.record(std::move(y), ng, [ai, bi, dfa, dfb](Tape& tp, const Array& gy) {
    const Array& av = tp.node(ai).value;
    const Array& bv = tp.node(bi).value;
    if (tp.node(ai).needs_grad) {
      Array& ga = tp.node(ai).grad;
      for (std::size_t i = 0; i < gy.size(); ++i)
        ga.data[i] += gy.data[i] * dfa(av.data[i], bv.data[i]);
    }
    if (tp.node(bi).needs_grad) {
      Array& gb = tp.node(bi).grad;
      for (std::size_t i = 0; i < gy.size(); ++i)
        gb.data[i] += gy.data[i] * dfb(av.data[i], bv.data[i]);
    }
  });
}

}  // namespace

// ---- arithmetic --------------------------------------------------------------

Var add(Var a, Var b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; },
                [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; },
                [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; },
                [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(a, b, "div", [](double x, double y) { return x / y; },
                [](double, double y) { return 1.0 / y; },
                [](double x, double y) { return -x / (y * y); });
}

Var minimum(Var a, Var b) {
  return binary(a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
                [](double x, double y) { return x <= y ? 1.0 : 0.0; },
                [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Var maximum(Var a, Var b) {
  return binary(a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
                [](double x, double y) { return x >= y ? 1.0 : 0.0; },
                [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Var neg(Var a) {
  return unary(a, "neg", [](double x) { return -x; },
               [](double, double) { return -1.0; });
}

Var add_const(Var a, double c) {
  return unary(a, "add_const", [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Var mul_const(Var a, double c) {
  return unary(a, "mul_const", [c](double x) { return x * c; },
               [c](double, double) { return c; });
}

Var mul_array(Var a, Array c) {
  Tape& t = *a.tape();
  require_same_shape(a.val(), c, "mul_array");
  Array y(c.rows, c.cols);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = a.val().data[i] * c.data[i];
  const std::size_t ai = a.index();
  return t.record(std::move(y), a.needs_grad(),
                  [ai, c = std::move(c)](Tape& tp, const Array& gy) {
                    if (!tp.node(ai).needs_grad) return;
                    Array& ga = tp.node(ai).grad;
                    for (std::size_t i = 0; i < gy.size(); ++i)
                      ga.data[i] += gy.data[i] * c.data[i];
                  });
}

// ---- linear algebra -----------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  const Array& av = a.val();
  const Array& bv = b.val();
  require(av.cols == bv.rows, "matmul: inner dims " + shape_str(av) + " x " + shape_str(bv));
  Array y(av.rows, bv.cols);
  kernels::matmul(av.ptr(), bv.ptr(), y.ptr(), av.rows, av.cols, bv.cols);
  const std::size_t ai = a.index(), bi = b.index();
  return t.record(std::move(y), a.needs_grad() || b.needs_grad(),
                  [ai, bi](Tape& tp, const Array& gy) {
                    const Array& av2 = tp.node(ai).value;
                    const Array& bv2 = tp.node(bi).value;
                    if (tp.node(ai).needs_grad)
                      kernels::matmul_nt(gy.ptr(), bv2.ptr(), tp.node(ai).grad.ptr(),
                                         gy.rows, gy.cols, av2.cols, true);
                    if (tp.node(bi).needs_grad)
                      kernels::matmul_tn(av2.ptr(), gy.ptr(), tp.node(bi).grad.ptr(),
                                         av2.cols, av2.rows, gy.cols, true);
                  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul_nt");
  const Array& av = a.val();
  const Array& bv = b.val();
  require(av.cols == bv.cols,
          "matmul_nt: inner dims " + shape_str(av) + " x " + shape_str(bv) + "^T");
  Array y(av.rows, bv.rows);
  kernels::matmul_nt(av.ptr(), bv.ptr(), y.ptr(), av.rows, av.cols, bv.rows);
  const std::size_t ai = a.index(), bi = b.index();
  return t.record(std::move(y), a.needs_grad() || b.needs_grad(),
                  [ai, bi](Tape& tp, const Array& gy) {
                    const Array& av2 = tp.node(ai).value;
                    const Array& bv2 = tp.node(bi).value;
                    if (tp.node(ai).needs_grad)  // ga = gy * b
                      kernels::matmul(gy.ptr(), bv2.ptr(), tp.node(ai).grad.ptr(),
                                      gy.rows, gy.cols, bv2.cols, true);
                    if (tp.node(bi).needs_grad)  // gb = gy^T * a
                      kernels::matmul_tn(gy.ptr(), av2.ptr(), tp.node(bi).grad.ptr(),
                                         gy.cols, gy.rows, av2.cols, true);
                  });
}

Var add_rowvec(Var a, Var v) {
  Tape& t = same_tape(a, v, "add_rowvec");
  const Array& av = a.val();
  const Array& vv = v.val();
  require(vv.rows == 1 && vv.cols == av.cols, "add_rowvec: want [1x" +
          std::to_string(av.cols) + "], got " + shape_str(vv));
  Array y = av;
  for (std::size_t i = 0; i < av.rows; ++i)
    for (std::size_t j = 0; j < av.cols; ++j) y.at(i, j) += vv.data[j];
  const std::size_t ai = a.index(), vi = v.index();
  return t.record(std::move(y), a.needs_grad() || v.needs_grad(),
                  [ai, vi](Tape& tp, const Array& gy) {
                    tp.accumulate(ai, gy);
                    if (tp.node(vi).needs_grad) {
                      Array& gv = tp.node(vi).grad;
                      for (std::size_t i = 0; i < gy.rows; ++i)
                        for (std::size_t j = 0; j < gy.cols; ++j)
                          gv.data[j] += gy.at(i, j);
                    }
                  });
}

Var add_colvec(Var a, Var v) {
  Tape& t = same_tape(a, v, "add_colvec");
  const Array& av = a.val();
  const Array& vv = v.val();
  require(vv.cols == 1 && vv.rows == av.rows, "add_colvec: want [" +
          std::to_string(av.rows) + "x1], got " + shape_str(vv));
  Array y = av;
  for (std::size_t i = 0; i < av.rows; ++i)
    for (std::size_t j = 0; j < av.cols; ++j) y.at(i, j) += vv.data[i];
  const std::size_t ai = a.index(), vi = v.index();
  return t.record(std::move(y), a.needs_grad() || v.needs_grad(),
                  [ai, vi](Tape& tp, const Array& gy) {
                    tp.accumulate(ai, gy);
                    if (tp.node(vi).needs_grad) {
                      Array& gv = tp.node(vi).grad;
                      for (std::size_t i = 0; i < gy.rows; ++i)
                        for (std::size_t j = 0; j < gy.cols; ++j)
                          gv.data[i] += gy.at(i, j);
                    }
                  });
}

Var mul_colvec(Var a, Var v) {
  Tape& t = same_tape(a, v, "mul_colvec");
  const Array& av = a.val();
  const Array& vv = v.val();
  require(vv.cols == 1 && vv.rows == av.rows, "mul_colvec: want [" +
          std::to_string(av.rows) + "x1], got " + shape_str(vv));
  Array y = av;
  for (std::size_t i = 0; i < av.rows; ++i)
    for (std::size_t j = 0; j < av.cols; ++j) y.at(i, j) *= vv.data[i];
  const std::size_t ai = a.index(), vi = v.index();
  return t.record(std::move(y), a.needs_grad() || v.needs_grad(),
                  [ai, vi](Tape& tp, const Array& gy) {
                    const Array& av2 = tp.node(ai).value;
                    const Array& vv2 = tp.node(vi).value;
                    if (tp.node(ai).needs_grad) {
                      Array& ga = tp.node(ai).grad;
                      for (std::size_t i = 0; i < gy.rows; ++i)
                        for (std::size_t j = 0; j < gy.cols; ++j)
                          ga.at(i, j) += gy.at(i, j) * vv2.data[i];
                    }
                    if (tp.node(vi).needs_grad) {
                      Array& gv = tp.node(vi).grad;
                      for (std::size_t i = 0; i < gy.rows; ++i)
                        for (std::size_t j = 0; j < gy.cols; ++j)
                          gv.data[i] += gy.at(i, j) * av2.at(i, j);
                    }
                  });
}

Var affine(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }

// ---- nonlinearities -------------------------------------------------------------

Var relu(Var a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid",
               [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  for (double x : a.val().data)
    if (!(x > 0.0)) throw ValueError("log: non-positive input " + std::to_string(x));
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var abs(Var a) {
  return unary(a, "abs", [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sqrt(Var a) {
  return unary(a, "sqrt", [](double x) { return std::sqrt(x); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var pow_const(Var a, double p) {
  return unary(a, "pow_const", [p](double x) { return std::pow(x, p); },
               [p](double x, double) {
                 if (x == 0.0) return p > 1.0 ? 0.0 : (p == 1.0 ? 1.0 : 0.0);
                 return p * std::pow(x, p - 1.0);
               });
}

Var clamp(Var a, double lo, double hi) {
  return unary(a, "clamp",
               [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var logit(Var a) {
  for (double x : a.val().data)
    if (!(x > 0.0 && x < 1.0))
      throw ValueError("logit: input " + std::to_string(x) + " outside (0,1)");
  return unary(a, "logit", [](double x) { return std::log(x / (1.0 - x)); },
               [](double x, double) { return 1.0 / (x * (1.0 - x)); });
}

// ---- normalization / softmax ----------------------------------------------------

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = same_tape(x, gamma, "layer_norm");
  same_tape(x, beta, "layer_norm");
  const Array& xv = x.val();
  require(gamma.val().rows == 1 && gamma.val().cols == xv.cols &&
              beta.val().rows == 1 && beta.val().cols == xv.cols,
          "layer_norm: gamma/beta must be [1x" + std::to_string(xv.cols) + "]");
  Array y(xv.rows, xv.cols);
  Array xhat(xv.rows, xv.cols);
  Array inv_std(xv.rows, 1);
  kernels::layer_norm_fwd(xv.ptr(), gamma.val().ptr(), beta.val().ptr(), y.ptr(),
                          xhat.ptr(), inv_std.ptr(), xv.rows, xv.cols, eps);
  const std::size_t xi = x.index(), gi = gamma.index(), bi = beta.index();
  const bool ng = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
  return t.record(
      std::move(y), ng,
      [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& tp, const Array& gy) {
        // The kernel writes all three grads; route unused ones to scratch.
        Array scratch_x, scratch_g, scratch_b;
        double* gx;
        if (tp.node(xi).needs_grad) {
          gx = tp.node(xi).grad.ptr();
        } else {
          scratch_x = Array(gy.rows, gy.cols, 0.0);
          gx = scratch_x.ptr();
        }
        double* gg;
        if (tp.node(gi).needs_grad) {
          gg = tp.node(gi).grad.ptr();
        } else {
          scratch_g = Array(1, gy.cols, 0.0);
          gg = scratch_g.ptr();
        }
        double* gb;
        if (tp.node(bi).needs_grad) {
          gb = tp.node(bi).grad.ptr();
        } else {
          scratch_b = Array(1, gy.cols, 0.0);
          gb = scratch_b.ptr();
        }
        kernels::layer_norm_bwd(gy.ptr(), xhat.ptr(), inv_std.ptr(),
                                tp.node(gi).value.ptr(), gx, gg, gb, gy.rows, gy.cols);
      });
}

Var softmax_rows(Var x, std::vector<unsigned char> mask) {
  Tape& t = *x.tape();
  const Array& xv = x.val();
  require(mask.empty() || mask.size() == xv.size(),
          "softmax_rows: mask size " + std::to_string(mask.size()) + " != " +
              std::to_string(xv.size()));
  if (!mask.empty()) {
    for (std::size_t i = 0; i < xv.rows; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < xv.cols && !any; ++j) any = mask[i * xv.cols + j] != 0;
      if (!any)
        throw ValueError("softmax_rows: row " + std::to_string(i) + " fully masked");
    }
  }
  Array y(xv.rows, xv.cols);
  kernels::softmax_fwd(xv.ptr(), mask.empty() ? nullptr : mask.data(), y.ptr(),
                       xv.rows, xv.cols);
  const std::size_t xi = x.index(), yi = t.size();
  return t.record(std::move(y), x.needs_grad(), [xi, yi](Tape& tp, const Array& gy) {
    if (!tp.node(xi).needs_grad) return;
    const Array& yv = tp.node(yi).value;
    kernels::softmax_bwd(yv.ptr(), gy.ptr(), tp.node(xi).grad.ptr(), yv.rows, yv.cols);
  });
}

// ---- reductions -------------------------------------------------------------------

Var sum(Var a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double x : a.val().data) s += x;
  const std::size_t ai = a.index();
  return t.record(Array::scalar(s), a.needs_grad(), [ai](Tape& tp, const Array& gy) {
    if (!tp.node(ai).needs_grad) return;
    Array& ga = tp.node(ai).grad;
    for (double& g : ga.data) g += gy.data[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.val().size());
  return mul_const(sum(a), 1.0 / n);
}

Var sum_cols(Var a) {
  Tape& t = *a.tape();
  const Array& av = a.val();
  Array y(av.rows, 1);
  for (std::size_t i = 0; i < av.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols; ++j) s += av.at(i, j);
    y.data[i] = s;
  }
  const std::size_t ai = a.index();
  return t.record(std::move(y), a.needs_grad(), [ai](Tape& tp, const Array& gy) {
    if (!tp.node(ai).needs_grad) return;
    Array& ga = tp.node(ai).grad;
    for (std::size_t i = 0; i < ga.rows; ++i)
      for (std::size_t j = 0; j < ga.cols; ++j) ga.at(i, j) += gy.data[i];
  });
}

Var mean_rows(Var a) {
  Tape& t = *a.tape();
  const Array& av = a.val();
  require(av.rows > 0, "mean_rows: empty input");
  Array y(1, av.cols, 0.0);
  for (std::size_t i = 0; i < av.rows; ++i)
    for (std::size_t j = 0; j < av.cols; ++j) y.data[j] += av.at(i, j);
  const double inv = 1.0 / static_cast<double>(av.rows);
  for (double& v : y.data) v *= inv;
  const std::size_t ai = a.index();
  return t.record(std::move(y), a.needs_grad(), [ai, inv](Tape& tp, const Array& gy) {
    if (!tp.node(ai).needs_grad) return;
    Array& ga = tp.node(ai).grad;
    for (std::size_t i = 0; i < ga.rows; ++i)
      for (std::size_t j = 0; j < ga.cols; ++j) ga.at(i, j) += gy.data[j] * inv;
  });
}

Var logsumexp_rows(Var a) {
  Tape& t = *a.tape();
  const Array& av = a.val();
  Array y(av.rows, 1);
  for (std::size_t i = 0; i < av.rows; ++i) {
    double mx = av.at(i, 0);
    for (std::size_t j = 1; j < av.cols; ++j) mx = std::max(mx, av.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols; ++j) s += std::exp(av.at(i, j) - mx);
    y.data[i] = mx + std::log(s);
  }
  const std::size_t ai = a.index(), yi = t.size();
  return t.record(std::move(y), a.needs_grad(), [ai, yi](Tape& tp, const Array& gy) {
    if (!tp.node(ai).needs_grad) return;
    const Array& xv = tp.node(ai).value;
    const Array& yv = tp.node(yi).value;
    Array& ga = tp.node(ai).grad;
    for (std::size_t i = 0; i < xv.rows; ++i)
      for (std::size_t j = 0; j < xv.cols; ++j)
        ga.at(i, j) += gy.data[i] * std::exp(xv.at(i, j) - yv.data[i]);
  });
}

// ---- structural -------------------------------------------------------------------

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tape& t = *a.tape();
  const Array& av = a.val();
  require(rows * cols == av.size(), "reshape: element count mismatch");
  Array y(rows, cols);
  y.data = av.data;
  const std::size_t ai = a.index();
  return t.record(std::move(y), a.needs_grad(), [ai](Tape& tp, const Array& gy) {
    if (!tp.node(ai).needs_grad) return;
    Array& ga = tp.node(ai).grad;
    for (std::size_t i = 0; i < gy.size(); ++i) ga.data[i] += gy.data[i];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValueError("concat_rows: no parts");
  Tape& t = *parts[0].tape();
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  bool ng = false;
  for (const Var& p : parts) {
    same_tape(parts[0], p, "concat_rows");
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
    ng = ng || p.needs_grad();
  }
  Array y(rows, cols);
  std::size_t r = 0;
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (node idx, row offset)
  spans.reserve(parts.size());
  for (const Var& p : parts) {
    const Array& pv = p.val();
    std::copy(pv.data.begin(), pv.data.end(), y.data.begin() + r * cols);
    spans.emplace_back(p.index(), r);
    r += pv.rows;
  }
  return t.record(std::move(y), ng,
                  [spans = std::move(spans), cols](Tape& tp, const Array& gy) {
                    for (auto [idx, r0] : spans) {
                      if (!tp.node(idx).needs_grad) continue;
                      Array& gp = tp.node(idx).grad;
                      for (std::size_t i = 0; i < gp.rows; ++i)
                        for (std::size_t j = 0; j < cols; ++j)
                          gp.at(i, j) += gy.at(r0 + i, j);
                    }
                  });
}

Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
  Tape& t = *a.tape();
  const Array& av = a.val();
  require(r0 <= r1 && r1 <= av.rows, "slice_rows: bad range");
  Array y(r1 - r0, av.cols);
  std::copy(av.data.begin() + r0 * av.cols, av.data.begin() + r1 * av.cols,
            y.data.begin());
  const std::size_t ai = a.index();
  return t.record(std::move(y), a.needs_grad(), [ai, r0](Tape& tp, const Array& gy) {
    if (!tp.node(ai).needs_grad) return;
    Array& ga = tp.node(ai).grad;
    for (std::size_t i = 0; i < gy.rows; ++i)
      for (std::size_t j = 0; j < gy.cols; ++j) ga.at(r0 + i, j) += gy.at(i, j);
  });
}

Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
  Tape& t = *a.tape();
  const Array& av = a.val();
  require(c0 <= c1 && c1 <= av.cols, "slice_cols: bad range");
  Array y(av.rows, c1 - c0);
  for (std::size_t i = 0; i < av.rows; ++i)
    for (std::size_t j = c0; j < c1; ++j) y.at(i, j - c0) = av.at(i, j);
  const std::size_t ai = a.index();
  return t.record(std::move(y), a.needs_grad(), [ai, c0](Tape& tp, const Array& gy) {
    if (!tp.node(ai).needs_grad) return;
    Array& ga = tp.node(ai).grad;
    for (std::size_t i = 0; i < gy.rows; ++i)
      for (std::size_t j = 0; j < gy.cols; ++j) ga.at(i, c0 + j) += gy.at(i, j);
  });
}

Var take_rows(Var a, std::vector<std::size_t> idx) {
  Tape& t = *a.tape();
  const Array& av = a.val();
  for (std::size_t r : idx)
    require(r < av.rows, "take_rows: index " + std::to_string(r) + " out of range");
  Array y(idx.size(), av.cols);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < av.cols; ++j) y.at(i, j) = av.at(idx[i], j);
  const std::size_t ai = a.index();
  return t.record(std::move(y), a.needs_grad(),
                  [ai, idx = std::move(idx)](Tape& tp, const Array& gy) {
                    if (!tp.node(ai).needs_grad) return;
                    Array& ga = tp.node(ai).grad;
                    for (std::size_t i = 0; i < idx.size(); ++i)
                      for (std::size_t j = 0; j < gy.cols; ++j)
                        ga.at(idx[i], j) += gy.at(i, j);
                  });
}

// ---- sampling ----------------------------------------------------------------------

Var interp_rows(Var feat, Var pos, bool clamp_positions) {
  Tape& t = same_tape(feat, pos, "interp_rows");
  const Array& fv = feat.val();
  const Array& pv = pos.val();
  require(pv.cols == 1, "interp_rows: pos must be a column vector");
  require(fv.rows >= 1, "interp_rows: empty feature matrix");
  if (!clamp_positions) {
    const double top = static_cast<double>(fv.rows - 1);
    for (double p : pv.data)
      if (p < 0.0 || p > top)
        throw ValueError("interp_rows: position " + std::to_string(p) +
                         " outside [0, " + std::to_string(top) + "]");
  }
  Array y(pv.rows, fv.cols);
  kernels::interp_rows_fwd(fv.ptr(), pv.ptr(), y.ptr(), fv.rows, fv.cols, pv.rows, true);
  const std::size_t fi = feat.index(), pi = pos.index();
  return t.record(std::move(y), feat.needs_grad() || pos.needs_grad(),
                  [fi, pi](Tape& tp, const Array& gy) {
                    const Array& fv2 = tp.node(fi).value;
                    const Array& pv2 = tp.node(pi).value;
                    double* gf = tp.node(fi).needs_grad ? tp.node(fi).grad.ptr() : nullptr;
                    double* gp = tp.node(pi).needs_grad ? tp.node(pi).grad.ptr() : nullptr;
                    kernels::interp_rows_bwd(fv2.ptr(), pv2.ptr(), gy.ptr(), gf, gp,
                                             fv2.rows, fv2.cols, pv2.rows, true);
                  });
}

Var deform_sample(Var value, Var pos, Var w, std::size_t heads, std::size_t k) {
  Tape& t = same_tape(value, pos, "deform_sample");
  same_tape(value, w, "deform_sample");
  const Array& vv = value.val();
  const Array& pv = pos.val();
  const Array& wv = w.val();
  require(heads > 0 && vv.cols % heads == 0, "deform_sample: cols not divisible by heads");
  require(pv.cols == heads * k && wv.cols == heads * k && pv.rows == wv.rows,
          "deform_sample: pos/w must be [rows x heads*k]");
  Array y(pv.rows, vv.cols);
  kernels::deform_sample_fwd(vv.ptr(), pv.ptr(), wv.ptr(), y.ptr(), vv.rows, vv.cols,
                             pv.rows, heads, k);
  const std::size_t vi = value.index(), pi = pos.index(), wi = w.index();
  const bool ng = value.needs_grad() || pos.needs_grad() || w.needs_grad();
  return t.record(std::move(y), ng, [vi, pi, wi, heads, k](Tape& tp, const Array& gy) {
    const Array& vv2 = tp.node(vi).value;
    const Array& pv2 = tp.node(pi).value;
    const Array& wv2 = tp.node(wi).value;
    double* gv = tp.node(vi).needs_grad ? tp.node(vi).grad.ptr() : nullptr;
    double* gp = tp.node(pi).needs_grad ? tp.node(pi).grad.ptr() : nullptr;
    double* gw = tp.node(wi).needs_grad ? tp.node(wi).grad.ptr() : nullptr;
    kernels::deform_sample_bwd(vv2.ptr(), pv2.ptr(), wv2.ptr(), gy.ptr(), gv, gp, gw,
                               vv2.rows, vv2.cols, pv2.rows, heads, k);
  });
}

Var l2_normalize_rows(Var a, double eps) {
  Tape& t = *a.tape();
  const Array& av = a.val();
  Array y(av.rows, av.cols);
  Array norms(av.rows, 1);
  for (std::size_t i = 0; i < av.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols; ++j) s += av.at(i, j) * av.at(i, j);
    const double n = std::sqrt(s);
    norms.data[i] = n;  // raw norm, picks the branch in backward
    const double denom = std::max(n, eps);
    for (std::size_t j = 0; j < av.cols; ++j) y.at(i, j) = av.at(i, j) / denom;
  }
  const std::size_t ai = a.index(), yi = t.size();
  return t.record(std::move(y), a.needs_grad(),
                  [ai, yi, eps, norms = std::move(norms)](Tape& tp, const Array& gy) {
                    if (!tp.node(ai).needs_grad) return;
                    const Array& yv = tp.node(yi).value;
                    Array& ga = tp.node(ai).grad;
                    for (std::size_t i = 0; i < yv.rows; ++i) {
                      const double n = norms.data[i];
                      if (n > eps) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < yv.cols; ++j)
                          dot += gy.at(i, j) * yv.at(i, j);
                        for (std::size_t j = 0; j < yv.cols; ++j)
                          ga.at(i, j) += (gy.at(i, j) - yv.at(i, j) * dot) / n;
                      } else {
                        for (std::size_t j = 0; j < yv.cols; ++j)
                          ga.at(i, j) += gy.at(i, j) / eps;
                      }
                    }
                  });
}

}  // namespace tad
