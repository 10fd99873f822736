#pragma once

#include "tad/array.hpp"

#include <cstddef>
#include <functional>
#include <vector>

// Eager reverse-mode autodiff. A Tape owns the nodes of one forward pass in
// creation order (which is therefore already topological); Var is an index
// into it. backward() seeds a scalar node and sweeps the tape in reverse,
// each node pulling its output gradient into its parents. Graphs are rebuilt
// from scratch every step — nothing here is retained across steps.

namespace tad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* t, std::size_t i) : tape_(t), idx_(i) {}

  const Array& val() const;
  const Array& grad() const;
  bool needs_grad() const;
  std::size_t rows() const { return val().rows; }
  std::size_t cols() const { return val().cols; }
  double item() const;  // value of a [1 x 1] node

  Tape* tape() const { return tape_; }
  std::size_t index() const { return idx_; }
  explicit operator bool() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t idx_ = 0;
};

class Tape {
 public:
  // backward(tape, gy) accumulates gy into the parents' grad buffers.
  using BackFn = std::function<void(Tape&, const Array&)>;

  struct Node {
    Array value;
    Array grad;  // allocated only when needs_grad
    bool needs_grad = false;
    BackFn backward;
  };

  Var leaf(Array v, bool requires_grad = false);
  Var constant(Array v) { return leaf(std::move(v), false); }
  Var constant(double v) { return leaf(Array::scalar(v), false); }

  Var record(Array value, bool needs_grad, BackFn bwd);

  // Seeds d(loss)/d(loss) = 1 on a [1 x 1] node and runs the reverse sweep.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  Node& node(std::size_t i) { return nodes_[i]; }
  const Node& node(std::size_t i) const { return nodes_[i]; }

  // Adds gy into node i's grad buffer (no-op for non-grad nodes).
  void accumulate(std::size_t i, const Array& gy);

 private:
  std::vector<Node> nodes_;
};

// ---- ops -----------------------------------------------------------------
// All ops validate shapes (ShapeError) and that operands share one tape
// (ValueError). Results require grad iff any differentiable input does.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);   // elementwise
Var div(Var a, Var b);   // elementwise
Var minimum(Var a, Var b);  // subgradient goes to a on ties
Var maximum(Var a, Var b);  // subgradient goes to a on ties
Var neg(Var a);
Var add_const(Var a, double c);
Var mul_const(Var a, double c);
Var mul_array(Var a, Array c);  // elementwise by a constant array

Var matmul(Var a, Var b);     // [m,k]x[k,n]
Var matmul_nt(Var a, Var b);  // [m,k]x[n,k]^T -> [m,n]
Var add_rowvec(Var a, Var v);  // [m,n] + [1,n]
Var add_colvec(Var a, Var v);  // [m,n] + [m,1]
Var mul_colvec(Var a, Var v);  // row i scaled by v[i]
Var affine(Var x, Var w, Var b);  // x*W + b, b is [1,n]

Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var abs(Var a);
Var sqrt(Var a);
Var pow_const(Var a, double p);
Var clamp(Var a, double lo, double hi);  // gradient passes on [lo, hi]
Var logit(Var a);  // log(x/(1-x)); domain error outside (0,1)

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
// Row softmax; mask entries of 0 force the output to exactly 0. Pass an empty
// mask for no masking.
Var softmax_rows(Var x, std::vector<unsigned char> mask = {});

Var sum(Var a);        // -> [1,1]
Var mean(Var a);       // -> [1,1]
Var sum_cols(Var a);   // [m,n] -> [m,1], row sums
Var mean_rows(Var a);  // [m,n] -> [1,n], column means
Var logsumexp_rows(Var a);  // [m,n] -> [m,1]

// Row-major reinterpretation; element count must match.
Var reshape(Var a, std::size_t rows, std::size_t cols);

Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t r0, std::size_t r1);  // [r0, r1)
Var slice_cols(Var a, std::size_t c0, std::size_t c1);
Var take_rows(Var a, std::vector<std::size_t> idx);

// Rows of feat [t,d] sampled at fractional positions pos [s,1]. With clamping
// on, positions are clamped to [0, t-1] and clamped positions get zero
// position-gradient; with clamping off, out-of-range positions are an error.
Var interp_rows(Var feat, Var pos, bool clamp_positions = true);
// Fused deformable sampling; pos and w are [rows, heads*k].
Var deform_sample(Var value, Var pos, Var w, std::size_t heads, std::size_t k);

Var l2_normalize_rows(Var a, double eps = 1e-12);

}  // namespace tad
