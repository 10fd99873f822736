#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tad/kernels.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace tad::kernels;

namespace {

std::vector<double> randu(std::size_t n, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Positions that stay away from integer lattice points (interp has kinks there).
std::vector<double> rand_pos(std::size_t n, unsigned seed, std::size_t t) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<std::size_t> lo(0, t - 2);
  std::uniform_real_distribution<double> fr(0.2, 0.8);
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(lo(rng)) + fr(rng);
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

double rel_err(double a, double b) {
  const double m = std::max(std::abs(a), std::abs(b));
  return m == 0.0 ? 0.0 : std::abs(a - b) / m;
}

}  // namespace

TEST_CASE("matmul matches a hand example") {
  // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
  std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8}, y(4);
  matmul(a.data(), b.data(), y.data(), 2, 2, 2);
  CHECK(y == std::vector<double>{19, 22, 43, 50});
  matmul(a.data(), b.data(), y.data(), 2, 2, 2, /*accumulate=*/true);
  CHECK(y == std::vector<double>{38, 44, 86, 100});
}

TEST_CASE("matmul variants agree with naive transposes") {
  const std::size_t m = 7, k = 5, n = 6;
  auto a = randu(m * k, 1);
  auto b = randu(k * n, 2);
  std::vector<double> y0(m * n), y1(m * n), y2(m * n);
  matmul(a.data(), b.data(), y0.data(), m, k, n);

  // b stored transposed [n x k]
  std::vector<double> bt(n * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];
  matmul_nt(a.data(), bt.data(), y1.data(), m, k, n);

  // a stored transposed [k x m]
  std::vector<double> at(k * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) at[j * m + i] = a[i * k + j];
  matmul_tn(at.data(), b.data(), y2.data(), m, k, n);

  for (std::size_t i = 0; i < m * n; ++i) {
    CHECK(rel_err(y0[i], y1[i]) < 1e-12);
    CHECK(rel_err(y0[i], y2[i]) < 1e-12);
  }
}

TEST_CASE("parallel kernels are bit-identical to serial references") {
  set_threads(3);  // oversubscribe the core: determinism must not depend on it
  set_parallel(true);

  const std::size_t m = 37, k = 41, n = 43;
  auto a = randu(m * k, 3);
  auto b = randu(k * n, 4);
  auto bt = randu(n * k, 5);
  auto at = randu(k * m, 6);

  std::vector<double> y(m * n), yr(m * n);
  matmul(a.data(), b.data(), y.data(), m, k, n);
  matmul_ref(a.data(), b.data(), yr.data(), m, k, n);
  CHECK(bit_equal(y, yr));

  matmul_nt(a.data(), bt.data(), y.data(), m, k, n);
  matmul_nt_ref(a.data(), bt.data(), yr.data(), m, k, n);
  CHECK(bit_equal(y, yr));

  matmul_tn(at.data(), b.data(), y.data(), m, k, n);
  matmul_tn_ref(at.data(), b.data(), yr.data(), m, k, n);
  CHECK(bit_equal(y, yr));

  const std::size_t rows = 130, d = 160;
  auto x = randu(rows * d, 7);
  auto gamma = randu(d, 8, 0.5, 1.5);
  auto beta = randu(d, 9);
  std::vector<double> ln(rows * d), lnr(rows * d), xh(rows * d), xhr(rows * d),
      inv(rows), invr(rows);
  layer_norm_fwd(x.data(), gamma.data(), beta.data(), ln.data(), xh.data(),
                 inv.data(), rows, d, 1e-5);
  layer_norm_fwd_ref(x.data(), gamma.data(), beta.data(), lnr.data(), xhr.data(),
                     invr.data(), rows, d, 1e-5);
  CHECK(bit_equal(ln, lnr));
  CHECK(bit_equal(xh, xhr));
  CHECK(bit_equal(inv, invr));

  auto gy = randu(rows * d, 10);
  std::vector<double> gx(rows * d, 0.0), gxr(rows * d, 0.0), gg(d, 0.0), ggr(d, 0.0),
      gb(d, 0.0), gbr(d, 0.0);
  layer_norm_bwd(gy.data(), xh.data(), inv.data(), gamma.data(), gx.data(),
                 gg.data(), gb.data(), rows, d);
  layer_norm_bwd_ref(gy.data(), xh.data(), inv.data(), gamma.data(), gxr.data(),
                     ggr.data(), gbr.data(), rows, d);
  CHECK(bit_equal(gx, gxr));
  CHECK(bit_equal(gg, ggr));
  CHECK(bit_equal(gb, gbr));

  std::vector<unsigned char> mask(rows * d);
  std::mt19937 mrng(11);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) mask[i * d + j] = mrng() % 3 != 0;
    mask[i * d] = 1;  // keep every row valid
  }
  std::vector<double> sm(rows * d), smr(rows * d);
  softmax_fwd(x.data(), mask.data(), sm.data(), rows, d);
  softmax_fwd_ref(x.data(), mask.data(), smr.data(), rows, d);
  CHECK(bit_equal(sm, smr));

  std::fill(gx.begin(), gx.end(), 0.0);
  std::fill(gxr.begin(), gxr.end(), 0.0);
  softmax_bwd(sm.data(), gy.data(), gx.data(), rows, d);
  softmax_bwd_ref(sm.data(), gy.data(), gxr.data(), rows, d);
  CHECK(bit_equal(gx, gxr));

  const std::size_t t = 50, s = 400;
  auto feat = randu(t * d, 12);
  auto pos = rand_pos(s, 13, t);
  std::vector<double> out(s * d), outr(s * d);
  interp_rows_fwd(feat.data(), pos.data(), out.data(), t, d, s, true);
  interp_rows_fwd_ref(feat.data(), pos.data(), outr.data(), t, d, s, true);
  CHECK(bit_equal(out, outr));

  auto gout = randu(s * d, 14);
  std::vector<double> gf(t * d, 0.0), gfr(t * d, 0.0), gp(s, 0.0), gpr(s, 0.0);
  interp_rows_bwd(feat.data(), pos.data(), gout.data(), gf.data(), gp.data(), t, d, s, true);
  interp_rows_bwd_ref(feat.data(), pos.data(), gout.data(), gfr.data(), gpr.data(), t, d, s, true);
  CHECK(bit_equal(gf, gfr));
  CHECK(bit_equal(gp, gpr));

  const std::size_t heads = 8, kk = 4, drows = 70;
  auto dpos = rand_pos(drows * heads * kk, 15, t);
  auto dw = randu(drows * heads * kk, 16, 0.0, 1.0);
  std::vector<double> dout(drows * d), doutr(drows * d);
  deform_sample_fwd(feat.data(), dpos.data(), dw.data(), dout.data(), t, d, drows, heads, kk);
  deform_sample_fwd_ref(feat.data(), dpos.data(), dw.data(), doutr.data(), t, d, drows, heads, kk);
  CHECK(bit_equal(dout, doutr));

  auto dgout = randu(drows * d, 17);
  std::vector<double> gv(t * d, 0.0), gvr(t * d, 0.0), gdp(dpos.size(), 0.0),
      gdpr(dpos.size(), 0.0), gdw(dw.size(), 0.0), gdwr(dw.size(), 0.0);
  deform_sample_bwd(feat.data(), dpos.data(), dw.data(), dgout.data(), gv.data(),
                    gdp.data(), gdw.data(), t, d, drows, heads, kk);
  deform_sample_bwd_ref(feat.data(), dpos.data(), dw.data(), dgout.data(), gvr.data(),
                        gdpr.data(), gdwr.data(), t, d, drows, heads, kk);
  CHECK(bit_equal(gv, gvr));
  CHECK(bit_equal(gdp, gdpr));
  CHECK(bit_equal(gdw, gdwr));

  set_parallel(false);
  std::vector<double> yserial(m * n);
  matmul(a.data(), b.data(), yserial.data(), m, k, n);
  matmul_ref(a.data(), b.data(), yr.data(), m, k, n);
  CHECK(bit_equal(yserial, yr));
  set_parallel(true);
}

TEST_CASE("layer norm rows are standardized then affine-mapped") {
  const std::size_t rows = 4, d = 64;
  auto x = randu(rows * d, 21, -3.0, 5.0);
  std::vector<double> gamma(d, 1.0), beta(d, 0.0);
  std::vector<double> y(rows * d), xh(rows * d), inv(rows);
  layer_norm_fwd(x.data(), gamma.data(), beta.data(), y.data(), xh.data(), inv.data(),
                 rows, d, 1e-5);
  for (std::size_t i = 0; i < rows; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += y[i * d + j];
    mean /= d;
    for (std::size_t j = 0; j < d; ++j) var += (y[i * d + j] - mean) * (y[i * d + j] - mean);
    var /= d;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(var - 1.0) < 1e-3);  // eps shrinks variance slightly
  }
}

TEST_CASE("masked softmax zeroes masked entries and normalizes the rest") {
  std::vector<double> x{1.0, 2.0, 3.0, 50.0};
  std::vector<unsigned char> mask{1, 1, 1, 0};
  std::vector<double> y(4);
  softmax_fwd(x.data(), mask.data(), y.data(), 1, 4);
  CHECK(y[3] == 0.0);
  CHECK(std::abs(y[0] + y[1] + y[2] - 1.0) < 1e-12);
  CHECK(y[2] > y[1]);
  CHECK(y[1] > y[0]);

  std::vector<double> yn(4);
  softmax_fwd(x.data(), nullptr, yn.data(), 1, 4);
  double s = yn[0] + yn[1] + yn[2] + yn[3];
  CHECK(std::abs(s - 1.0) < 1e-12);
  CHECK(yn[3] > 0.99);
}

TEST_CASE("softmax is invariant to a constant shift") {
  const std::size_t d = 9;
  auto x = randu(d, 22);
  auto xs = x;
  for (auto& v : xs) v += 123.0;
  std::vector<double> y(d), ys(d);
  softmax_fwd(x.data(), nullptr, y.data(), 1, d);
  softmax_fwd(xs.data(), nullptr, ys.data(), 1, d);
  for (std::size_t j = 0; j < d; ++j) CHECK(rel_err(y[j], ys[j]) < 1e-12);
}

TEST_CASE("interp_rows reproduces rows at integer positions and blends between") {
  const std::size_t t = 5, d = 3;
  auto feat = randu(t * d, 23);
  std::vector<double> pos{2.0, 1.5, -4.0, 99.0, 4.0};
  std::vector<double> out(pos.size() * d);
  interp_rows_fwd(feat.data(), pos.data(), out.data(), t, d, pos.size(), true);
  for (std::size_t c = 0; c < d; ++c) {
    CHECK(out[0 * d + c] == feat[2 * d + c]);
    CHECK(out[1 * d + c] == doctest::Approx(0.5 * feat[1 * d + c] + 0.5 * feat[2 * d + c]));
    CHECK(out[2 * d + c] == feat[0 * d + c]);         // clamped low
    CHECK(out[3 * d + c] == feat[(t - 1) * d + c]);   // clamped high
    CHECK(out[4 * d + c] == feat[(t - 1) * d + c]);   // exact top edge
  }
}

TEST_CASE("deform_sample composes weighted interpolations per head slice") {
  const std::size_t t = 6, d = 8, heads = 2, k = 3, rows = 4;
  auto value = randu(t * d, 24);
  auto pos = rand_pos(rows * heads * k, 25, t);
  auto w = randu(rows * heads * k, 26, 0.0, 1.0);
  std::vector<double> out(rows * d);
  deform_sample_fwd(value.data(), pos.data(), w.data(), out.data(), t, d, rows, heads, k);

  const std::size_t dh = d / heads;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t c = 0; c < dh; ++c) {
        double want = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const std::size_t idx = (i * heads + h) * k + kk;
          const double p = pos[idx];
          const auto lo = static_cast<std::size_t>(p);
          const double fr = p - static_cast<double>(lo);
          const std::size_t col = h * dh + c;
          want += w[idx] * ((1 - fr) * value[lo * d + col] + fr * value[(lo + 1) * d + col]);
        }
        CHECK(out[i * d + h * dh + c] == doctest::Approx(want).epsilon(1e-12));
      }
}

// --- finite-difference oracles for the backward kernels ------------------

namespace {

// L = sum(w ⊙ f(x)); returns dL/dx computed by central differences.
template <typename Fwd>
std::vector<double> fd_grad(std::vector<double> x, const std::vector<double>& lw, Fwd fwd,
                            double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    auto yp = fwd(x);
    x[i] = keep - h;
    auto ym = fwd(x);
    x[i] = keep;
    double lp = 0.0, lm = 0.0;
    for (std::size_t j = 0; j < lw.size(); ++j) {
      lp += lw[j] * yp[j];
      lm += lw[j] * ym[j];
    }
    g[i] = (lp - lm) / (2 * h);
  }
  return g;
}

void check_close(const std::vector<double>& a, const std::vector<double>& fd, double tol) {
  REQUIRE(a.size() == fd.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i]) < 1e-9 && std::abs(fd[i]) < 1e-9) continue;
    CHECK(rel_err(a[i], fd[i]) < tol);
  }
}

}  // namespace

TEST_CASE("layer_norm_bwd matches finite differences") {
  const std::size_t rows = 3, d = 7;
  auto x = randu(rows * d, 31);
  auto gamma = randu(d, 32, 0.5, 1.5);
  auto beta = randu(d, 33);
  auto lw = randu(rows * d, 34);

  std::vector<double> y(rows * d), xh(rows * d), inv(rows);
  layer_norm_fwd(x.data(), gamma.data(), beta.data(), y.data(), xh.data(), inv.data(),
                 rows, d, 1e-5);
  std::vector<double> gx(rows * d, 0.0), gg(d, 0.0), gb(d, 0.0);
  layer_norm_bwd(lw.data(), xh.data(), inv.data(), gamma.data(), gx.data(), gg.data(),
                 gb.data(), rows, d);

  auto fwd_x = [&](const std::vector<double>& xv) {
    std::vector<double> yy(rows * d), xx(rows * d), ii(rows);
    layer_norm_fwd(xv.data(), gamma.data(), beta.data(), yy.data(), xx.data(), ii.data(),
                   rows, d, 1e-5);
    return yy;
  };
  check_close(gx, fd_grad(x, lw, fwd_x), 1e-6);

  auto fwd_g = [&](const std::vector<double>& gv) {
    std::vector<double> yy(rows * d), xx(rows * d), ii(rows);
    layer_norm_fwd(x.data(), gv.data(), beta.data(), yy.data(), xx.data(), ii.data(),
                   rows, d, 1e-5);
    return yy;
  };
  check_close(gg, fd_grad(gamma, lw, fwd_g), 1e-6);

  auto fwd_b = [&](const std::vector<double>& bv) {
    std::vector<double> yy(rows * d), xx(rows * d), ii(rows);
    layer_norm_fwd(x.data(), gamma.data(), bv.data(), yy.data(), xx.data(), ii.data(),
                   rows, d, 1e-5);
    return yy;
  };
  check_close(gb, fd_grad(beta, lw, fwd_b), 1e-6);
}

TEST_CASE("softmax_bwd matches finite differences") {
  const std::size_t rows = 2, d = 6;
  auto x = randu(rows * d, 41);
  std::vector<unsigned char> mask{1, 1, 0, 1, 1, 1, 1, 0, 1, 1, 0, 1};
  auto lw = randu(rows * d, 42);
  // Masked outputs are identically zero; their loss weight must not matter.
  std::vector<double> y(rows * d);
  softmax_fwd(x.data(), mask.data(), y.data(), rows, d);
  std::vector<double> gx(rows * d, 0.0);
  softmax_bwd(y.data(), lw.data(), gx.data(), rows, d);

  auto fwd = [&](const std::vector<double>& xv) {
    std::vector<double> yy(rows * d);
    softmax_fwd(xv.data(), mask.data(), yy.data(), rows, d);
    return yy;
  };
  check_close(gx, fd_grad(x, lw, fwd), 1e-6);
}

TEST_CASE("interp_rows_bwd matches finite differences") {
  const std::size_t t = 8, d = 4, s = 6;
  auto feat = randu(t * d, 51);
  auto pos = rand_pos(s, 52, t);
  pos[4] = -2.5;  // clamped: zero position gradient, boundary-row feature gradient
  auto lw = randu(s * d, 53);

  std::vector<double> gf(t * d, 0.0), gp(s, 0.0);
  interp_rows_bwd(feat.data(), pos.data(), lw.data(), gf.data(), gp.data(), t, d, s, true);

  auto fwd_f = [&](const std::vector<double>& fv) {
    std::vector<double> o(s * d);
    interp_rows_fwd(fv.data(), pos.data(), o.data(), t, d, s, true);
    return o;
  };
  check_close(gf, fd_grad(feat, lw, fwd_f), 1e-6);

  auto fwd_p = [&](const std::vector<double>& pv) {
    std::vector<double> o(s * d);
    interp_rows_fwd(feat.data(), pv.data(), o.data(), t, d, s, true);
    return o;
  };
  check_close(gp, fd_grad(pos, lw, fwd_p), 1e-6);
}

TEST_CASE("deform_sample_bwd matches finite differences") {
  const std::size_t t = 7, d = 6, heads = 3, k = 2, rows = 4;
  auto value = randu(t * d, 61);
  auto pos = rand_pos(rows * heads * k, 62, t);
  pos[3] = 9.75;  // clamped high
  auto w = randu(rows * heads * k, 63, 0.1, 1.0);
  auto lw = randu(rows * d, 64);

  std::vector<double> gv(t * d, 0.0), gp(pos.size(), 0.0), gw(w.size(), 0.0);
  deform_sample_bwd(value.data(), pos.data(), w.data(), lw.data(), gv.data(), gp.data(),
                    gw.data(), t, d, rows, heads, k);

  auto fwd_v = [&](const std::vector<double>& vv) {
    std::vector<double> o(rows * d);
    deform_sample_fwd(vv.data(), pos.data(), w.data(), o.data(), t, d, rows, heads, k);
    return o;
  };
  check_close(gv, fd_grad(value, lw, fwd_v), 1e-6);

  auto fwd_p = [&](const std::vector<double>& pv) {
    std::vector<double> o(rows * d);
    deform_sample_fwd(value.data(), pv.data(), w.data(), o.data(), t, d, rows, heads, k);
    return o;
  };
  check_close(gp, fd_grad(pos, lw, fwd_p), 1e-6);

  auto fwd_w = [&](const std::vector<double>& wv) {
    std::vector<double> o(rows * d);
    deform_sample_fwd(value.data(), pos.data(), wv.data(), o.data(), t, d, rows, heads, k);
    return o;
  };
  check_close(gw, fd_grad(w, lw, fwd_w), 1e-6);
}
