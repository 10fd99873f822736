#include "tad/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

// The production kernels run the exact same per-row/per-column bodies as the
// serial references, just spread over an OpenMP static schedule. Reductions
// that cross the parallel dimension are re-sliced (e.g. gradient columns
// instead of rows) so no element is written by two threads and every sum keeps
// its serial order.

namespace tad::kernels {

namespace {

std::atomic<bool> g_parallel{true};
constexpr std::size_t kGrain = 1u << 14;  // rough op count before threads pay off

inline bool use_par(std::size_t work) {
  return g_parallel.load(std::memory_order_relaxed) && work >= kGrain;
}

inline void matmul_row(const double* a, const double* b, double* y,
                       std::size_t i, std::size_t k, std::size_t n, bool acc) {
  double* yi = y + i * n;
  if (!acc) std::fill(yi, yi + n, 0.0);
  const double* ai = a + i * k;
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double av = ai[kk];
    const double* bk = b + kk * n;
    for (std::size_t j = 0; j < n; ++j) yi[j] += av * bk[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* y,
                          std::size_t i, std::size_t k, std::size_t n, bool acc) {
  double* yi = y + i * n;
  const double* ai = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const double* bj = b + j * k;
    double s = 0.0;
    for (std::size_t kk = 0; kk < k; ++kk) s += ai[kk] * bj[kk];
    yi[j] = acc ? yi[j] + s : s;
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* y,
                          std::size_t i, std::size_t m, std::size_t k,
                          std::size_t n, bool acc) {
  double* yi = y + i * n;
  if (!acc) std::fill(yi, yi + n, 0.0);
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double av = a[kk * m + i];
    const double* bk = b + kk * n;
    for (std::size_t j = 0; j < n; ++j) yi[j] += av * bk[j];
  }
}

inline void layer_norm_row(const double* x, const double* gamma, const double* beta,
                           double* y, double* xhat, double* inv_std,
                           std::size_t i, std::size_t d, double eps) {
  const double* xi = x + i * d;
  double mean = 0.0;
  for (std::size_t j = 0; j < d; ++j) mean += xi[j];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double c = xi[j] - mean;
    var += c * c;
  }
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + eps);
  inv_std[i] = inv;
  for (std::size_t j = 0; j < d; ++j) {
    const double xh = (xi[j] - mean) * inv;
    xhat[i * d + j] = xh;
    y[i * d + j] = gamma[j] * xh + beta[j];
  }
}

inline void layer_norm_gx_row(const double* gy, const double* xhat, const double* inv_std,
                              const double* gamma, double* gx,
                              std::size_t i, std::size_t d) {
  const double* gyi = gy + i * d;
  const double* xhi = xhat + i * d;
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double gxh = gyi[j] * gamma[j];
    s1 += gxh;
    s2 += gxh * xhi[j];
  }
  const double dn = static_cast<double>(d);
  const double inv = inv_std[i];
  for (std::size_t j = 0; j < d; ++j) {
    const double gxh = gyi[j] * gamma[j];
    gx[i * d + j] += inv * (gxh - s1 / dn - xhi[j] * s2 / dn);
  }
}

inline void layer_norm_gparam_col(const double* gy, const double* xhat,
                                  double* ggamma, double* gbeta,
                                  std::size_t j, std::size_t rows, std::size_t d) {
  double sg = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    sg += gy[i * d + j] * xhat[i * d + j];
    sb += gy[i * d + j];
  }
  ggamma[j] += sg;
  gbeta[j] += sb;
}

inline void softmax_row(const double* x, const unsigned char* mask, double* y,
                        std::size_t i, std::size_t d) {
  const double* xi = x + i * d;
  const unsigned char* mi = mask ? mask + i * d : nullptr;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < d; ++j)
    if (!mi || mi[j]) mx = std::max(mx, xi[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    if (!mi || mi[j]) {
      const double e = std::exp(xi[j] - mx);
      y[i * d + j] = e;
      sum += e;
    } else {
      y[i * d + j] = 0.0;
    }
  }
  if (sum > 0.0)
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] /= sum;
}

inline void softmax_bwd_row(const double* y, const double* gy, double* gx,
                            std::size_t i, std::size_t d) {
  const double* yi = y + i * d;
  const double* gyi = gy + i * d;
  double dot = 0.0;
  for (std::size_t j = 0; j < d; ++j) dot += yi[j] * gyi[j];
  for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += yi[j] * (gyi[j] - dot);
}

// Shared sample-point resolution: clamp, split into floor row + fraction.
struct Lerp {
  std::size_t lo, hi;
  double fr;
  bool clamped;  // raw position strictly outside [0, t-1]
};

inline Lerp resolve(double p, std::size_t t) {
  Lerp r{};
  const double top = static_cast<double>(t - 1);
  r.clamped = p < 0.0 || p > top;
  const double q = std::min(std::max(p, 0.0), top);
  std::size_t lo = static_cast<std::size_t>(q);
  if (lo >= t - 1) lo = t >= 2 ? t - 2 : 0;
  r.lo = lo;
  r.hi = t >= 2 ? lo + 1 : 0;
  r.fr = q - static_cast<double>(lo);
  return r;
}

inline void interp_row(const double* feat, const double* pos, double* out,
                       std::size_t i, std::size_t t, std::size_t d, bool clamp) {
  const Lerp r = resolve(pos[i], t);
  (void)clamp;
  const double* flo = feat + r.lo * d;
  const double* fhi = feat + r.hi * d;
  for (std::size_t c = 0; c < d; ++c)
    out[i * d + c] = (1.0 - r.fr) * flo[c] + r.fr * fhi[c];
}

inline void deform_row(const double* value, const double* pos, const double* w,
                       double* out, std::size_t i, std::size_t t, std::size_t d,
                       std::size_t heads, std::size_t k) {
  double* oi = out + i * d;
  std::fill(oi, oi + d, 0.0);
  const std::size_t dh = d / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const std::size_t idx = (i * heads + h) * k + kk;
      const Lerp r = resolve(pos[idx], t);
      const double wv = w[idx];
      const double* vlo = value + r.lo * d + c0;
      const double* vhi = value + r.hi * d + c0;
      for (std::size_t c = 0; c < dh; ++c)
        oi[c0 + c] += wv * ((1.0 - r.fr) * vlo[c] + r.fr * vhi[c]);
    }
  }
}

}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }
void set_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

void matmul_ref(const double* a, const double* b, double* y,
                std::size_t m, std::size_t k, std::size_t n, bool acc) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a, b, y, i, k, n, acc);
}

void matmul(const double* a, const double* b, double* y,
            std::size_t m, std::size_t k, std::size_t n, bool acc) {
  const bool par = use_par(m * k * n);
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < m; ++i) matmul_row(a, b, y, i, k, n, acc);
}

void matmul_nt_ref(const double* a, const double* b, double* y,
                   std::size_t m, std::size_t k, std::size_t n, bool acc) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(a, b, y, i, k, n, acc);
}

void matmul_nt(const double* a, const double* b, double* y,
               std::size_t m, std::size_t k, std::size_t n, bool acc) {
  const bool par = use_par(m * k * n);
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(a, b, y, i, k, n, acc);
}

void matmul_tn_ref(const double* a, const double* b, double* y,
                   std::size_t m, std::size_t k, std::size_t n, bool acc) {
  for (std::size_t i = 0; i < m; ++i) matmul_tn_row(a, b, y, i, m, k, n, acc);
}

void matmul_tn(const double* a, const double* b, double* y,
               std::size_t m, std::size_t k, std::size_t n, bool acc) {
  const bool par = use_par(m * k * n);
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < m; ++i) matmul_tn_row(a, b, y, i, m, k, n, acc);
}

void layer_norm_fwd_ref(const double* x, const double* gamma, const double* beta,
                        double* y, double* xhat, double* inv_std,
                        std::size_t rows, std::size_t d, double eps) {
  for (std::size_t i = 0; i < rows; ++i)
    layer_norm_row(x, gamma, beta, y, xhat, inv_std, i, d, eps);
}

void layer_norm_fwd(const double* x, const double* gamma, const double* beta,
                    double* y, double* xhat, double* inv_std,
                    std::size_t rows, std::size_t d, double eps) {
  const bool par = use_par(rows * d);
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < rows; ++i)
    layer_norm_row(x, gamma, beta, y, xhat, inv_std, i, d, eps);
}

void layer_norm_bwd_ref(const double* gy, const double* xhat, const double* inv_std,
                        const double* gamma, double* gx, double* ggamma, double* gbeta,
                        std::size_t rows, std::size_t d) {
  for (std::size_t i = 0; i < rows; ++i)
    layer_norm_gx_row(gy, xhat, inv_std, gamma, gx, i, d);
  for (std::size_t j = 0; j < d; ++j)
    layer_norm_gparam_col(gy, xhat, ggamma, gbeta, j, rows, d);
}

void layer_norm_bwd(const double* gy, const double* xhat, const double* inv_std,
                    const double* gamma, double* gx, double* ggamma, double* gbeta,
                    std::size_t rows, std::size_t d) {
  const bool par = use_par(rows * d);
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < rows; ++i)
    layer_norm_gx_row(gy, xhat, inv_std, gamma, gx, i, d);
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t j = 0; j < d; ++j)
    layer_norm_gparam_col(gy, xhat, ggamma, gbeta, j, rows, d);
}

void softmax_fwd_ref(const double* x, const unsigned char* mask, double* y,
                     std::size_t rows, std::size_t d) {
  for (std::size_t i = 0; i < rows; ++i) softmax_row(x, mask, y, i, d);
}

void softmax_fwd(const double* x, const unsigned char* mask, double* y,
                 std::size_t rows, std::size_t d) {
  const bool par = use_par(rows * d);
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < rows; ++i) softmax_row(x, mask, y, i, d);
}

void softmax_bwd_ref(const double* y, const double* gy, double* gx,
                     std::size_t rows, std::size_t d) {
  for (std::size_t i = 0; i < rows; ++i) softmax_bwd_row(y, gy, gx, i, d);
}

void softmax_bwd(const double* y, const double* gy, double* gx,
                 std::size_t rows, std::size_t d) {
  const bool par = use_par(rows * d);
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < rows; ++i) softmax_bwd_row(y, gy, gx, i, d);
}

void interp_rows_fwd_ref(const double* feat, const double* pos, double* out,
                         std::size_t t, std::size_t d, std::size_t s, bool clamp) {
  for (std::size_t i = 0; i < s; ++i) interp_row(feat, pos, out, i, t, d, clamp);
}

void interp_rows_fwd(const double* feat, const double* pos, double* out,
                     std::size_t t, std::size_t d, std::size_t s, bool clamp) {
  const bool par = use_par(s * d);
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < s; ++i) interp_row(feat, pos, out, i, t, d, clamp);
}

void interp_rows_bwd_ref(const double* feat, const double* pos, const double* gout,
                         double* gfeat, double* gpos,
                         std::size_t t, std::size_t d, std::size_t s, bool clamp) {
  (void)clamp;
  if (gpos) {
    for (std::size_t i = 0; i < s; ++i) {
      const Lerp r = resolve(pos[i], t);
      if (r.clamped || t < 2) continue;
      double g = 0.0;
      for (std::size_t c = 0; c < d; ++c)
        g += gout[i * d + c] * (feat[r.hi * d + c] - feat[r.lo * d + c]);
      gpos[i] += g;
    }
  }
  if (gfeat) {
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t i = 0; i < s; ++i) {
        const Lerp r = resolve(pos[i], t);
        gfeat[r.lo * d + c] += (1.0 - r.fr) * gout[i * d + c];
        if (r.hi != r.lo) gfeat[r.hi * d + c] += r.fr * gout[i * d + c];
      }
    }
  }
}

void interp_rows_bwd(const double* feat, const double* pos, const double* gout,
                     double* gfeat, double* gpos,
                     std::size_t t, std::size_t d, std::size_t s, bool clamp) {
  (void)clamp;
  const bool par = use_par(s * d);
  if (gpos) {
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t i = 0; i < s; ++i) {
      const Lerp r = resolve(pos[i], t);
      if (r.clamped || t < 2) continue;
      double g = 0.0;
      for (std::size_t c = 0; c < d; ++c)
        g += gout[i * d + c] * (feat[r.hi * d + c] - feat[r.lo * d + c]);
      gpos[i] += g;
    }
  }
  if (gfeat) {
    // Column-sliced: each thread owns a column of gfeat, rows stay in order.
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t i = 0; i < s; ++i) {
        const Lerp r = resolve(pos[i], t);
        gfeat[r.lo * d + c] += (1.0 - r.fr) * gout[i * d + c];
        if (r.hi != r.lo) gfeat[r.hi * d + c] += r.fr * gout[i * d + c];
      }
    }
  }
}

void deform_sample_fwd_ref(const double* value, const double* pos, const double* w,
                           double* out, std::size_t t, std::size_t d, std::size_t rows,
                           std::size_t heads, std::size_t k) {
  for (std::size_t i = 0; i < rows; ++i)
    deform_row(value, pos, w, out, i, t, d, heads, k);
}

void deform_sample_fwd(const double* value, const double* pos, const double* w,
                       double* out, std::size_t t, std::size_t d, std::size_t rows,
                       std::size_t heads, std::size_t k) {
  const bool par = use_par(rows * d * k);
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < rows; ++i)
    deform_row(value, pos, w, out, i, t, d, heads, k);
}

namespace {

// gpos / gw are owned per output row; gvalue is column-sliced.
inline void deform_bwd_posw_row(const double* value, const double* pos, const double* w,
                                const double* gout, double* gpos, double* gw,
                                std::size_t i, std::size_t t, std::size_t d,
                                std::size_t heads, std::size_t k) {
  const std::size_t dh = d / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const std::size_t idx = (i * heads + h) * k + kk;
      const Lerp r = resolve(pos[idx], t);
      const double* vlo = value + r.lo * d + c0;
      const double* vhi = value + r.hi * d + c0;
      const double* go = gout + i * d + c0;
      double gdotdiff = 0.0, gdotlerp = 0.0;
      for (std::size_t c = 0; c < dh; ++c) {
        gdotdiff += go[c] * (vhi[c] - vlo[c]);
        gdotlerp += go[c] * ((1.0 - r.fr) * vlo[c] + r.fr * vhi[c]);
      }
      if (gpos && !r.clamped && t >= 2) gpos[idx] += w[idx] * gdotdiff;
      if (gw) gw[idx] += gdotlerp;
    }
  }
}

inline void deform_bwd_value_col(const double* pos, const double* w, const double* gout,
                                 double* gvalue, std::size_t c, std::size_t t,
                                 std::size_t d, std::size_t rows, std::size_t heads,
                                 std::size_t k) {
  const std::size_t dh = d / heads;
  const std::size_t h = c / dh;
  for (std::size_t i = 0; i < rows; ++i) {
    const double go = gout[i * d + c];
    for (std::size_t kk = 0; kk < k; ++kk) {
      const std::size_t idx = (i * heads + h) * k + kk;
      const Lerp r = resolve(pos[idx], t);
      const double wg = w[idx] * go;
      gvalue[r.lo * d + c] += (1.0 - r.fr) * wg;
      if (r.hi != r.lo) gvalue[r.hi * d + c] += r.fr * wg;
    }
  }
}

}  // namespace

void deform_sample_bwd_ref(const double* value, const double* pos, const double* w,
                           const double* gout, double* gvalue, double* gpos, double* gw,
                           std::size_t t, std::size_t d, std::size_t rows,
                           std::size_t heads, std::size_t k) {
  if (gpos || gw)
    for (std::size_t i = 0; i < rows; ++i)
      deform_bwd_posw_row(value, pos, w, gout, gpos, gw, i, t, d, heads, k);
  if (gvalue)
    for (std::size_t c = 0; c < d; ++c)
      deform_bwd_value_col(pos, w, gout, gvalue, c, t, d, rows, heads, k);
}

void deform_sample_bwd(const double* value, const double* pos, const double* w,
                       const double* gout, double* gvalue, double* gpos, double* gw,
                       std::size_t t, std::size_t d, std::size_t rows,
                       std::size_t heads, std::size_t k) {
  const bool par = use_par(rows * d * k);
  if (gpos || gw) {
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t i = 0; i < rows; ++i)
      deform_bwd_posw_row(value, pos, w, gout, gpos, gw, i, t, d, heads, k);
  }
  if (gvalue) {
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t c = 0; c < d; ++c)
      deform_bwd_value_col(pos, w, gout, gvalue, c, t, d, rows, heads, k);
  }
}

}  // namespace tad::kernels
