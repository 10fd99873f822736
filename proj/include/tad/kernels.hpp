#pragma once

#include <cstddef>

// Dense numeric kernels. Every kernel comes in two builds: a plain serial
// reference (`*_ref`) and the production version, which runs the same loop
// body under OpenMP when the problem is large enough. Each output element is
// owned by exactly one thread and its reduction order is fixed, so the two
// builds produce bit-identical results and runs are reproducible for any
// thread count.

namespace tad::kernels {

bool parallel_enabled();
void set_parallel(bool on);
void set_threads(int n);  // 0 keeps the OpenMP default

// y[m x n] = a[m x k] * b[k x n]; += when accumulate.
void matmul(const double* a, const double* b, double* y,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_ref(const double* a, const double* b, double* y,
                std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// y[m x n] = a[m x k] * b[n x k]^T
void matmul_nt(const double* a, const double* b, double* y,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_nt_ref(const double* a, const double* b, double* y,
                   std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// y[m x n] = a[k x m]^T * b[k x n]
void matmul_tn(const double* a, const double* b, double* y,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_tn_ref(const double* a, const double* b, double* y,
                   std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// Row-wise layer norm over width-d rows; xhat and inv_std are stashed for the
// backward pass.
void layer_norm_fwd(const double* x, const double* gamma, const double* beta,
                    double* y, double* xhat, double* inv_std,
                    std::size_t rows, std::size_t d, double eps);
void layer_norm_fwd_ref(const double* x, const double* gamma, const double* beta,
                        double* y, double* xhat, double* inv_std,
                        std::size_t rows, std::size_t d, double eps);
// gx/ggamma/gbeta are accumulated into.
void layer_norm_bwd(const double* gy, const double* xhat, const double* inv_std,
                    const double* gamma, double* gx, double* ggamma, double* gbeta,
                    std::size_t rows, std::size_t d);
void layer_norm_bwd_ref(const double* gy, const double* xhat, const double* inv_std,
                        const double* gamma, double* gx, double* ggamma, double* gbeta,
                        std::size_t rows, std::size_t d);

// Masked softmax over the last dimension. mask may be null (all positions
// valid); masked positions are exactly zero in y. Rows must have at least one
// unmasked entry.
void softmax_fwd(const double* x, const unsigned char* mask, double* y,
                 std::size_t rows, std::size_t d);
void softmax_fwd_ref(const double* x, const unsigned char* mask, double* y,
                     std::size_t rows, std::size_t d);
void softmax_bwd(const double* y, const double* gy, double* gx,
                 std::size_t rows, std::size_t d);
void softmax_bwd_ref(const double* y, const double* gy, double* gx,
                     std::size_t rows, std::size_t d);

// out[s x d]: rows of feat[t x d] linearly interpolated at fractional
// positions pos[s]. Positions are clamped to [0, t-1] when clamp is set;
// callers must range-check beforehand otherwise.
void interp_rows_fwd(const double* feat, const double* pos, double* out,
                     std::size_t t, std::size_t d, std::size_t s, bool clamp);
void interp_rows_fwd_ref(const double* feat, const double* pos, double* out,
                         std::size_t t, std::size_t d, std::size_t s, bool clamp);
void interp_rows_bwd(const double* feat, const double* pos, const double* gout,
                     double* gfeat, double* gpos,
                     std::size_t t, std::size_t d, std::size_t s, bool clamp);
void interp_rows_bwd_ref(const double* feat, const double* pos, const double* gout,
                         double* gfeat, double* gpos,
                         std::size_t t, std::size_t d, std::size_t s, bool clamp);

// Fused deformable sampling. value[t x d] is viewed as `heads` column slices
// of width d/heads; for each output row i and head h, the k sampled rows at
// pos[i,h,:] (clamped to [0,t-1]) are blended with weights w[i,h,:]:
//   out[i, h-slice] = sum_k w[i,h,k] * interp(value[:, h-slice], pos[i,h,k])
void deform_sample_fwd(const double* value, const double* pos, const double* w,
                       double* out, std::size_t t, std::size_t d, std::size_t rows,
                       std::size_t heads, std::size_t k);
void deform_sample_fwd_ref(const double* value, const double* pos, const double* w,
                           double* out, std::size_t t, std::size_t d, std::size_t rows,
                           std::size_t heads, std::size_t k);
// gvalue/gpos/gw accumulated; any may be null to skip.
void deform_sample_bwd(const double* value, const double* pos, const double* w,
                       const double* gout, double* gvalue, double* gpos, double* gw,
                       std::size_t t, std::size_t d, std::size_t rows,
                       std::size_t heads, std::size_t k);
void deform_sample_bwd_ref(const double* value, const double* pos, const double* w,
                           const double* gout, double* gvalue, double* gpos, double* gw,
                           std::size_t t, std::size_t d, std::size_t rows,
                           std::size_t heads, std::size_t k);

}  // namespace tad::kernels
