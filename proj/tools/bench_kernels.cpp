// Times every numeric kernel against its serial reference build and verifies
// the two produce bit-identical outputs (each output element has one owner
// and a fixed reduction order, so parallelism must not change a single bit).

#include "tad/kernels.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace {

using Clock = std::chrono::steady_clock;

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double time_ms(const std::function<void()>& fn, int iters) {
  fn();  // warm-up
  const auto t0 = Clock::now();
  for (int i = 0; i < iters; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

struct Row {
  std::string name;
  std::string dims;
  double ref_ms = 0.0;
  double omp_ms = 0.0;
  bool equal = false;
};

void print_rows(const std::vector<Row>& rows) {
  std::printf("%-20s %-26s %12s %12s %9s %8s\n", "kernel", "size", "serial ms",
              "parallel ms", "speedup", "bitwise");
  for (const Row& r : rows)
    std::printf("%-20s %-26s %12.3f %12.3f %8.2fx %8s\n", r.name.c_str(),
                r.dims.c_str(), r.ref_ms, r.omp_ms,
                r.omp_ms > 0.0 ? r.ref_ms / r.omp_ms : 0.0,
                r.equal ? "equal" : "DIFFER");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel benchmark: OpenMP build vs serial reference"};
  int iters = 10;
  int threads = 0;
  std::size_t n = 256;
  app.add_option("--iters", iters, "timed iterations per kernel")
      ->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "OpenMP threads (0 = default)");
  app.add_option("--size", n, "base problem size")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  tad::kernels::set_threads(threads);
  std::mt19937_64 rng(7);
  std::vector<Row> rows;

  auto bench = [&](const std::string& name, const std::string& dims,
                   std::vector<double>& out_ref, std::vector<double>& out_omp,
                   const std::function<void()>& ref, const std::function<void()>& omp) {
    Row row{name, dims, 0.0, 0.0, false};
    row.ref_ms = time_ms(ref, iters);
    row.omp_ms = time_ms(omp, iters);
    ref();
    omp();
    row.equal = std::memcmp(out_ref.data(), out_omp.data(),
                            out_ref.size() * sizeof(double)) == 0;
    rows.push_back(row);
  };

  const std::size_t t = 16 * n, rows_n = 8 * n, heads = 8, k = 4;
  const std::string nxn = std::to_string(n) + "x" + std::to_string(n);

  {  // matmul family
    auto a = random_vec(n * n, rng), b = random_vec(n * n, rng);
    std::vector<double> yr(n * n), yo(n * n);
    bench("matmul", nxn + " * " + nxn, yr, yo,
          [&] { tad::kernels::matmul_ref(a.data(), b.data(), yr.data(), n, n, n); },
          [&] { tad::kernels::matmul(a.data(), b.data(), yo.data(), n, n, n); });
    bench("matmul_nt", nxn + " * " + nxn + "^T", yr, yo,
          [&] { tad::kernels::matmul_nt_ref(a.data(), b.data(), yr.data(), n, n, n); },
          [&] { tad::kernels::matmul_nt(a.data(), b.data(), yo.data(), n, n, n); });
    bench("matmul_tn", nxn + "^T * " + nxn, yr, yo,
          [&] { tad::kernels::matmul_tn_ref(a.data(), b.data(), yr.data(), n, n, n); },
          [&] { tad::kernels::matmul_tn(a.data(), b.data(), yo.data(), n, n, n); });
  }

  {  // layer norm
    const std::string dims = std::to_string(rows_n) + "x" + std::to_string(n);
    auto x = random_vec(rows_n * n, rng), gamma = random_vec(n, rng),
         beta = random_vec(n, rng), gy = random_vec(rows_n * n, rng);
    std::vector<double> yr(rows_n * n), yo(rows_n * n), xhat(rows_n * n),
        inv_std(rows_n);
    bench("layer_norm_fwd", dims, yr, yo,
          [&] {
            tad::kernels::layer_norm_fwd_ref(x.data(), gamma.data(), beta.data(),
                                             yr.data(), xhat.data(), inv_std.data(),
                                             rows_n, n, 1e-5);
          },
          [&] {
            tad::kernels::layer_norm_fwd(x.data(), gamma.data(), beta.data(),
                                         yo.data(), xhat.data(), inv_std.data(),
                                         rows_n, n, 1e-5);
          });
    std::vector<double> gxr(rows_n * n), gxo(rows_n * n), gg(n), gb(n);
    bench("layer_norm_bwd", dims, gxr, gxo,
          [&] {
            std::fill(gxr.begin(), gxr.end(), 0.0);
            std::fill(gg.begin(), gg.end(), 0.0);
            std::fill(gb.begin(), gb.end(), 0.0);
            tad::kernels::layer_norm_bwd_ref(gy.data(), xhat.data(), inv_std.data(),
                                             gamma.data(), gxr.data(), gg.data(),
                                             gb.data(), rows_n, n);
          },
          [&] {
            std::fill(gxo.begin(), gxo.end(), 0.0);
            std::fill(gg.begin(), gg.end(), 0.0);
            std::fill(gb.begin(), gb.end(), 0.0);
            tad::kernels::layer_norm_bwd(gy.data(), xhat.data(), inv_std.data(),
                                         gamma.data(), gxo.data(), gg.data(),
                                         gb.data(), rows_n, n);
          });
  }

  {  // masked softmax
    const std::string dims = std::to_string(rows_n) + "x" + std::to_string(n);
    auto x = random_vec(rows_n * n, rng, 4.0), gy = random_vec(rows_n * n, rng);
    std::vector<unsigned char> mask(rows_n * n);
    for (std::size_t i = 0; i < rows_n; ++i) {
      for (std::size_t j = 0; j < n; ++j) mask[i * n + j] = rng() % 3 != 0;
      mask[i * n + i % n] = 1;  // at least one live entry per row
    }
    std::vector<double> yr(rows_n * n), yo(rows_n * n);
    bench("softmax_fwd", dims, yr, yo,
          [&] { tad::kernels::softmax_fwd_ref(x.data(), mask.data(), yr.data(), rows_n, n); },
          [&] { tad::kernels::softmax_fwd(x.data(), mask.data(), yo.data(), rows_n, n); });
    std::vector<double> gxr(rows_n * n), gxo(rows_n * n);
    bench("softmax_bwd", dims, gxr, gxo,
          [&] {
            std::fill(gxr.begin(), gxr.end(), 0.0);
            tad::kernels::softmax_bwd_ref(yr.data(), gy.data(), gxr.data(), rows_n, n);
          },
          [&] {
            std::fill(gxo.begin(), gxo.end(), 0.0);
            tad::kernels::softmax_bwd(yr.data(), gy.data(), gxo.data(), rows_n, n);
          });
  }

  {  // row interpolation
    const std::string dims = std::to_string(t) + "x" + std::to_string(n) + " @ " +
                             std::to_string(rows_n);
    auto feat = random_vec(t * n, rng), gout = random_vec(rows_n * n, rng);
    std::vector<double> pos(rows_n);
    std::uniform_real_distribution<double> up(0.0, static_cast<double>(t - 1));
    for (double& p : pos) p = up(rng);
    std::vector<double> yr(rows_n * n), yo(rows_n * n);
    bench("interp_rows_fwd", dims, yr, yo,
          [&] {
            tad::kernels::interp_rows_fwd_ref(feat.data(), pos.data(), yr.data(), t,
                                              n, rows_n, true);
          },
          [&] {
            tad::kernels::interp_rows_fwd(feat.data(), pos.data(), yo.data(), t, n,
                                          rows_n, true);
          });
    std::vector<double> gfr(t * n), gfo(t * n), gpr(rows_n), gpo(rows_n);
    bench("interp_rows_bwd", dims, gfr, gfo,
          [&] {
            std::fill(gfr.begin(), gfr.end(), 0.0);
            std::fill(gpr.begin(), gpr.end(), 0.0);
            tad::kernels::interp_rows_bwd_ref(feat.data(), pos.data(), gout.data(),
                                              gfr.data(), gpr.data(), t, n, rows_n,
                                              true);
          },
          [&] {
            std::fill(gfo.begin(), gfo.end(), 0.0);
            std::fill(gpo.begin(), gpo.end(), 0.0);
            tad::kernels::interp_rows_bwd(feat.data(), pos.data(), gout.data(),
                                          gfo.data(), gpo.data(), t, n, rows_n, true);
          });
  }

  {  // fused deformable sampling
    const std::size_t dr = rows_n / 2;
    const std::string dims = std::to_string(t) + "x" + std::to_string(n) + " @ " +
                             std::to_string(dr) + "x" + std::to_string(heads) + "x" +
                             std::to_string(k);
    auto value = random_vec(t * n, rng), gout = random_vec(dr * n, rng);
    std::vector<double> pos(dr * heads * k), w(dr * heads * k);
    std::uniform_real_distribution<double> up(0.0, static_cast<double>(t - 1));
    std::uniform_real_distribution<double> uw(0.0, 1.0);
    for (double& p : pos) p = up(rng);
    for (double& x : w) x = uw(rng);
    std::vector<double> yr(dr * n), yo(dr * n);
    bench("deform_sample_fwd", dims, yr, yo,
          [&] {
            tad::kernels::deform_sample_fwd_ref(value.data(), pos.data(), w.data(),
                                                yr.data(), t, n, dr, heads, k);
          },
          [&] {
            tad::kernels::deform_sample_fwd(value.data(), pos.data(), w.data(),
                                            yo.data(), t, n, dr, heads, k);
          });
    std::vector<double> gvr(t * n), gvo(t * n), gp(dr * heads * k), gw(dr * heads * k);
    bench("deform_sample_bwd", dims, gvr, gvo,
          [&] {
            std::fill(gvr.begin(), gvr.end(), 0.0);
            std::fill(gp.begin(), gp.end(), 0.0);
            std::fill(gw.begin(), gw.end(), 0.0);
            tad::kernels::deform_sample_bwd_ref(value.data(), pos.data(), w.data(),
                                                gout.data(), gvr.data(), gp.data(),
                                                gw.data(), t, n, dr, heads, k);
          },
          [&] {
            std::fill(gvo.begin(), gvo.end(), 0.0);
            std::fill(gp.begin(), gp.end(), 0.0);
            std::fill(gw.begin(), gw.end(), 0.0);
            tad::kernels::deform_sample_bwd(value.data(), pos.data(), w.data(),
                                            gout.data(), gvo.data(), gp.data(),
                                            gw.data(), t, n, dr, heads, k);
          });
  }

  print_rows(rows);
  bool all_equal = true;
  for (const Row& r : rows) all_equal = all_equal && r.equal;
  if (!all_equal) {
    std::fprintf(stderr, "FAILED: parallel build diverged from the reference\n");
    return 1;
  }
  return 0;
}
