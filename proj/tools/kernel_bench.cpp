// Compares the serial reference kernels against the production kernels
// (single-threaded and OpenMP) on model-representative shapes: verifies
// bitwise-identical outputs and reports timings.

#include <chrono>
#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ffpdet/kernels.hpp"
#include "ffpdet/rng.hpp"

using namespace ffpdet;
using kernels::ConvDims;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<float> random_vec(Rng& rng, int64_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = (float)rng.uniform(-1.0, 1.0);
  return v;
}

ConvDims make_dims(int64_t n, int64_t ci, int64_t hw, int64_t co, int64_t k,
                   int64_t stride, int64_t pad, int64_t dil, int64_t groups) {
  ConvDims d;
  d.n = n;
  d.ci = ci;
  d.hi = d.wi = hw;
  d.co = co;
  d.k = k;
  d.stride = stride;
  d.pad = pad;
  d.dil = dil;
  d.groups = groups;
  d.ho = (d.hi + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  d.wo = (d.wi + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  return d;
}

struct Timing {
  double ref_s = 0, serial_s = 0, parallel_s = 0;
  bool equal = true;
};

template <typename F>
double time_best(F&& fn, int reps) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const double t0 = now_s();
    fn();
    best = std::min(best, now_s() - t0);
  }
  return best;
}

void print_row(const std::string& name, const Timing& t) {
  std::cout << strfmt(
      "%-26s ref %9.3f ms   serial %9.3f ms   openmp %9.3f ms   speedup "
      "%.2fx   %s\n",
      name.c_str(), 1e3 * t.ref_s, 1e3 * t.serial_s, 1e3 * t.parallel_s,
      t.serial_s / std::max(t.parallel_s, 1e-12),
      t.equal ? "bitwise-equal" : "MISMATCH");
}

bool bench_conv(const std::string& name, const ConvDims& d, int reps) {
  Rng rng(7);
  const auto x = random_vec(rng, d.n * d.ci * d.hi * d.wi);
  const auto w = random_vec(rng, d.co * (d.ci / d.groups) * d.k * d.k);
  const auto b = random_vec(rng, d.co);
  const int64_t out_n = d.n * d.co * d.ho * d.wo;
  std::vector<float> y_ref(out_n), y_serial(out_n), y_parallel(out_n);

  Timing fwd;
  fwd.ref_s = time_best(
      [&] { kernels::conv2d_forward_ref(x.data(), w.data(), b.data(),
                                        y_ref.data(), d); },
      reps);
  fwd.serial_s = time_best(
      [&] { kernels::conv2d_forward(x.data(), w.data(), b.data(),
                                    y_serial.data(), d, false); },
      reps);
  fwd.parallel_s = time_best(
      [&] { kernels::conv2d_forward(x.data(), w.data(), b.data(),
                                    y_parallel.data(), d, true); },
      reps);
  fwd.equal = std::memcmp(y_ref.data(), y_serial.data(),
                          out_n * sizeof(float)) == 0 &&
              std::memcmp(y_ref.data(), y_parallel.data(),
                          out_n * sizeof(float)) == 0;
  print_row(name + " fwd", fwd);

  const auto gy = random_vec(rng, out_n);
  const int64_t in_n = d.n * d.ci * d.hi * d.wi;
  std::vector<float> gx_ref(in_n), gx_serial(in_n), gx_parallel(in_n);
  Timing bwd_in;
  auto zero_run = [&](std::vector<float>& gx, auto&& fn) {
    return [&gx, fn = std::forward<decltype(fn)>(fn)] {
      std::fill(gx.begin(), gx.end(), 0.f);
      fn();
    };
  };
  bwd_in.ref_s = time_best(
      zero_run(gx_ref, [&] { kernels::conv2d_backward_input_ref(
                                 w.data(), gy.data(), gx_ref.data(), d); }),
      reps);
  bwd_in.serial_s = time_best(
      zero_run(gx_serial, [&] { kernels::conv2d_backward_input(
                                    w.data(), gy.data(), gx_serial.data(), d,
                                    false); }),
      reps);
  bwd_in.parallel_s = time_best(
      zero_run(gx_parallel, [&] { kernels::conv2d_backward_input(
                                      w.data(), gy.data(), gx_parallel.data(),
                                      d, true); }),
      reps);
  bwd_in.equal = std::memcmp(gx_ref.data(), gx_serial.data(),
                             in_n * sizeof(float)) == 0 &&
                 std::memcmp(gx_ref.data(), gx_parallel.data(),
                             in_n * sizeof(float)) == 0;
  print_row(name + " bwd-input", bwd_in);

  const int64_t w_n = (int64_t)w.size();
  std::vector<float> gw_ref(w_n), gw_serial(w_n), gw_parallel(w_n);
  Timing bwd_w;
  bwd_w.ref_s = time_best(
      zero_run(gw_ref, [&] { kernels::conv2d_backward_weight_ref(
                                 x.data(), gy.data(), gw_ref.data(), d); }),
      reps);
  bwd_w.serial_s = time_best(
      zero_run(gw_serial, [&] { kernels::conv2d_backward_weight(
                                    x.data(), gy.data(), gw_serial.data(), d,
                                    false); }),
      reps);
  bwd_w.parallel_s = time_best(
      zero_run(gw_parallel, [&] { kernels::conv2d_backward_weight(
                                      x.data(), gy.data(), gw_parallel.data(),
                                      d, true); }),
      reps);
  bwd_w.equal = std::memcmp(gw_ref.data(), gw_serial.data(),
                            w_n * sizeof(float)) == 0 &&
                std::memcmp(gw_ref.data(), gw_parallel.data(),
                            w_n * sizeof(float)) == 0;
  print_row(name + " bwd-weight", bwd_w);

  return fwd.equal && bwd_in.equal && bwd_w.equal;
}

bool bench_dense(const std::string& name, int64_t n, int64_t ci, int64_t co,
                 int reps) {
  Rng rng(9);
  const auto x = random_vec(rng, n * ci);
  const auto w = random_vec(rng, co * ci);
  const auto b = random_vec(rng, co);
  std::vector<float> y_ref(n * co), y_serial(n * co), y_parallel(n * co);

  Timing t;
  t.ref_s = time_best(
      [&] { kernels::dense_forward_ref(x.data(), w.data(), b.data(),
                                       y_ref.data(), n, ci, co); },
      reps);
  t.serial_s = time_best(
      [&] { kernels::dense_forward(x.data(), w.data(), b.data(),
                                   y_serial.data(), n, ci, co, false); },
      reps);
  t.parallel_s = time_best(
      [&] { kernels::dense_forward(x.data(), w.data(), b.data(),
                                   y_parallel.data(), n, ci, co, true); },
      reps);
  t.equal = std::memcmp(y_ref.data(), y_serial.data(),
                        y_ref.size() * sizeof(float)) == 0 &&
            std::memcmp(y_ref.data(), y_parallel.data(),
                        y_ref.size() * sizeof(float)) == 0;
  print_row(name, t);
  return t.equal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial-reference vs production kernel comparison"};
  int reps = 5;
  int threads = 0;
  app.add_option("--reps", reps, "repetitions per measurement (best kept)");
  app.add_option("--threads", threads, "cap OpenMP threads (0 = default)");
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) kernels::set_max_threads(threads);

  std::cout << strfmt("openmp threads available: %d\n",
                      kernels::max_threads());
  bool ok = true;
  ok &= bench_conv("conv 3x3 16ch 64x64 n8",
                   make_dims(8, 16, 64, 16, 3, 1, 1, 1, 1), reps);
  ok &= bench_conv("conv 1x1 24->256 32x32",
                   make_dims(1, 24, 32, 256, 1, 1, 0, 1, 1), reps);
  ok &= bench_conv("conv 3x3 d2 256ch 8x8",
                   make_dims(1, 256, 8, 256, 3, 1, 2, 2, 1), reps);
  ok &= bench_conv("dwconv 5x5 96ch 16x16 n8",
                   make_dims(8, 96, 16, 96, 5, 1, 2, 1, 96), reps);
  ok &= bench_dense("dense 8x576->128", 8, 576, 128, reps);

  if (!ok) {
    std::cerr << "kernel outputs diverged from the serial reference\n";
    return 1;
  }
  std::cout << "all kernels bitwise-equal across implementations\n";
  return 0;
}
