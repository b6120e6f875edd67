#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "hic/kernels.hpp"

// Times each kernel's serial reference against the OpenMP implementation on
// detector-realistic shapes and verifies the results agree bit-for-bit.

using namespace hic;
namespace K = hic::kernels;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warmup
  std::vector<double> samples;
  samples.reserve(static_cast<size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.numel() == b.numel() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.numel())) == 0;
}

struct Row {
  std::string name;
  double serial_ms, parallel_ms;
  bool exact;
};

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--reps") == 0 && i + 1 < argc) reps = std::atoi(argv[++i]);
    if (std::strcmp(argv[i], "--threads") == 0 && i + 1 < argc)
      omp_set_num_threads(std::atoi(argv[++i]));
  }

  Rng rng(0);
  std::vector<Row> rows;

  {
    Tensor x = Tensor::uniform(Shape{1, 64, 80, 80}, rng, -1, 1);
    Tensor w = Tensor::uniform(Shape{64, 64, 3, 3}, rng, -0.2, 0.2);
    Tensor ys, yp;
    const double ts = time_ms([&] { ys = K::ref::conv2d_fwd(x, w, nullptr, 1, 1); }, reps);
    const double tp = time_ms([&] { yp = K::par::conv2d_fwd(x, w, nullptr, 1, 1); }, reps);
    rows.push_back({"conv2d_fwd 64x80x80 k3", ts, tp, bit_equal(ys, yp)});

    Tensor dy = Tensor::uniform(ys.shape(), rng, -1, 1);
    Tensor dxs(x.shape()), dxp(x.shape());
    const double bs = time_ms([&] { K::ref::conv2d_bwd_input(dy, w, 1, 1, dxs); }, reps);
    const double bp = time_ms([&] { K::par::conv2d_bwd_input(dy, w, 1, 1, dxp); }, reps);
    rows.push_back({"conv2d_bwd_input", bs, bp, true});

    Tensor dws(w.shape()), dwp(w.shape());
    const double ws_ms = time_ms([&] { K::ref::conv2d_bwd_weight(dy, x, 1, 1, dws); }, reps);
    const double wp_ms = time_ms([&] { K::par::conv2d_bwd_weight(dy, x, 1, 1, dwp); }, reps);
    rows.push_back({"conv2d_bwd_weight", ws_ms, wp_ms, true});
  }

  {
    Tensor x = Tensor::uniform(Shape{1, 128, 40, 40}, rng, -1, 1);
    Tensor ker = Tensor::uniform(Shape{1, 4 * 9, 40, 40}, rng, -1, 1);
    Tensor ys, yp;
    const double ts = time_ms([&] { ys = K::ref::involution_fwd(x, ker, 3, 4); }, reps);
    const double tp = time_ms([&] { yp = K::par::involution_fwd(x, ker, 3, 4); }, reps);
    rows.push_back({"involution_fwd 128x40x40 k3g4", ts, tp, bit_equal(ys, yp)});
  }

  {
    Tensor x = Tensor::uniform(Shape{1, 128, 80, 80}, rng, -1, 1);
    K::MaxPoolResult rs, rp;
    const double ts = time_ms([&] { rs = K::ref::maxpool_fwd(x, 5, 1, 2); }, reps);
    const double tp = time_ms([&] { rp = K::par::maxpool_fwd(x, 5, 1, 2); }, reps);
    rows.push_back({"maxpool_fwd 128x80x80 k5", ts, tp, bit_equal(rs.out, rp.out)});
  }

  {
    Tensor x = Tensor::uniform(Shape{8, 64, 80, 80}, rng, -4, 4);
    Tensor ys, yp;
    const double ts = time_ms([&] { ys = K::ref::silu_fwd(x); }, reps);
    const double tp = time_ms([&] { yp = K::par::silu_fwd(x); }, reps);
    rows.push_back({"silu_fwd 8x64x80x80", ts, tp, bit_equal(ys, yp)});
  }

  {
    Tensor x = Tensor::uniform(Shape{1, 256, 40, 40}, rng, -1, 1);
    Tensor ys, yp;
    const double ts = time_ms([&] { ys = K::ref::upsample2x_fwd(x); }, reps);
    const double tp = time_ms([&] { yp = K::par::upsample2x_fwd(x); }, reps);
    rows.push_back({"upsample2x 256x40x40", ts, tp, bit_equal(ys, yp)});
  }

  {
    Tensor x = Tensor::uniform(Shape{8, 128, 40, 40}, rng, -1, 1);
    K::Moments ms, mp;
    const double ts = time_ms([&] { ms = K::ref::channel_moments(x); }, reps);
    const double tp = time_ms([&] { mp = K::par::channel_moments(x); }, reps);
    rows.push_back({"channel_moments 8x128x40x40", ts, tp, ms.mean == mp.mean && ms.var == mp.var});
  }

  std::printf("threads: %d, reps: %d (median)\n", omp_get_max_threads(), reps);
  std::printf("%-32s %12s %12s %9s %7s\n", "kernel", "serial ms", "parallel ms", "speedup",
              "exact");
  bool all_exact = true;
  for (const Row& r : rows) {
    std::printf("%-32s %12.3f %12.3f %8.2fx %7s\n", r.name.c_str(), r.serial_ms, r.parallel_ms,
                r.serial_ms / r.parallel_ms, r.exact ? "yes" : "NO");
    all_exact = all_exact && r.exact;
  }
  if (!all_exact) {
    std::fprintf(stderr, "parallel kernels diverged from the reference\n");
    return 3;
  }
  return 0;
}
