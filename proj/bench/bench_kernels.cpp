// Times the serial reference kernels against the OpenMP kernels on the shapes the
// toy model actually runs, and reports the largest disagreement between them.
//
//   bench_kernels [repeats]

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "dauhst/kernels.hpp"

namespace k = dauhst::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double best_of(int repeats, const std::function<void()>& fn) {
  double best = INFINITY;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Runs the same kernel through both implementations into separate outputs.
void row(const std::string& name, int repeats, std::size_t out_size,
         const std::function<void(std::vector<double>&)>& serial,
         const std::function<void(std::vector<double>&)>& parallel) {
  std::vector<double> a(out_size, 0.0), b(out_size, 0.0);
  const double ts = best_of(repeats, [&] {
    std::fill(a.begin(), a.end(), 0.0);
    serial(a);
  });
  const double tp = best_of(repeats, [&] {
    std::fill(b.begin(), b.end(), 0.0);
    parallel(b);
  });
  fmt::print("{:<36} {:>10.3f} {:>10.3f} {:>8.2f}x {:>10.1e}\n", name, ts, tp, ts / tp, max_diff(a, b));
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::max(1, std::stoi(argv[1])) : 5;
  std::mt19937_64 rng(42);
  fmt::print("OpenMP threads: {}\n", omp_get_max_threads());
  fmt::print("{:<36} {:>10} {:>10} {:>9} {:>10}\n", "kernel", "serial ms", "omp ms", "speedup", "max diff");

  {
    const k::GemmShape s{16, 64, 64, 64, false, true, false};
    const auto a = random_vector(16 * 64 * 64, rng), b = random_vector(16 * 64 * 64, rng);
    row("gemm 16x(64x64x64) B^T", repeats, 16 * 64 * 64, [&](auto& c) { k::serial::gemm(s, a, b, c); },
        [&](auto& c) { k::omp::gemm(s, a, b, c); });
  }
  {
    const k::GemmShape s{1, 3072, 32, 8};
    const auto a = random_vector(3072 * 8, rng), b = random_vector(8 * 32, rng);
    row("gemm tokens 3072x8 -> 32 (FFN)", repeats, 3072 * 32, [&](auto& c) { k::serial::gemm(s, a, b, c); },
        [&](auto& c) { k::omp::gemm(s, a, b, c); });
  }

  const k::ConvGeometry embed{48, 64, 9, 8, 3, 3, 1, 1};
  const k::ConvGeometry down{48, 64, 8, 16, 4, 4, 2, 1};
  const k::ConvGeometry est{48, 55, 64, 64, 3, 3, 2, 1};
  for (const auto& [name, g] : {std::pair{"conv3x3 48x64 9->8", embed}, std::pair{"conv4x4/2 48x64 8->16", down},
                                std::pair{"conv3x3/2 48x55 64->64", est}}) {
    const std::size_t oh = g.conv_out_h(), ow = g.conv_out_w();
    const auto in = random_vector(g.in_h * g.in_w * g.in_c, rng);
    const auto w = random_vector(g.kernel_h * g.kernel_w * g.in_c * g.out_c, rng);
    const auto bias = random_vector(g.out_c, rng);
    const auto go = random_vector(oh * ow * g.out_c, rng);
    row(std::string(name) + " fwd", repeats, oh * ow * g.out_c,
        [&](auto& o) { k::serial::conv2d_forward(g, in, w, bias, o); },
        [&](auto& o) { k::omp::conv2d_forward(g, in, w, bias, o); });
    row(std::string(name) + " bwd input", repeats, in.size(),
        [&](auto& o) { k::serial::conv2d_backward_input(g, go, w, o); },
        [&](auto& o) { k::omp::conv2d_backward_input(g, go, w, o); });
    row(std::string(name) + " bwd weight", repeats, w.size(),
        [&](auto& o) { k::serial::conv2d_backward_weight(g, in, go, o, {}); },
        [&](auto& o) { k::omp::conv2d_backward_weight(g, in, go, o, {}); });
  }
  {
    const k::ConvGeometry up{24, 32, 16, 8, 2, 2, 2, 0};
    const std::size_t oh = up.transposed_out_h(), ow = up.transposed_out_w();
    const auto in = random_vector(up.in_h * up.in_w * up.in_c, rng);
    const auto w = random_vector(2 * 2 * up.in_c * up.out_c, rng);
    const auto go = random_vector(oh * ow * up.out_c, rng);
    row("deconv2x2/2 24x32 16->8 fwd", repeats, oh * ow * up.out_c,
        [&](auto& o) { k::serial::conv_transpose2d_forward(up, in, w, {}, o); },
        [&](auto& o) { k::omp::conv_transpose2d_forward(up, in, w, {}, o); });
    row("deconv2x2/2 24x32 16->8 bwd input", repeats, in.size(),
        [&](auto& o) { k::serial::conv_transpose2d_backward_input(up, go, w, o); },
        [&](auto& o) { k::omp::conv_transpose2d_backward_input(up, go, w, o); });
    row("deconv2x2/2 24x32 16->8 bwd weight", repeats, w.size(),
        [&](auto& o) { k::serial::conv_transpose2d_backward_weight(up, in, go, o, {}); },
        [&](auto& o) { k::omp::conv_transpose2d_backward_weight(up, in, go, o, {}); });
  }
  {
    const k::CassiGeometry g{256, 310, 28};
    const auto mask = random_vector(g.height * g.shifted_width * g.bands, rng);
    const auto cube = random_vector(mask.size(), rng);
    const auto y = random_vector(g.height * g.shifted_width, rng);
    row("cassi forward 256x310x28", repeats, y.size(), [&](auto& o) { k::serial::cassi_forward(g, mask, cube, o); },
        [&](auto& o) { k::omp::cassi_forward(g, mask, cube, o); });
    row("cassi adjoint 256x310x28", repeats, cube.size(), [&](auto& o) { k::serial::cassi_adjoint(g, mask, y, o); },
        [&](auto& o) { k::omp::cassi_adjoint(g, mask, y, o); });
  }
  return 0;
}
