#include <vector>

#include "dauhst/kernels.hpp"
#include "dauhst/random.hpp"
#include "doctest.h"

using namespace dauhst;
namespace k = dauhst::kernels;

namespace {

std::vector<double> rand_vec(std::size_t n, Rng& rng) {
  return uniform_tensor({n}, rng).storage();
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("omp gemm matches the serial reference for every transpose combination") {
  Rng rng(11);
  for (bool ta : {false, true})
    for (bool tb : {false, true})
      for (bool acc : {false, true}) {
        const k::GemmShape s{3, 17, 9, 13, ta, tb, acc};
        auto a = rand_vec(s.batch * s.m * s.k, rng);
        auto b = rand_vec(s.batch * s.k * s.n, rng);
        auto c0 = rand_vec(s.batch * s.m * s.n, rng);
        auto c1 = c0;
        k::serial::gemm(s, a, b, c0);
        k::omp::gemm(s, a, b, c1);
        CHECK(max_diff(c0, c1) < 1e-12);
      }
}

TEST_CASE("omp convolution kernels match the serial reference") {
  Rng rng(12);
  const std::vector<k::ConvGeometry> cases = {
      {7, 9, 3, 4, 3, 3, 1, 1},  // conv3x3 same
      {8, 6, 2, 5, 4, 4, 2, 1},  // strided conv4x4 halving
      {5, 5, 4, 3, 1, 1, 1, 0},  // pointwise
      {6, 7, 3, 2, 3, 3, 2, 1},  // odd extent, stride 2
  };
  for (const auto& g : cases) {
    const std::size_t in_n = g.in_h * g.in_w * g.in_c;
    const std::size_t w_n = g.kernel_h * g.kernel_w * g.in_c * g.out_c;
    auto in = rand_vec(in_n, rng), w = rand_vec(w_n, rng), bias = rand_vec(g.out_c, rng);

    const std::size_t out_n = g.conv_out_h() * g.conv_out_w() * g.out_c;
    std::vector<double> o0(out_n), o1(out_n);
    k::serial::conv2d_forward(g, in, w, bias, o0);
    k::omp::conv2d_forward(g, in, w, bias, o1);
    CHECK(max_diff(o0, o1) < 1e-12);

    auto go = rand_vec(out_n, rng);
    std::vector<double> gi0(in_n, 0.5), gi1(in_n, 0.5);
    k::serial::conv2d_backward_input(g, go, w, gi0);
    k::omp::conv2d_backward_input(g, go, w, gi1);
    CHECK(max_diff(gi0, gi1) < 1e-12);

    std::vector<double> gw0(w_n), gw1(w_n), gb0(g.out_c), gb1(g.out_c);
    k::serial::conv2d_backward_weight(g, in, go, gw0, gb0);
    k::omp::conv2d_backward_weight(g, in, go, gw1, gb1);
    CHECK(max_diff(gw0, gw1) < 1e-12);
    CHECK(max_diff(gb0, gb1) < 1e-12);

    const std::size_t tout_n = g.transposed_out_h() * g.transposed_out_w() * g.out_c;
    std::vector<double> t0(tout_n), t1(tout_n);
    k::serial::conv_transpose2d_forward(g, in, w, bias, t0);
    k::omp::conv_transpose2d_forward(g, in, w, bias, t1);
    CHECK(max_diff(t0, t1) < 1e-12);

    auto tgo = rand_vec(tout_n, rng);
    std::vector<double> tgi0(in_n), tgi1(in_n);
    k::serial::conv_transpose2d_backward_input(g, tgo, w, tgi0);
    k::omp::conv_transpose2d_backward_input(g, tgo, w, tgi1);
    CHECK(max_diff(tgi0, tgi1) < 1e-12);

    std::vector<double> tgw0(w_n), tgw1(w_n), tgb0(g.out_c), tgb1(g.out_c);
    k::serial::conv_transpose2d_backward_weight(g, in, tgo, tgw0, tgb0);
    k::omp::conv_transpose2d_backward_weight(g, in, tgo, tgw1, tgb1);
    CHECK(max_diff(tgw0, tgw1) < 1e-12);
    CHECK(max_diff(tgb0, tgb1) < 1e-12);
  }
}

TEST_CASE("transposed convolution is the adjoint of convolution") {
  // <conv(x), y> = <x, conv^T(y)> with the same weights, channels swapped.
  Rng rng(13);
  const k::ConvGeometry conv{8, 8, 3, 2, 4, 4, 2, 1};
  auto x = rand_vec(8 * 8 * 3, rng);
  auto w = rand_vec(4 * 4 * 3 * 2, rng);
  std::vector<double> cx(conv.conv_out_h() * conv.conv_out_w() * 2);
  k::omp::conv2d_forward(conv, x, w, {}, cx);
  auto y = rand_vec(cx.size(), rng);
  std::vector<double> gx(x.size());
  k::omp::conv2d_backward_input(conv, y, w, gx);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < cx.size(); ++i) lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * gx[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("omp CASSI kernels match the serial reference") {
  Rng rng(14);
  const k::CassiGeometry g{6, 11, 4};
  const std::size_t n = g.height * g.shifted_width;
  auto mask = rand_vec(n * g.bands, rng), cube = rand_vec(n * g.bands, rng), y = rand_vec(n, rng);
  std::vector<double> y0(n), y1(n), x0(n * g.bands), x1(n * g.bands);
  k::serial::cassi_forward(g, mask, cube, y0);
  k::omp::cassi_forward(g, mask, cube, y1);
  CHECK(max_diff(y0, y1) < 1e-14);
  k::serial::cassi_adjoint(g, mask, y, x0);
  k::omp::cassi_adjoint(g, mask, y, x1);
  CHECK(max_diff(x0, x1) == 0.0);
}
