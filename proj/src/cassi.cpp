#include "dauhst/cassi.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <string>
#include <vector>

#include "dauhst/error.hpp"
#include "dauhst/kernels.hpp"

namespace dauhst::cassi {

std::size_t shifted_width(std::size_t width, std::size_t bands, std::size_t shift) {
  return width + shift * (bands - 1);
}

Tensor shift_cube(const Tensor& cube, std::size_t shift) {
  if (cube.rank() != 3) throw ShapeError("shift_cube: expected (H, W, N), got " + to_string(cube.shape()));
  const std::size_t h = cube.dim(0), w = cube.dim(1), n = cube.dim(2);
  const std::size_t ws = shifted_width(w, n, shift);
  Tensor out({h, ws, n});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t l = 0; l < n; ++l) out.at(r, c + shift * l, l) = cube.at(r, c, l);
  return out;
}

Tensor unshift_cube(const Tensor& shifted, std::size_t width, std::size_t shift) {
  if (shifted.rank() != 3) {
    throw ShapeError("unshift_cube: expected (H, W', N), got " + to_string(shifted.shape()));
  }
  const std::size_t h = shifted.dim(0), n = shifted.dim(2);
  if (width == 0 || shifted.dim(1) != shifted_width(width, n, shift)) {
    throw ShapeError("unshift_cube: width " + std::to_string(shifted.dim(1)) + " is not " +
                     std::to_string(width) + " + " + std::to_string(shift) + "*(" + std::to_string(n) + "-1)");
  }
  Tensor out({h, width, n});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < width; ++c)
      for (std::size_t l = 0; l < n; ++l) out.at(r, c, l) = shifted.at(r, c + shift * l, l);
  return out;
}

SensingOperator::SensingOperator(const Tensor& mask, std::size_t shift, std::size_t bands)
    : shift_(shift) {
  if (!(mask.rank() == 2 || (mask.rank() == 3 && mask.dim(2) == 1))) {
    throw ShapeError("mask must be (H, W) or (H, W, 1), got " + to_string(mask.shape()));
  }
  if (bands == 0) throw ValueError("sensing operator needs at least one band");
  height_ = mask.dim(0);
  width_ = mask.dim(1);
  bands_ = bands;
  shifted_width_ = cassi::shifted_width(width_, bands_, shift_);
  mask_ = mask.reshaped({height_, width_});
  for (double v : mask_.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValueError("mask entries must lie in [0, 1], got " + std::to_string(v));
  }
  shifted_mask_ = Tensor(cube_shape());
  for (std::size_t r = 0; r < height_; ++r)
    for (std::size_t c = 0; c < width_; ++c)
      for (std::size_t l = 0; l < bands_; ++l) shifted_mask_.at(r, c + shift_ * l, l) = mask_.at(r, c);
  psi_ = compute_psi(*this);
}

Tensor forward_phi(const SensingOperator& op, const Tensor& shifted) {
  if (shifted.shape() != op.cube_shape()) {
    throw ShapeError("forward_phi: expected shifted cube " + to_string(op.cube_shape()) + ", got " +
                     to_string(shifted.shape()));
  }
  Tensor y(op.measurement_shape());
  kernels::omp::cassi_forward({op.height(), op.shifted_width(), op.bands()}, op.shifted_mask().values(),
                              shifted.values(), y.values());
  return y;
}

Tensor adjoint_phi(const SensingOperator& op, const Tensor& measurement) {
  const bool plane = measurement.shape() == op.measurement_shape();
  const bool column = measurement.shape() == Shape{op.height(), op.shifted_width(), 1};
  if (!plane && !column) {
    throw ShapeError("adjoint_phi: expected measurement " + to_string(op.measurement_shape()) + ", got " +
                     to_string(measurement.shape()));
  }
  Tensor x(op.cube_shape());
  kernels::omp::cassi_adjoint({op.height(), op.shifted_width(), op.bands()}, op.shifted_mask().values(),
                              measurement.values(), x.values());
  return x;
}

Tensor compute_psi(const SensingOperator& op) {
  const Tensor& m = op.shifted_mask();
  Tensor psi(op.measurement_shape());
  const std::size_t nb = op.bands();
  for (std::size_t p = 0; p < psi.size(); ++p) {
    double acc = 0.0;
    for (std::size_t l = 0; l < nb; ++l) acc += m[p * nb + l] * m[p * nb + l];
    psi[p] = acc;
  }
  return psi;
}

std::size_t verification_cap() {
  if (const char* env = std::getenv("DAUHST_VERIFY_CAP")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return 1'000'000;
}

Eigen::SparseMatrix<double> build_explicit_phi(const SensingOperator& op, std::size_t cap) {
  const std::size_t n = op.measurement_size();
  const std::size_t cols = n * op.bands();
  if (n * cols > cap) {
    throw CapExceeded("explicit Phi would have " + std::to_string(n * cols) + " dense entries (cap " +
                      std::to_string(cap) + ")");
  }
  std::vector<Eigen::Triplet<double>> entries;
  const Tensor& m = op.shifted_mask();
  for (std::size_t col = 0; col < cols; ++col) {
    if (m[col] != 0.0) entries.emplace_back(static_cast<int>(col / op.bands()), static_cast<int>(col), m[col]);
  }
  Eigen::SparseMatrix<double> phi(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols));
  phi.setFromTriplets(entries.begin(), entries.end());
  return phi;
}

Tensor add_shot_noise(const Tensor& measurement, int bits, std::uint64_t seed) {
  if (bits < 1 || bits > 52) throw ValueError("shot noise bit depth must be in [1, 52]");
  double peak = 0.0;
  for (double v : measurement.values()) {
    if (v < 0.0) throw ValueError("shot noise needs a non-negative measurement, got " + std::to_string(v));
    peak = std::max(peak, v);
  }
  Tensor out = Tensor::zeros_like(measurement);
  if (peak == 0.0) return out;
  const double levels = std::ldexp(1.0, bits) - 1.0;
  const double gain = levels / peak;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mean = measurement[i] * gain;
    if (mean <= 0.0) continue;
    std::poisson_distribution<long long> counts(mean);
    out[i] = static_cast<double>(counts(rng)) / gain;
  }
  return out;
}

}  // namespace dauhst::cassi
