#pragma once

// Coded-aperture snapshot spectral imaging forward model.
//
// A cube x (H, W, N) is dispersed by shifting band l right by shift*l columns onto a
// (H, W + shift*(N-1), N) "shifted" cube. The sensing operator multiplies every band
// of the shifted cube by the equally shifted mask and sums over bands, producing a
// (H, W + shift*(N-1)) measurement. Each voxel lands on exactly one measurement pixel,
// which makes Phi Phi^T diagonal with entries psi(h, w) = sum_l M_l(h, w)^2.

#include <cstddef>
#include <cstdint>

#include <Eigen/SparseCore>

#include "dauhst/tensor.hpp"

namespace dauhst::cassi {

std::size_t shifted_width(std::size_t width, std::size_t bands, std::size_t shift);

/// (H, W, N) -> (H, W + shift*(N-1), N); band l occupies columns [shift*l, shift*l + W).
Tensor shift_cube(const Tensor& cube, std::size_t shift);
/// Inverse of shift_cube on the support: crops each band back to `width` columns.
Tensor unshift_cube(const Tensor& shifted, std::size_t width, std::size_t shift);

/// Immutable after construction; safe to share between threads.
class SensingOperator {
 public:
  /// `mask` is (H, W) or (H, W, 1) with entries in [0, 1].
  SensingOperator(const Tensor& mask, std::size_t shift, std::size_t bands);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t bands() const { return bands_; }
  std::size_t shift() const { return shift_; }
  std::size_t shifted_width() const { return shifted_width_; }
  /// n = H * (W + shift*(N-1)), the measurement length.
  std::size_t measurement_size() const { return height_ * shifted_width_; }

  const Tensor& mask() const { return mask_; }
  /// Shifted mask stack (H, shifted_width, N): the dense stand-in for Phi.
  const Tensor& shifted_mask() const { return shifted_mask_; }
  /// Diagonal of Phi Phi^T as an (H, shifted_width) map.
  const Tensor& psi() const { return psi_; }

  Shape cube_shape() const { return {height_, shifted_width_, bands_}; }
  Shape measurement_shape() const { return {height_, shifted_width_}; }

 private:
  std::size_t height_;
  std::size_t width_;
  std::size_t bands_;
  std::size_t shift_;
  std::size_t shifted_width_;
  Tensor mask_;
  Tensor shifted_mask_;
  Tensor psi_;
};

/// y(h, w) = sum_l M_l(h, w) x(h, w, l) for a shifted cube x.
Tensor forward_phi(const SensingOperator& op, const Tensor& shifted);
/// out(h, w, l) = M_l(h, w) y(h, w).
Tensor adjoint_phi(const SensingOperator& op, const Tensor& measurement);
/// Recomputes diag(Phi Phi^T) from the shifted mask.
Tensor compute_psi(const SensingOperator& op);

/// Dense-entry budget for explicit-matrix verification paths: DAUHST_VERIFY_CAP or 1e6.
std::size_t verification_cap();

/// Phi as an n x (n*N) sparse matrix. Row = h*W' + w, column = (h*W' + w)*N + l,
/// matching the row-major flattening of measurement and shifted cube.
/// Throws CapExceeded when n * n*N exceeds `cap`.
Eigen::SparseMatrix<double> build_explicit_phi(const SensingOperator& op,
                                               std::size_t cap = verification_cap());

/// Poisson shot noise at `bits` of dynamic range: scale to [0, 2^bits - 1], sample counts,
/// scale back. Deterministic for a seed. Throws ValueError on negative input.
Tensor add_shot_noise(const Tensor& measurement, int bits, std::uint64_t seed);

}  // namespace dauhst::cassi
