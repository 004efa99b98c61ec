#pragma once

// Dense compute kernels behind the autodiff primitives and the CASSI operator.
//
// Every kernel exists twice: `serial` is the plain loop nest kept as the test
// reference, `omp` is the OpenMP version used by the library. Both own each
// output element from exactly one thread, so results are deterministic and the
// two agree to rounding (the omp loops reorder some sums).

#include <cstddef>
#include <span>

namespace dauhst::kernels {

/// C[b] (+)= op(A[b]) * op(B[b]) for b < batch; op transposes when the flag is set.
/// A is m×k (k×m when trans_a), B is k×n (n×k when trans_b), C is m×n, all row-major.
struct GemmShape {
  std::size_t batch = 1;
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  bool trans_a = false;
  bool trans_b = false;
  bool accumulate = false;
};

/// 2-D convolution over (height, width, channels) maps with zero padding.
/// Weights are laid out (kernel_h, kernel_w, in_channels, out_channels).
/// For transposed convolution `in_*` describe the low-resolution input.
struct ConvGeometry {
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t in_c = 0;
  std::size_t out_c = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t conv_out_h() const { return (in_h + 2 * pad - kernel_h) / stride + 1; }
  std::size_t conv_out_w() const { return (in_w + 2 * pad - kernel_w) / stride + 1; }
  std::size_t transposed_out_h() const { return (in_h - 1) * stride + kernel_h - 2 * pad; }
  std::size_t transposed_out_w() const { return (in_w - 1) * stride + kernel_w - 2 * pad; }
};

/// Band-shifted coded-aperture geometry: band l of the shifted cube sits at
/// columns [shift*l, shift*l + width) of a height × shifted_width plane.
struct CassiGeometry {
  std::size_t height = 0;
  std::size_t shifted_width = 0;
  std::size_t bands = 0;
};

#define DAUHST_KERNEL_SET                                                                     \
  void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,        \
            std::span<double> c);                                                            \
  void conv2d_forward(const ConvGeometry& g, std::span<const double> in,                     \
                      std::span<const double> weight, std::span<const double> bias,          \
                      std::span<double> out);                                                \
  void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,        \
                             std::span<const double> weight, std::span<double> grad_in);     \
  void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> in,             \
                              std::span<const double> grad_out, std::span<double> grad_w,    \
                              std::span<double> grad_b);                                     \
  void conv_transpose2d_forward(const ConvGeometry& g, std::span<const double> in,           \
                                std::span<const double> weight, std::span<const double> bias, \
                                std::span<double> out);                                      \
  void conv_transpose2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out, \
                                       std::span<const double> weight,                       \
                                       std::span<double> grad_in);                           \
  void conv_transpose2d_backward_weight(const ConvGeometry& g, std::span<const double> in,   \
                                        std::span<const double> grad_out,                    \
                                        std::span<double> grad_w, std::span<double> grad_b); \
  void cassi_forward(const CassiGeometry& g, std::span<const double> shifted_mask,           \
                     std::span<const double> cube, std::span<double> measurement);           \
  void cassi_adjoint(const CassiGeometry& g, std::span<const double> shifted_mask,           \
                     std::span<const double> measurement, std::span<double> cube);

// Grad outputs of the *_backward_* kernels are accumulated into (+=), forward
// outputs are overwritten. `bias` / `grad_b` may be empty.
namespace serial {
DAUHST_KERNEL_SET
}  // namespace serial

namespace omp {
DAUHST_KERNEL_SET
}  // namespace omp

#undef DAUHST_KERNEL_SET

}  // namespace dauhst::kernels
