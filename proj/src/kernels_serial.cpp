#include "dauhst/kernels.hpp"

#include <algorithm>

namespace dauhst::kernels::serial {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c) {
  const std::size_t a_stride = s.m * s.k;
  const std::size_t b_stride = s.k * s.n;
  const std::size_t c_stride = s.m * s.n;
  for (std::size_t bt = 0; bt < s.batch; ++bt) {
    const double* A = a.data() + bt * a_stride;
    const double* B = b.data() + bt * b_stride;
    double* C = c.data() + bt * c_stride;
    for (std::size_t i = 0; i < s.m; ++i) {
      for (std::size_t j = 0; j < s.n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < s.k; ++p) {
          const double av = s.trans_a ? A[p * s.m + i] : A[i * s.k + p];
          const double bv = s.trans_b ? B[j * s.k + p] : B[p * s.n + j];
          acc += av * bv;
        }
        C[i * s.n + j] = s.accumulate ? C[i * s.n + j] + acc : acc;
      }
    }
  }
}

namespace {

// Input pixel read by output pixel `o` through kernel tap `k`, or -1 in the padding.
long conv_source(std::size_t o, std::size_t k, std::size_t stride, std::size_t pad,
                 std::size_t extent) {
  const long pos = static_cast<long>(o * stride + k) - static_cast<long>(pad);
  return (pos < 0 || pos >= static_cast<long>(extent)) ? -1 : pos;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out) {
  const std::size_t oh = g.conv_out_h(), ow = g.conv_out_w();
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t o = 0; o < g.out_c; ++o) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
            const long iy = conv_source(y, ky, g.stride, g.pad, g.in_h);
            const long ix = conv_source(x, kx, g.stride, g.pad, g.in_w);
            if (iy < 0 || ix < 0) continue;
            for (std::size_t i = 0; i < g.in_c; ++i)
              acc += in[(iy * g.in_w + ix) * g.in_c + i] *
                     weight[((ky * g.kernel_w + kx) * g.in_c + i) * g.out_c + o];
          }
        out[(y * ow + x) * g.out_c + o] = acc;
      }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
  const std::size_t oh = g.conv_out_h(), ow = g.conv_out_w();
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const long iy = conv_source(y, ky, g.stride, g.pad, g.in_h);
          const long ix = conv_source(x, kx, g.stride, g.pad, g.in_w);
          if (iy < 0 || ix < 0) continue;
          for (std::size_t i = 0; i < g.in_c; ++i)
            for (std::size_t o = 0; o < g.out_c; ++o)
              grad_in[(iy * g.in_w + ix) * g.in_c + i] +=
                  grad_out[(y * ow + x) * g.out_c + o] *
                  weight[((ky * g.kernel_w + kx) * g.in_c + i) * g.out_c + o];
        }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_w,
                            std::span<double> grad_b) {
  const std::size_t oh = g.conv_out_h(), ow = g.conv_out_w();
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t o = 0; o < g.out_c; ++o) {
        const double go = grad_out[(y * ow + x) * g.out_c + o];
        if (!grad_b.empty()) grad_b[o] += go;
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
            const long iy = conv_source(y, ky, g.stride, g.pad, g.in_h);
            const long ix = conv_source(x, kx, g.stride, g.pad, g.in_w);
            if (iy < 0 || ix < 0) continue;
            for (std::size_t i = 0; i < g.in_c; ++i)
              grad_w[((ky * g.kernel_w + kx) * g.in_c + i) * g.out_c + o] +=
                  go * in[(iy * g.in_w + ix) * g.in_c + i];
          }
      }
}

namespace {

// Output pixel written by input pixel `i` through kernel tap `k`, or -1 when cropped.
long transposed_target(std::size_t i, std::size_t k, std::size_t stride, std::size_t pad,
                       std::size_t extent) {
  const long pos = static_cast<long>(i * stride + k) - static_cast<long>(pad);
  return (pos < 0 || pos >= static_cast<long>(extent)) ? -1 : pos;
}

}  // namespace

void conv_transpose2d_forward(const ConvGeometry& g, std::span<const double> in,
                              std::span<const double> weight, std::span<const double> bias,
                              std::span<double> out) {
  const std::size_t oh = g.transposed_out_h(), ow = g.transposed_out_w();
  for (std::size_t p = 0; p < oh * ow; ++p)
    for (std::size_t o = 0; o < g.out_c; ++o) out[p * g.out_c + o] = bias.empty() ? 0.0 : bias[o];
  for (std::size_t y = 0; y < g.in_h; ++y)
    for (std::size_t x = 0; x < g.in_w; ++x)
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const long ty = transposed_target(y, ky, g.stride, g.pad, oh);
          const long tx = transposed_target(x, kx, g.stride, g.pad, ow);
          if (ty < 0 || tx < 0) continue;
          for (std::size_t i = 0; i < g.in_c; ++i)
            for (std::size_t o = 0; o < g.out_c; ++o)
              out[(ty * ow + tx) * g.out_c + o] +=
                  in[(y * g.in_w + x) * g.in_c + i] *
                  weight[((ky * g.kernel_w + kx) * g.in_c + i) * g.out_c + o];
        }
}

void conv_transpose2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                                     std::span<const double> weight, std::span<double> grad_in) {
  const std::size_t oh = g.transposed_out_h(), ow = g.transposed_out_w();
  for (std::size_t y = 0; y < g.in_h; ++y)
    for (std::size_t x = 0; x < g.in_w; ++x)
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const long ty = transposed_target(y, ky, g.stride, g.pad, oh);
          const long tx = transposed_target(x, kx, g.stride, g.pad, ow);
          if (ty < 0 || tx < 0) continue;
          for (std::size_t i = 0; i < g.in_c; ++i)
            for (std::size_t o = 0; o < g.out_c; ++o)
              grad_in[(y * g.in_w + x) * g.in_c + i] +=
                  grad_out[(ty * ow + tx) * g.out_c + o] *
                  weight[((ky * g.kernel_w + kx) * g.in_c + i) * g.out_c + o];
        }
}

void conv_transpose2d_backward_weight(const ConvGeometry& g, std::span<const double> in,
                                      std::span<const double> grad_out, std::span<double> grad_w,
                                      std::span<double> grad_b) {
  const std::size_t oh = g.transposed_out_h(), ow = g.transposed_out_w();
  if (!grad_b.empty()) {
    for (std::size_t p = 0; p < oh * ow; ++p)
      for (std::size_t o = 0; o < g.out_c; ++o) grad_b[o] += grad_out[p * g.out_c + o];
  }
  for (std::size_t y = 0; y < g.in_h; ++y)
    for (std::size_t x = 0; x < g.in_w; ++x)
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const long ty = transposed_target(y, ky, g.stride, g.pad, oh);
          const long tx = transposed_target(x, kx, g.stride, g.pad, ow);
          if (ty < 0 || tx < 0) continue;
          for (std::size_t i = 0; i < g.in_c; ++i)
            for (std::size_t o = 0; o < g.out_c; ++o)
              grad_w[((ky * g.kernel_w + kx) * g.in_c + i) * g.out_c + o] +=
                  in[(y * g.in_w + x) * g.in_c + i] * grad_out[(ty * ow + tx) * g.out_c + o];
        }
}

void cassi_forward(const CassiGeometry& g, std::span<const double> shifted_mask,
                   std::span<const double> cube, std::span<double> measurement) {
  std::fill(measurement.begin(), measurement.end(), 0.0);
  for (std::size_t h = 0; h < g.height; ++h)
    for (std::size_t w = 0; w < g.shifted_width; ++w)
      for (std::size_t l = 0; l < g.bands; ++l) {
        const std::size_t v = (h * g.shifted_width + w) * g.bands + l;
        measurement[h * g.shifted_width + w] += shifted_mask[v] * cube[v];
      }
}

void cassi_adjoint(const CassiGeometry& g, std::span<const double> shifted_mask,
                   std::span<const double> measurement, std::span<double> cube) {
  for (std::size_t h = 0; h < g.height; ++h)
    for (std::size_t w = 0; w < g.shifted_width; ++w)
      for (std::size_t l = 0; l < g.bands; ++l) {
        const std::size_t v = (h * g.shifted_width + w) * g.bands + l;
        cube[v] = shifted_mask[v] * measurement[h * g.shifted_width + w];
      }
}

}  // namespace dauhst::kernels::serial
