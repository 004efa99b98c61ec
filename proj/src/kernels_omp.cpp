#include "dauhst/kernels.hpp"

#include <algorithm>
#include <vector>

namespace dauhst::kernels::omp {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 14;

// Index of the source row/column for a convolution tap, -1 inside the zero padding.
inline long tap_source(long o, long k, long stride, long pad, long extent) {
  const long pos = o * stride + k - pad;
  return (pos < 0 || pos >= extent) ? -1 : pos;
}

// Output index `o` that reads position `i` through tap `k` (o*stride + k - pad == i), or -1.
inline long tap_reader(long i, long k, long stride, long pad, long extent) {
  const long num = i + pad - k;
  if (num < 0 || num % stride != 0) return -1;
  const long o = num / stride;
  return o < extent ? o : -1;
}

}  // namespace

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c) {
  const long rows = static_cast<long>(s.batch * s.m);
  const std::size_t m = s.m, n = s.n, k = s.k;
  const bool parallel = s.batch * m * n * k >= kParallelWork;
#pragma omp parallel if (parallel)
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (long r = 0; r < rows; ++r) {
      const std::size_t bt = static_cast<std::size_t>(r) / m;
      const std::size_t i = static_cast<std::size_t>(r) % m;
      const double* A = a.data() + bt * m * k;
      const double* B = b.data() + bt * k * n;
      double* C = c.data() + bt * m * n + i * n;
      std::fill(acc.begin(), acc.end(), 0.0);
      if (!s.trans_b) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = s.trans_a ? A[p * m + i] : A[i * k + p];
          if (av == 0.0) continue;
          const double* Brow = B + p * n;
          for (std::size_t j = 0; j < n; ++j) acc[j] += av * Brow[j];
        }
      } else {
        for (std::size_t j = 0; j < n; ++j) {
          const double* Brow = B + j * k;
          double sum = 0.0;
          if (!s.trans_a) {
            const double* Arow = A + i * k;
            for (std::size_t p = 0; p < k; ++p) sum += Arow[p] * Brow[p];
          } else {
            for (std::size_t p = 0; p < k; ++p) sum += A[p * m + i] * Brow[p];
          }
          acc[j] = sum;
        }
      }
      if (s.accumulate) {
        for (std::size_t j = 0; j < n; ++j) C[j] += acc[j];
      } else {
        std::copy(acc.begin(), acc.end(), C);
      }
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out) {
  const long oh = static_cast<long>(g.conv_out_h()), ow = static_cast<long>(g.conv_out_w());
  const long kh = g.kernel_h, kw = g.kernel_w, st = g.stride, pd = g.pad;
  const long ih = g.in_h, iw = g.in_w;
  const std::size_t ci = g.in_c, co = g.out_c;
  const bool parallel = static_cast<std::size_t>(oh * ow) * kh * kw * ci * co >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (long y = 0; y < oh; ++y) {
    for (long x = 0; x < ow; ++x) {
      double* o_px = out.data() + (y * ow + x) * co;
      for (std::size_t o = 0; o < co; ++o) o_px[o] = bias.empty() ? 0.0 : bias[o];
      for (long ky = 0; ky < kh; ++ky) {
        const long sy = tap_source(y, ky, st, pd, ih);
        if (sy < 0) continue;
        for (long kx = 0; kx < kw; ++kx) {
          const long sx = tap_source(x, kx, st, pd, iw);
          if (sx < 0) continue;
          const double* i_px = in.data() + (sy * iw + sx) * ci;
          const double* w_tap = weight.data() + (ky * kw + kx) * ci * co;
          for (std::size_t i = 0; i < ci; ++i) {
            const double v = i_px[i];
            const double* w_row = w_tap + i * co;
            for (std::size_t o = 0; o < co; ++o) o_px[o] += v * w_row[o];
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
  const long oh = static_cast<long>(g.conv_out_h()), ow = static_cast<long>(g.conv_out_w());
  const long kh = g.kernel_h, kw = g.kernel_w, st = g.stride, pd = g.pad;
  const long ih = g.in_h, iw = g.in_w;
  const std::size_t ci = g.in_c, co = g.out_c;
  const bool parallel = static_cast<std::size_t>(oh * ow) * kh * kw * ci * co >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (long y = 0; y < ih; ++y) {
    for (long x = 0; x < iw; ++x) {
      double* gi = grad_in.data() + (y * iw + x) * ci;
      for (long ky = 0; ky < kh; ++ky) {
        const long oy = tap_reader(y, ky, st, pd, oh);
        if (oy < 0) continue;
        for (long kx = 0; kx < kw; ++kx) {
          const long ox = tap_reader(x, kx, st, pd, ow);
          if (ox < 0) continue;
          const double* go = grad_out.data() + (oy * ow + ox) * co;
          const double* w_tap = weight.data() + (ky * kw + kx) * ci * co;
          for (std::size_t i = 0; i < ci; ++i) {
            const double* w_row = w_tap + i * co;
            double sum = 0.0;
            for (std::size_t o = 0; o < co; ++o) sum += go[o] * w_row[o];
            gi[i] += sum;
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_w,
                            std::span<double> grad_b) {
  const long oh = static_cast<long>(g.conv_out_h()), ow = static_cast<long>(g.conv_out_w());
  const long kh = g.kernel_h, kw = g.kernel_w, st = g.stride, pd = g.pad;
  const long ih = g.in_h, iw = g.in_w;
  const std::size_t ci = g.in_c, co = g.out_c;
  const long taps = kh * kw;
  const bool parallel = static_cast<std::size_t>(oh * ow) * taps * ci * co >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (long t = 0; t < taps; ++t) {
    const long ky = t / kw, kx = t % kw;
    double* gw_tap = grad_w.data() + t * ci * co;
    for (long y = 0; y < oh; ++y) {
      const long sy = tap_source(y, ky, st, pd, ih);
      if (sy < 0) continue;
      for (long x = 0; x < ow; ++x) {
        const long sx = tap_source(x, kx, st, pd, iw);
        if (sx < 0) continue;
        const double* i_px = in.data() + (sy * iw + sx) * ci;
        const double* go = grad_out.data() + (y * ow + x) * co;
        for (std::size_t i = 0; i < ci; ++i) {
          const double v = i_px[i];
          double* gw_row = gw_tap + i * co;
          for (std::size_t o = 0; o < co; ++o) gw_row[o] += v * go[o];
        }
      }
    }
  }
  if (!grad_b.empty()) {
    for (long p = 0; p < oh * ow; ++p)
      for (std::size_t o = 0; o < co; ++o) grad_b[o] += grad_out[p * co + o];
  }
}

void conv_transpose2d_forward(const ConvGeometry& g, std::span<const double> in,
                              std::span<const double> weight, std::span<const double> bias,
                              std::span<double> out) {
  const long oh = static_cast<long>(g.transposed_out_h());
  const long ow = static_cast<long>(g.transposed_out_w());
  const long kh = g.kernel_h, kw = g.kernel_w, st = g.stride, pd = g.pad;
  const long ih = g.in_h, iw = g.in_w;
  const std::size_t ci = g.in_c, co = g.out_c;
  const bool parallel = static_cast<std::size_t>(ih * iw) * kh * kw * ci * co >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (long y = 0; y < oh; ++y) {
    for (long x = 0; x < ow; ++x) {
      double* o_px = out.data() + (y * ow + x) * co;
      for (std::size_t o = 0; o < co; ++o) o_px[o] = bias.empty() ? 0.0 : bias[o];
      for (long ky = 0; ky < kh; ++ky) {
        const long sy = tap_reader(y, ky, st, pd, ih);
        if (sy < 0) continue;
        for (long kx = 0; kx < kw; ++kx) {
          const long sx = tap_reader(x, kx, st, pd, iw);
          if (sx < 0) continue;
          const double* i_px = in.data() + (sy * iw + sx) * ci;
          const double* w_tap = weight.data() + (ky * kw + kx) * ci * co;
          for (std::size_t i = 0; i < ci; ++i) {
            const double v = i_px[i];
            const double* w_row = w_tap + i * co;
            for (std::size_t o = 0; o < co; ++o) o_px[o] += v * w_row[o];
          }
        }
      }
    }
  }
}

void conv_transpose2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                                     std::span<const double> weight, std::span<double> grad_in) {
  const long oh = static_cast<long>(g.transposed_out_h());
  const long ow = static_cast<long>(g.transposed_out_w());
  const long kh = g.kernel_h, kw = g.kernel_w, st = g.stride, pd = g.pad;
  const long ih = g.in_h, iw = g.in_w;
  const std::size_t ci = g.in_c, co = g.out_c;
  const bool parallel = static_cast<std::size_t>(ih * iw) * kh * kw * ci * co >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (long y = 0; y < ih; ++y) {
    for (long x = 0; x < iw; ++x) {
      double* gi = grad_in.data() + (y * iw + x) * ci;
      for (long ky = 0; ky < kh; ++ky) {
        const long ty = tap_source(y, ky, st, pd, oh);
        if (ty < 0) continue;
        for (long kx = 0; kx < kw; ++kx) {
          const long tx = tap_source(x, kx, st, pd, ow);
          if (tx < 0) continue;
          const double* go = grad_out.data() + (ty * ow + tx) * co;
          const double* w_tap = weight.data() + (ky * kw + kx) * ci * co;
          for (std::size_t i = 0; i < ci; ++i) {
            const double* w_row = w_tap + i * co;
            double sum = 0.0;
            for (std::size_t o = 0; o < co; ++o) sum += go[o] * w_row[o];
            gi[i] += sum;
          }
        }
      }
    }
  }
}

void conv_transpose2d_backward_weight(const ConvGeometry& g, std::span<const double> in,
                                      std::span<const double> grad_out, std::span<double> grad_w,
                                      std::span<double> grad_b) {
  const long oh = static_cast<long>(g.transposed_out_h());
  const long ow = static_cast<long>(g.transposed_out_w());
  const long kh = g.kernel_h, kw = g.kernel_w, st = g.stride, pd = g.pad;
  const long ih = g.in_h, iw = g.in_w;
  const std::size_t ci = g.in_c, co = g.out_c;
  const long taps = kh * kw;
  const bool parallel = static_cast<std::size_t>(ih * iw) * taps * ci * co >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (long t = 0; t < taps; ++t) {
    const long ky = t / kw, kx = t % kw;
    double* gw_tap = grad_w.data() + t * ci * co;
    for (long y = 0; y < ih; ++y) {
      const long ty = tap_source(y, ky, st, pd, oh);
      if (ty < 0) continue;
      for (long x = 0; x < iw; ++x) {
        const long tx = tap_source(x, kx, st, pd, ow);
        if (tx < 0) continue;
        const double* i_px = in.data() + (y * iw + x) * ci;
        const double* go = grad_out.data() + (ty * ow + tx) * co;
        for (std::size_t i = 0; i < ci; ++i) {
          const double v = i_px[i];
          double* gw_row = gw_tap + i * co;
          for (std::size_t o = 0; o < co; ++o) gw_row[o] += v * go[o];
        }
      }
    }
  }
  if (!grad_b.empty()) {
    for (long p = 0; p < oh * ow; ++p)
      for (std::size_t o = 0; o < co; ++o) grad_b[o] += grad_out[p * co + o];
  }
}

void cassi_forward(const CassiGeometry& g, std::span<const double> shifted_mask,
                   std::span<const double> cube, std::span<double> measurement) {
  const long pixels = static_cast<long>(g.height * g.shifted_width);
  const std::size_t nb = g.bands;
#pragma omp parallel for schedule(static) if (pixels * nb >= kParallelWork)
  for (long p = 0; p < pixels; ++p) {
    const double* m = shifted_mask.data() + p * nb;
    const double* x = cube.data() + p * nb;
    double acc = 0.0;
    for (std::size_t l = 0; l < nb; ++l) acc += m[l] * x[l];
    measurement[p] = acc;
  }
}

void cassi_adjoint(const CassiGeometry& g, std::span<const double> shifted_mask,
                   std::span<const double> measurement, std::span<double> cube) {
  const long pixels = static_cast<long>(g.height * g.shifted_width);
  const std::size_t nb = g.bands;
#pragma omp parallel for schedule(static) if (pixels * nb >= kParallelWork)
  for (long p = 0; p < pixels; ++p) {
    const double* m = shifted_mask.data() + p * nb;
    double* x = cube.data() + p * nb;
    for (std::size_t l = 0; l < nb; ++l) x[l] = m[l] * measurement[p];
  }
}

}  // namespace dauhst::kernels::omp
