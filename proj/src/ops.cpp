#include "dauhst/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "dauhst/error.hpp"
#include "dauhst/kernels.hpp"

namespace dauhst::ad {

namespace k = dauhst::kernels;

namespace {

[[noreturn]] void shape_fail(Primitive kind, const std::string& detail) {
  throw ShapeError(std::string(primitive_name(kind)) + ": " + detail);
}

Tape& common_tape(Primitive kind, std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) continue;
    if (tape && v.tape() != tape) shape_fail(kind, "operands live on different tapes");
    tape = v.tape();
  }
  if (!tape) throw Error(std::string(primitive_name(kind)) + ": no bound operand");
  return *tape;
}

void require_same_shape(Primitive kind, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_fail(kind, to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

std::size_t normalize_axis(Primitive kind, int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    shape_fail(kind, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(r));
  }
  return static_cast<std::size_t>(a);
}

// (outer, extent, inner) decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit around_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Tensor permute_values(const Tensor& in, const std::vector<std::size_t>& perm) {
  const Shape& is = in.shape();
  const std::size_t rank = is.size();
  Shape os(rank);
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * is[i];
  std::vector<std::size_t> step(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    os[i] = is[perm[i]];
    step[i] = in_strides[perm[i]];
  }
  Tensor out(os);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  const double* x = in.data();
  double* y = out.data();
  const std::size_t last = rank - 1;
  const std::size_t n_last = os[last], s_last = step[last];
  for (std::size_t o = 0; o < out.size(); o += n_last) {
    for (std::size_t j = 0; j < n_last; ++j) y[o + j] = x[src + j * s_last];
    // advance the odometer over all but the last axis
    for (std::size_t ax = last; ax-- > 0;) {
      ++idx[ax];
      src += step[ax];
      if (idx[ax] < os[ax]) break;
      src -= step[ax] * os[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

struct MatmulPlan {
  k::GemmShape gemm;
  bool shared_b = false;
  Shape out_shape;
};

MatmulPlan plan_matmul(const Shape& as, const Shape& bs, bool ta, bool tb) {
  constexpr auto kind = Primitive::kMatmul;
  if (as.size() < 2 || bs.size() < 2) {
    shape_fail(kind, "operands need rank >= 2, got " + to_string(as) + " and " + to_string(bs));
  }
  MatmulPlan p;
  const std::size_t ra = as.size(), rb = bs.size();
  const std::size_t m = ta ? as[ra - 1] : as[ra - 2];
  const std::size_t ka = ta ? as[ra - 2] : as[ra - 1];
  const std::size_t kb = tb ? bs[rb - 1] : bs[rb - 2];
  const std::size_t n = tb ? bs[rb - 2] : bs[rb - 1];
  if (ka != kb) {
    shape_fail(kind, "inner dimensions differ (" + std::to_string(ka) + " vs " + std::to_string(kb) +
                         ") for " + to_string(as) + " x " + to_string(bs));
  }
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < ra; ++i) batch *= as[i];
  p.shared_b = rb == 2 && ra > 2;
  if (!p.shared_b && !std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2)) {
    shape_fail(kind, "leading dimensions differ: " + to_string(as) + " vs " + to_string(bs));
  }
  if (p.shared_b && ta) shape_fail(kind, "transposed lhs with a shared rhs is not supported");
  p.gemm = p.shared_b ? k::GemmShape{1, batch * m, n, ka, false, tb, false}
                      : k::GemmShape{batch, m, n, ka, ta, tb, false};
  p.out_shape.assign(as.begin(), as.end() - 2);
  p.out_shape.push_back(m);
  p.out_shape.push_back(n);
  return p;
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_slope(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double softplus_value(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename Value, typename Slope>
Var elementwise(Primitive kind, Var x, Value value, Slope slope) {
  Tape& tape = common_tape(kind, {x});
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = value(in[i]);
  return tape.record(kind, std::move(out), {x}, [slope](const BackwardArgs& a) {
    if (!a.grad_inputs[0]) return;
    const Tensor& in = *a.inputs[0];
    Tensor& g = *a.grad_inputs[0];
    for (std::size_t i = 0; i < in.size(); ++i) g[i] += a.grad_output[i] * slope(in[i], a.output[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  constexpr auto kind = Primitive::kAdd;
  Tape& tape = common_tape(kind, {a, b});
  require_same_shape(kind, a.value(), b.value());
  Tensor out = a.value() + b.value();
  return tape.record(kind, std::move(out), {a, b}, [](const BackwardArgs& g) {
    if (g.grad_inputs[0]) *g.grad_inputs[0] += g.grad_output;
    if (g.grad_inputs[1]) *g.grad_inputs[1] += g.grad_output;
  });
}

Var sub(Var a, Var b) {
  constexpr auto kind = Primitive::kSub;
  Tape& tape = common_tape(kind, {a, b});
  require_same_shape(kind, a.value(), b.value());
  Tensor out = a.value() - b.value();
  return tape.record(kind, std::move(out), {a, b}, [](const BackwardArgs& g) {
    if (g.grad_inputs[0]) *g.grad_inputs[0] += g.grad_output;
    if (g.grad_inputs[1]) *g.grad_inputs[1] -= g.grad_output;
  });
}

Var multiply(Var a, Var b) {
  constexpr auto kind = Primitive::kMultiply;
  Tape& tape = common_tape(kind, {a, b});
  require_same_shape(kind, a.value(), b.value());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return tape.record(kind, std::move(out), {a, b}, [](const BackwardArgs& g) {
    const Tensor& x = *g.inputs[0];
    const Tensor& y = *g.inputs[1];
    if (g.grad_inputs[0])
      for (std::size_t i = 0; i < x.size(); ++i) (*g.grad_inputs[0])[i] += g.grad_output[i] * y[i];
    if (g.grad_inputs[1])
      for (std::size_t i = 0; i < x.size(); ++i) (*g.grad_inputs[1])[i] += g.grad_output[i] * x[i];
  });
}

Var scale(Var a, double factor) {
  constexpr auto kind = Primitive::kScalarScale;
  Tape& tape = common_tape(kind, {a});
  Tensor out = a.value() * factor;
  return tape.record(kind, std::move(out), {a}, [factor](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    Tensor& gi = *g.grad_inputs[0];
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += factor * g.grad_output[i];
  });
}

Var scale(Var a, Var s) {
  constexpr auto kind = Primitive::kScalarScale;
  Tape& tape = common_tape(kind, {a, s});
  if (s.value().size() != 1) shape_fail(kind, "scale operand must hold one value, got " + to_string(s.shape()));
  Tensor out = a.value() * s.value()[0];
  return tape.record(kind, std::move(out), {a, s}, [](const BackwardArgs& g) {
    const double factor = (*g.inputs[1])[0];
    if (g.grad_inputs[0]) {
      Tensor& gi = *g.grad_inputs[0];
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += factor * g.grad_output[i];
    }
    if (g.grad_inputs[1]) (*g.grad_inputs[1])[0] += dot(g.grad_output, *g.inputs[0]);
  });
}

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  constexpr auto kind = Primitive::kMatmul;
  Tape& tape = common_tape(kind, {a, b});
  const MatmulPlan plan = plan_matmul(a.shape(), b.shape(), trans_a, trans_b);
  Tensor out(plan.out_shape);
  k::omp::gemm(plan.gemm, a.value().values(), b.value().values(), out.values());
  return tape.record(kind, std::move(out), {a, b}, [plan](const BackwardArgs& g) {
    const auto& s = plan.gemm;
    const auto dc = g.grad_output.values();
    if (g.grad_inputs[0]) {
      const auto bv = g.inputs[1]->values();
      if (!s.trans_a) {
        k::omp::gemm({s.batch, s.m, s.k, s.n, false, !s.trans_b, true}, dc, bv,
                     g.grad_inputs[0]->values());
      } else {
        k::omp::gemm({s.batch, s.k, s.m, s.n, s.trans_b, true, true}, bv, dc,
                     g.grad_inputs[0]->values());
      }
    }
    if (g.grad_inputs[1]) {
      const auto av = g.inputs[0]->values();
      if (!s.trans_b) {
        k::omp::gemm({s.batch, s.k, s.n, s.m, !s.trans_a, false, true}, av, dc,
                     g.grad_inputs[1]->values());
      } else {
        k::omp::gemm({s.batch, s.n, s.k, s.m, true, s.trans_a, true}, dc, av,
                     g.grad_inputs[1]->values());
      }
    }
  });
}

namespace {

k::ConvGeometry conv_geometry(Primitive kind, const Tensor& x, const Tensor& w, const Var& bias,
                              std::size_t stride, std::size_t pad) {
  if (x.rank() != 3) shape_fail(kind, "input must be (H, W, C), got " + to_string(x.shape()));
  if (w.rank() != 4) shape_fail(kind, "weight must be (kh, kw, Cin, Cout), got " + to_string(w.shape()));
  if (w.dim(2) != x.dim(2)) {
    shape_fail(kind, "input has " + std::to_string(x.dim(2)) + " channels, weight expects " +
                         std::to_string(w.dim(2)));
  }
  if (bias.valid() && bias.shape() != Shape{w.dim(3)}) {
    shape_fail(kind, "bias must be (" + std::to_string(w.dim(3)) + "), got " + to_string(bias.shape()));
  }
  if (stride == 0) shape_fail(kind, "stride must be positive");
  return {x.dim(0), x.dim(1), x.dim(2), w.dim(3), w.dim(0), w.dim(1), stride, pad};
}

std::span<const double> bias_values(const Var& bias) {
  return bias.valid() ? bias.value().values() : std::span<const double>{};
}

std::vector<Var> with_optional(Var a, Var b, Var c) {
  std::vector<Var> v{a, b};
  if (c.valid()) v.push_back(c);
  return v;
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  constexpr auto kind = Primitive::kConv2d;
  Tape& tape = common_tape(kind, {x, weight, bias});
  const auto geo = conv_geometry(kind, x.value(), weight.value(), bias, stride, pad);
  if (geo.in_h + 2 * pad < geo.kernel_h || geo.in_w + 2 * pad < geo.kernel_w) {
    shape_fail(kind, "kernel larger than padded input " + to_string(x.shape()));
  }
  Tensor out({geo.conv_out_h(), geo.conv_out_w(), geo.out_c});
  k::omp::conv2d_forward(geo, x.value().values(), weight.value().values(), bias_values(bias),
                         out.values());
  return tape.record(kind, std::move(out), with_optional(x, weight, bias), [geo](const BackwardArgs& g) {
    const auto go = g.grad_output.values();
    if (g.grad_inputs[0]) {
      k::omp::conv2d_backward_input(geo, go, g.inputs[1]->values(), g.grad_inputs[0]->values());
    }
    const bool has_bias = g.inputs.size() == 3;
    Tensor* gb = has_bias ? g.grad_inputs[2] : nullptr;
    if (g.grad_inputs[1]) {
      k::omp::conv2d_backward_weight(geo, g.inputs[0]->values(), go, g.grad_inputs[1]->values(),
                                     gb ? gb->values() : std::span<double>{});
    } else if (gb) {
      for (std::size_t p = 0; p < go.size(); ++p) (*gb)[p % geo.out_c] += go[p];
    }
  });
}

Var conv_transpose2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  constexpr auto kind = Primitive::kConvTranspose2d;
  Tape& tape = common_tape(kind, {x, weight, bias});
  const auto geo = conv_geometry(kind, x.value(), weight.value(), bias, stride, pad);
  if ((geo.in_h - 1) * stride + geo.kernel_h <= 2 * pad ||
      (geo.in_w - 1) * stride + geo.kernel_w <= 2 * pad) {
    shape_fail(kind, "padding removes the whole output for input " + to_string(x.shape()));
  }
  Tensor out({geo.transposed_out_h(), geo.transposed_out_w(), geo.out_c});
  k::omp::conv_transpose2d_forward(geo, x.value().values(), weight.value().values(),
                                   bias_values(bias), out.values());
  return tape.record(kind, std::move(out), with_optional(x, weight, bias), [geo](const BackwardArgs& g) {
    const auto go = g.grad_output.values();
    if (g.grad_inputs[0]) {
      k::omp::conv_transpose2d_backward_input(geo, go, g.inputs[1]->values(),
                                              g.grad_inputs[0]->values());
    }
    const bool has_bias = g.inputs.size() == 3;
    Tensor* gb = has_bias ? g.grad_inputs[2] : nullptr;
    if (g.grad_inputs[1]) {
      k::omp::conv_transpose2d_backward_weight(geo, g.inputs[0]->values(), go,
                                               g.grad_inputs[1]->values(),
                                               gb ? gb->values() : std::span<double>{});
    } else if (gb) {
      for (std::size_t p = 0; p < go.size(); ++p) (*gb)[p % geo.out_c] += go[p];
    }
  });
}

Var fully_connected(Var x, Var weight, Var bias) {
  constexpr auto kind = Primitive::kFullyConnected;
  Tape& tape = common_tape(kind, {x, weight, bias});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (wv.rank() != 2) shape_fail(kind, "weight must be (in, out), got " + to_string(wv.shape()));
  const std::size_t in = wv.dim(0), outc = wv.dim(1);
  if (xv.shape().back() != in) {
    shape_fail(kind, "input " + to_string(xv.shape()) + " does not end in " + std::to_string(in));
  }
  if (bias.valid() && bias.shape() != Shape{outc}) {
    shape_fail(kind, "bias must be (" + std::to_string(outc) + "), got " + to_string(bias.shape()));
  }
  const std::size_t rows = xv.size() / in;
  Shape os = xv.shape();
  os.back() = outc;
  Tensor out(os);
  k::omp::gemm({1, rows, outc, in, false, false, false}, xv.values(), wv.values(), out.values());
  if (bias.valid()) {
    const Tensor& b = bias.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < outc; ++o) out[r * outc + o] += b[o];
  }
  return tape.record(kind, std::move(out), with_optional(x, weight, bias),
                     [rows, in, outc](const BackwardArgs& g) {
                       const auto go = g.grad_output.values();
                       if (g.grad_inputs[0]) {
                         k::omp::gemm({1, rows, in, outc, false, true, true}, go,
                                      g.inputs[1]->values(), g.grad_inputs[0]->values());
                       }
                       if (g.grad_inputs[1]) {
                         k::omp::gemm({1, in, outc, rows, true, false, true}, g.inputs[0]->values(),
                                      go, g.grad_inputs[1]->values());
                       }
                       if (g.inputs.size() == 3 && g.grad_inputs[2]) {
                         Tensor& gb = *g.grad_inputs[2];
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t o = 0; o < outc; ++o) gb[o] += go[r * outc + o];
                       }
                     });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  constexpr auto kind = Primitive::kLayerNorm;
  Tape& tape = common_tape(kind, {x, gamma, beta});
  const Tensor& xv = x.value();
  const std::size_t c = xv.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    shape_fail(kind, "scale/shift must be (" + std::to_string(c) + "), got " +
                         to_string(gamma.shape()) + " and " + to_string(beta.shape()));
  }
  const std::size_t rows = xv.size() / c;
  Tensor out(xv.shape());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mean = 0.0;
    for (std::size_t i = 0; i < c; ++i) mean += row[i];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t i = 0; i < c; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < c; ++i) out[r * c + i] = (row[i] - mean) * inv * gv[i] + bv[i];
  }
  return tape.record(kind, std::move(out), {x, gamma, beta}, [rows, c, eps](const BackwardArgs& g) {
    const Tensor& xv = *g.inputs[0];
    const Tensor& gv = *g.inputs[1];
    std::vector<double> xhat(c), dxhat(c);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = xv.data() + r * c;
      const double* go = g.grad_output.data() + r * c;
      double mean = 0.0;
      for (std::size_t i = 0; i < c; ++i) mean += row[i];
      mean /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t i = 0; i < c; ++i) var += (row[i] - mean) * (row[i] - mean);
      var /= static_cast<double>(c);
      const double inv = 1.0 / std::sqrt(var + eps);
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t i = 0; i < c; ++i) {
        xhat[i] = (row[i] - mean) * inv;
        dxhat[i] = go[i] * gv[i];
        mean_d += dxhat[i];
        mean_dx += dxhat[i] * xhat[i];
      }
      mean_d /= static_cast<double>(c);
      mean_dx /= static_cast<double>(c);
      if (g.grad_inputs[0]) {
        double* gx = g.grad_inputs[0]->data() + r * c;
        for (std::size_t i = 0; i < c; ++i) gx[i] += inv * (dxhat[i] - mean_d - xhat[i] * mean_dx);
      }
      if (g.grad_inputs[1])
        for (std::size_t i = 0; i < c; ++i) (*g.grad_inputs[1])[i] += go[i] * xhat[i];
      if (g.grad_inputs[2])
        for (std::size_t i = 0; i < c; ++i) (*g.grad_inputs[2])[i] += go[i];
    }
  });
}

Var softmax(Var x, int axis) {
  constexpr auto kind = Primitive::kSoftmax;
  Tape& tape = common_tape(kind, {x});
  const Tensor& xv = x.value();
  const AxisSplit s = around_axis(xv.shape(), normalize_axis(kind, axis, xv.rank()));
  Tensor out(xv.shape());
  const long lines = static_cast<long>(s.outer * s.inner);
#pragma omp parallel for schedule(static) if (xv.size() >= (1u << 15))
  for (long line = 0; line < lines; ++line) {
    const std::size_t o = static_cast<std::size_t>(line) / s.inner;
    const std::size_t in = static_cast<std::size_t>(line) % s.inner;
    const std::size_t base = o * s.extent * s.inner + in;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < s.extent; ++j) mx = std::max(mx, xv[base + j * s.inner]);
    double total = 0.0;
    for (std::size_t j = 0; j < s.extent; ++j) {
      const double e = std::exp(xv[base + j * s.inner] - mx);
      out[base + j * s.inner] = e;
      total += e;
    }
    for (std::size_t j = 0; j < s.extent; ++j) out[base + j * s.inner] /= total;
  }
  return tape.record(kind, std::move(out), {x}, [s](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    Tensor& gi = *g.grad_inputs[0];
    const Tensor& y = g.output;
    const Tensor& go = g.grad_output;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double inner = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) inner += go[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t q = base + j * s.inner;
          gi[q] += y[q] * (go[q] - inner);
        }
      }
  });
}

Var gelu(Var x) {
  return elementwise(Primitive::kGelu, x, gelu_value, [](double in, double) { return gelu_slope(in); });
}

Var softplus(Var x) {
  return elementwise(Primitive::kSoftplus, x, softplus_value, [](double in, double) { return sigmoid(in); });
}

Var sqrt(Var x) {
  constexpr auto kind = Primitive::kSqrt;
  for (double v : x.value().values()) {
    if (v < 0) throw ValueError("sqrt: negative input " + std::to_string(v));
  }
  // d sqrt / dx is unbounded at 0; report 0 there instead of propagating inf.
  return elementwise(kind, x, [](double v) { return std::sqrt(v); },
                     [](double, double out) { return out > 0 ? 0.5 / out : 0.0; });
}

Var global_average_pool(Var x) {
  constexpr auto kind = Primitive::kGlobalAveragePool;
  Tape& tape = common_tape(kind, {x});
  const Tensor& xv = x.value();
  if (xv.rank() != 3) shape_fail(kind, "input must be (H, W, C), got " + to_string(xv.shape()));
  const std::size_t c = xv.dim(2), pixels = xv.dim(0) * xv.dim(1);
  Tensor out({c});
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t i = 0; i < c; ++i) out[i] += xv[p * c + i];
  out *= 1.0 / static_cast<double>(pixels);
  return tape.record(kind, std::move(out), {x}, [c, pixels](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    Tensor& gi = *g.grad_inputs[0];
    const double w = 1.0 / static_cast<double>(pixels);
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t i = 0; i < c; ++i) gi[p * c + i] += w * g.grad_output[i];
  });
}

Var sum(Var x) {
  constexpr auto kind = Primitive::kSum;
  Tape& tape = common_tape(kind, {x});
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return tape.record(kind, Tensor::scalar(total), {x}, [](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    Tensor& gi = *g.grad_inputs[0];
    const double go = g.grad_output[0];
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go;
  });
}

Var reshape(Var x, Shape shape) {
  constexpr auto kind = Primitive::kReshape;
  Tape& tape = common_tape(kind, {x});
  if (numel(shape) != x.value().size()) {
    shape_fail(kind, "cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor out = x.value().reshaped(std::move(shape));
  return tape.record(kind, std::move(out), {x}, [](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    Tensor& gi = *g.grad_inputs[0];
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g.grad_output[i];
  });
}

Var permute(Var x, std::vector<std::size_t> perm) {
  constexpr auto kind = Primitive::kPermute;
  Tape& tape = common_tape(kind, {x});
  const std::size_t rank = x.value().rank();
  std::vector<std::size_t> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  bool ok = sorted.size() == rank;
  for (std::size_t i = 0; ok && i < rank; ++i) ok = sorted[i] == i;
  if (!ok) shape_fail(kind, "invalid permutation for rank " + std::to_string(rank));
  Tensor out = permute_values(x.value(), perm);
  return tape.record(kind, std::move(out), {x}, [inv = inverse_permutation(perm)](const BackwardArgs& g) {
    if (g.grad_inputs[0]) *g.grad_inputs[0] += permute_values(g.grad_output, inv);
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  constexpr auto kind = Primitive::kConcat;
  if (parts.empty()) shape_fail(kind, "nothing to concatenate");
  Tape& tape = common_tape(kind, {parts.front()});
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) shape_fail(kind, "axis out of range for " + to_string(first));
  Shape os = first;
  os[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Var& p : parts) {
    common_tape(kind, {parts.front(), p});
    Shape ps = p.shape();
    if (ps.size() != first.size()) shape_fail(kind, to_string(first) + " vs " + to_string(ps));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (i != axis && ps[i] != first[i]) shape_fail(kind, to_string(first) + " vs " + to_string(ps));
    }
    extents.push_back(ps[axis]);
    os[axis] += ps[axis];
  }
  const AxisSplit s = around_axis(os, axis);
  Tensor out(os);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& pv = parts[pi].value();
    const std::size_t block = extents[pi] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.data() + o * block, block, out.data() + o * s.extent * s.inner + offset * s.inner);
    offset += extents[pi];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record(kind, std::move(out), std::move(inputs), [s, extents](const BackwardArgs& g) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < extents.size(); ++pi) {
      const std::size_t block = extents[pi] * s.inner;
      if (Tensor* gi = g.grad_inputs[pi]) {
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* src = g.grad_output.data() + o * s.extent * s.inner + offset * s.inner;
          double* dst = gi->data() + o * block;
          for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
        }
      }
      offset += extents[pi];
    }
  });
}

std::vector<Var> split(Var x, std::size_t axis, std::span<const std::size_t> sizes) {
  constexpr auto kind = Primitive::kSplit;
  Tape& tape = common_tape(kind, {x});
  const Shape is = x.shape();  // copied: recording below may reallocate node storage
  if (axis >= is.size()) shape_fail(kind, "axis out of range for " + to_string(is));
  std::size_t total = 0;
  for (auto sz : sizes) total += sz;
  if (total != is[axis] || std::find(sizes.begin(), sizes.end(), 0u) != sizes.end()) {
    shape_fail(kind, "sizes do not partition extent " + std::to_string(is[axis]) + " of " + to_string(is));
  }
  const AxisSplit s = around_axis(is, axis);
  std::vector<Var> pieces;
  std::size_t offset = 0;
  for (std::size_t sz : sizes) {
    Shape ps = is;
    ps[axis] = sz;
    Tensor out(ps);
    const std::size_t block = sz * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(x.value().data() + o * s.extent * s.inner + offset * s.inner, block,
                  out.data() + o * block);
    pieces.push_back(tape.record(kind, std::move(out), {x}, [s, offset, block](const BackwardArgs& g) {
      if (!g.grad_inputs[0]) return;
      for (std::size_t o = 0; o < s.outer; ++o) {
        double* dst = g.grad_inputs[0]->data() + o * s.extent * s.inner + offset * s.inner;
        const double* src = g.grad_output.data() + o * block;
        for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
      }
    }));
    offset += sz;
  }
  return pieces;
}

Var tile(Var x, std::size_t axis, std::size_t reps) {
  constexpr auto kind = Primitive::kTile;
  Tape& tape = common_tape(kind, {x});
  const Shape& is = x.shape();
  if (axis >= is.size()) shape_fail(kind, "axis out of range for " + to_string(is));
  if (reps == 0) shape_fail(kind, "repetition count must be positive");
  const AxisSplit s = around_axis(is, axis);
  Shape os = is;
  os[axis] *= reps;
  Tensor out(os);
  const std::size_t block = s.extent * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t r = 0; r < reps; ++r)
      std::copy_n(x.value().data() + o * block, block, out.data() + (o * reps + r) * block);
  return tape.record(kind, std::move(out), {x}, [s, reps, block](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t r = 0; r < reps; ++r) {
        const double* src = g.grad_output.data() + (o * reps + r) * block;
        double* dst = g.grad_inputs[0]->data() + o * block;
        for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
      }
  });
}

Var pad_reflect(Var x, std::size_t pad_bottom, std::size_t pad_right) {
  constexpr auto kind = Primitive::kPadReflect;
  Tape& tape = common_tape(kind, {x});
  const Tensor& xv = x.value();
  if (xv.rank() != 3) shape_fail(kind, "input must be (H, W, C), got " + to_string(xv.shape()));
  const std::size_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  if (pad_bottom >= h || pad_right >= w) {
    shape_fail(kind, "reflection padding (" + std::to_string(pad_bottom) + ", " +
                         std::to_string(pad_right) + ") too large for " + to_string(xv.shape()));
  }
  const std::size_t oh = h + pad_bottom, ow = w + pad_right;
  auto mirror = [](std::size_t i, std::size_t n) { return i < n ? i : 2 * (n - 1) - i; };
  Tensor out({oh, ow, c});
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t xx = 0; xx < ow; ++xx)
      std::copy_n(xv.data() + (mirror(y, h) * w + mirror(xx, w)) * c, c, out.data() + (y * ow + xx) * c);
  return tape.record(kind, std::move(out), {x}, [=](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    Tensor& gi = *g.grad_inputs[0];
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* src = g.grad_output.data() + (y * ow + xx) * c;
        double* dst = gi.data() + (mirror(y, h) * w + mirror(xx, w)) * c;
        for (std::size_t i = 0; i < c; ++i) dst[i] += src[i];
      }
  });
}

Var crop(Var x, std::size_t height, std::size_t width) {
  constexpr auto kind = Primitive::kCrop;
  Tape& tape = common_tape(kind, {x});
  const Tensor& xv = x.value();
  if (xv.rank() != 3) shape_fail(kind, "input must be (H, W, C), got " + to_string(xv.shape()));
  const std::size_t w = xv.dim(1), c = xv.dim(2);
  if (height == 0 || width == 0 || height > xv.dim(0) || width > w) {
    shape_fail(kind, "cannot crop " + to_string(xv.shape()) + " to " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  Tensor out({height, width, c});
  for (std::size_t y = 0; y < height; ++y)
    std::copy_n(xv.data() + y * w * c, width * c, out.data() + y * width * c);
  return tape.record(kind, std::move(out), {x}, [=](const BackwardArgs& g) {
    if (!g.grad_inputs[0]) return;
    for (std::size_t y = 0; y < height; ++y) {
      const double* src = g.grad_output.data() + y * width * c;
      double* dst = g.grad_inputs[0]->data() + y * w * c;
      for (std::size_t j = 0; j < width * c; ++j) dst[j] += src[j];
    }
  });
}

std::vector<Var> apply_primitive(Primitive kind, std::span<const Var> inputs, const PrimitiveAttrs& attrs) {
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (inputs.size() < lo || inputs.size() > hi) {
      shape_fail(kind, "expects " + std::to_string(lo) + (lo == hi ? "" : "-" + std::to_string(hi)) +
                           " inputs, got " + std::to_string(inputs.size()));
    }
  };
  auto opt = [&](std::size_t i) { return i < inputs.size() ? inputs[i] : Var{}; };
  switch (kind) {
    case Primitive::kAdd: need(2, 2); return {add(inputs[0], inputs[1])};
    case Primitive::kSub: need(2, 2); return {sub(inputs[0], inputs[1])};
    case Primitive::kMultiply: need(2, 2); return {multiply(inputs[0], inputs[1])};
    case Primitive::kScalarScale:
      need(1, 2);
      return {inputs.size() == 2 ? scale(inputs[0], inputs[1]) : scale(inputs[0], attrs.factor)};
    case Primitive::kMatmul: need(2, 2); return {matmul(inputs[0], inputs[1], attrs.trans_a, attrs.trans_b)};
    case Primitive::kConv2d: need(2, 3); return {conv2d(inputs[0], inputs[1], opt(2), attrs.stride, attrs.pad)};
    case Primitive::kConvTranspose2d:
      need(2, 3);
      return {conv_transpose2d(inputs[0], inputs[1], opt(2), attrs.stride, attrs.pad)};
    case Primitive::kFullyConnected: need(2, 3); return {fully_connected(inputs[0], inputs[1], opt(2))};
    case Primitive::kLayerNorm: need(3, 3); return {layer_norm(inputs[0], inputs[1], inputs[2], attrs.eps)};
    case Primitive::kSoftmax: need(1, 1); return {softmax(inputs[0], attrs.axis)};
    case Primitive::kGelu: need(1, 1); return {gelu(inputs[0])};
    case Primitive::kGlobalAveragePool: need(1, 1); return {global_average_pool(inputs[0])};
    case Primitive::kReshape: need(1, 1); return {reshape(inputs[0], attrs.shape)};
    case Primitive::kPermute: need(1, 1); return {permute(inputs[0], attrs.perm)};
    case Primitive::kConcat:
      need(1, inputs.size());
      return {concat(inputs, normalize_axis(kind, attrs.axis, inputs[0].value().rank()))};
    case Primitive::kSplit:
      need(1, 1);
      return split(inputs[0], normalize_axis(kind, attrs.axis, inputs[0].value().rank()), attrs.sizes);
    case Primitive::kSum: need(1, 1); return {sum(inputs[0])};
    case Primitive::kSqrt: need(1, 1); return {sqrt(inputs[0])};
    case Primitive::kSoftplus: need(1, 1); return {softplus(inputs[0])};
    case Primitive::kTile:
      need(1, 1);
      return {tile(inputs[0], normalize_axis(kind, attrs.axis, inputs[0].value().rank()), attrs.reps)};
    case Primitive::kPadReflect: need(1, 1); return {pad_reflect(inputs[0], attrs.pad, attrs.pad_right)};
    case Primitive::kCrop: need(1, 1); return {crop(inputs[0], attrs.shape.at(0), attrs.shape.at(1))};
    case Primitive::kLeaf:
    case Primitive::kDataProjection:
    case Primitive::kBandUnshift:
      break;
  }
  throw ValueError("primitive '" + std::string(primitive_name(kind)) + "' cannot be applied generically");
}

}  // namespace dauhst::ad
