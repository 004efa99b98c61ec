#include "dauhst/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dauhst/cassi.hpp"
#include "dauhst/dauf.hpp"
#include "dauhst/error.hpp"
#include "dauhst/ops.hpp"
#include "dauhst/random.hpp"

namespace dauhst::ad {

namespace {

double evaluate(const TensorFunction& fn, std::span<const Tensor> inputs) {
  Tape tape(false);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  Var out = fn(tape, vars);
  if (out.value().size() != 1) {
    throw ShapeError("grad_check: function must return a scalar, got " + to_string(out.shape()));
  }
  return out.value()[0];
}

}  // namespace

GradCheckResult grad_check_detailed(const TensorFunction& fn, std::span<const Tensor> inputs,
                                    double step) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  Var out = fn(tape, vars);
  if (out.value().size() != 1) {
    throw ShapeError("grad_check: function must return a scalar, got " + to_string(out.shape()) +
                     " (reduce with sum first)");
  }
  std::vector<Tensor> analytic;
  if (tape.entry_count() > 0 && out.requires_grad()) {
    tape.backward(out);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  } else {
    for (const Tensor& t : inputs) analytic.push_back(Tensor::zeros_like(t));
  }

  GradCheckResult result;
  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (std::size_t j = 0; j < probe[i].size(); ++j) {
      const double saved = probe[i][j];
      probe[i][j] = saved + step;
      const double up = evaluate(fn, probe);
      probe[i][j] = saved - step;
      const double down = evaluate(fn, probe);
      probe[i][j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i][j];
      double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
      if (err > result.max_relative_error) result = {err, i, j};
    }
  }
  return result;
}

namespace {

// Scalar probe sum(out * weights); weights are fixed per case so the check sees a
// generic cotangent rather than all-ones.
Var weighted_sum(Tape& tape, Var out, const Tensor& weights) {
  return sum(multiply(out, tape.constant(weights.reshaped(out.shape()))));
}

}  // namespace

std::vector<PrimitiveCheck> check_primitive_gradients(std::uint64_t seed, double step) {
  Rng rng(seed);
  std::vector<PrimitiveCheck> results;
  auto run = [&](Primitive kind, std::string label, std::vector<Tensor> inputs, Shape out_shape,
                 std::function<Var(std::span<const Var>)> body) {
    const Tensor weights = uniform_tensor(std::move(out_shape), rng);
    TensorFunction fn = [&](Tape& tape, std::span<const Var> v) {
      return weighted_sum(tape, body(v), weights);
    };
    results.push_back({kind, std::move(label), grad_check(fn, inputs, step)});
  };
  auto u = [&](Shape s, double lo = -1.0, double hi = 1.0) { return uniform_tensor(std::move(s), rng, lo, hi); };

  run(Primitive::kAdd, "add", {u({3, 4}), u({3, 4})}, {3, 4}, [](auto v) { return add(v[0], v[1]); });
  run(Primitive::kSub, "sub", {u({3, 4}), u({3, 4})}, {3, 4}, [](auto v) { return sub(v[0], v[1]); });
  run(Primitive::kMultiply, "multiply", {u({3, 4}), u({3, 4})}, {3, 4},
      [](auto v) { return multiply(v[0], v[1]); });
  run(Primitive::kScalarScale, "scalar-scale(constant)", {u({3, 4})}, {3, 4},
      [](auto v) { return scale(v[0], 1.7); });
  run(Primitive::kScalarScale, "scalar-scale(tensor)", {u({3, 4}), u({1})}, {3, 4},
      [](auto v) { return scale(v[0], v[1]); });
  run(Primitive::kMatmul, "matmul", {u({2, 3, 4}), u({2, 4, 5})}, {2, 3, 5},
      [](auto v) { return matmul(v[0], v[1]); });
  run(Primitive::kMatmul, "matmul(trans_a,trans_b)", {u({2, 4, 3}), u({2, 5, 4})}, {2, 3, 5},
      [](auto v) { return matmul(v[0], v[1], true, true); });
  run(Primitive::kMatmul, "matmul(trans_b)", {u({2, 3, 4}), u({2, 5, 4})}, {2, 3, 5},
      [](auto v) { return matmul(v[0], v[1], false, true); });
  run(Primitive::kMatmul, "matmul(shared rhs)", {u({2, 3, 4}), u({4, 5})}, {2, 3, 5},
      [](auto v) { return matmul(v[0], v[1]); });
  run(Primitive::kConv2d, "conv2d(3x3,pad1)", {u({5, 6, 3}), u({3, 3, 3, 4}), u({4})}, {5, 6, 4},
      [](auto v) { return conv2d(v[0], v[1], v[2], 1, 1); });
  run(Primitive::kConv2d, "conv2d(4x4,stride2,pad1)", {u({6, 6, 2}), u({4, 4, 2, 3}), u({3})}, {3, 3, 3},
      [](auto v) { return conv2d(v[0], v[1], v[2], 2, 1); });
  run(Primitive::kConvTranspose2d, "transposed-conv2d(2x2,stride2)", {u({3, 4, 3}), u({2, 2, 3, 2}), u({2})},
      {6, 8, 2}, [](auto v) { return conv_transpose2d(v[0], v[1], v[2], 2, 0); });
  run(Primitive::kConvTranspose2d, "transposed-conv2d(3x3,stride2,pad1)", {u({3, 3, 2}), u({3, 3, 2, 2})},
      {5, 5, 2}, [](auto v) { return conv_transpose2d(v[0], v[1], Var{}, 2, 1); });
  run(Primitive::kFullyConnected, "fully-connected", {u({5, 3}), u({3, 4}), u({4})}, {5, 4},
      [](auto v) { return fully_connected(v[0], v[1], v[2]); });
  run(Primitive::kLayerNorm, "layer-norm", {u({4, 6}), u({6}, 0.5, 1.5), u({6})}, {4, 6},
      [](auto v) { return layer_norm(v[0], v[1], v[2]); });
  run(Primitive::kSoftmax, "softmax(last axis)", {u({3, 4, 5}, -2, 2)}, {3, 4, 5},
      [](auto v) { return softmax(v[0], -1); });
  run(Primitive::kSoftmax, "softmax(axis 0)", {u({3, 4, 5}, -2, 2)}, {3, 4, 5},
      [](auto v) { return softmax(v[0], 0); });
  run(Primitive::kGelu, "gelu", {u({3, 4}, -3, 3)}, {3, 4}, [](auto v) { return gelu(v[0]); });
  run(Primitive::kSoftplus, "softplus", {u({3, 4}, -3, 3)}, {3, 4}, [](auto v) { return softplus(v[0]); });
  run(Primitive::kSqrt, "sqrt", {u({3, 4}, 0.5, 2.0)}, {3, 4}, [](auto v) { return sqrt(v[0]); });
  run(Primitive::kGlobalAveragePool, "global-average-pool", {u({3, 4, 5})}, {5},
      [](auto v) { return global_average_pool(v[0]); });
  run(Primitive::kReshape, "reshape", {u({2, 3, 4})}, {6, 4}, [](auto v) { return reshape(v[0], {6, 4}); });
  run(Primitive::kPermute, "axis-permute", {u({2, 3, 4})}, {4, 2, 3},
      [](auto v) { return permute(v[0], {2, 0, 1}); });
  run(Primitive::kConcat, "concat", {u({2, 3, 2}), u({2, 1, 2})}, {2, 4, 2},
      [](auto v) { return concat(v, 1); });
  run(Primitive::kSplit, "split", {u({2, 3, 4})}, {2, 3, 3}, [](auto v) {
    const std::size_t sizes[] = {1, 3};
    return split(v[0], 2, sizes)[1];
  });
  run(Primitive::kSum, "sum", {u({3, 4})}, {1}, [](auto v) { return sum(v[0]); });
  run(Primitive::kTile, "tile", {u({2, 1, 3})}, {2, 4, 3}, [](auto v) { return tile(v[0], 1, 4); });
  run(Primitive::kPadReflect, "pad-reflect", {u({4, 5, 2})}, {6, 8, 2},
      [](auto v) { return pad_reflect(v[0], 2, 3); });
  run(Primitive::kCrop, "crop", {u({4, 5, 2})}, {3, 3, 2}, [](auto v) { return crop(v[0], 3, 3); });
  {
    const cassi::SensingOperator op(uniform_tensor({3, 4}, rng, 0.0, 1.0), 1, 3);
    run(Primitive::kDataProjection, "data-projection", {u({3, 6}), u({3, 6, 3}), u({1}, 0.2, 2.0)}, {3, 6, 3},
        [&op](auto v) { return dauf::linear_projection(v[0], v[1], v[2], op); });
  }
  run(Primitive::kBandUnshift, "band-unshift", {u({3, 8, 3})}, {3, 4, 3},
      [](auto v) { return dauf::band_unshift(v[0], 4, 2); });
  return results;
}

}  // namespace dauhst::ad
