#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dauhst/autodiff.hpp"

namespace dauhst::ad {

/// Scalar-valued function of tape variables; must be deterministic.
using TensorFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of `fn` against central differences with `step`.
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
/// Throws ShapeError when `fn` does not return a single value.
GradCheckResult grad_check_detailed(const TensorFunction& fn, std::span<const Tensor> inputs,
                                    double step = 1e-5);

inline double grad_check(const TensorFunction& fn, std::span<const Tensor> inputs, double step = 1e-5) {
  return grad_check_detailed(fn, inputs, step).max_relative_error;
}

struct PrimitiveCheck {
  Primitive kind;
  std::string label;
  double error;
};

/// Central-difference check of every catalog primitive (and its attribute variants)
/// on small random double-precision inputs drawn from `seed`. Each output is reduced
/// with a random weighting so that no gradient is trivially zero.
std::vector<PrimitiveCheck> check_primitive_gradients(std::uint64_t seed, double step = 1e-5);

}  // namespace dauhst::ad
