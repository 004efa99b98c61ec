#pragma once

#include <cstdint>
#include <random>

#include "dauhst/tensor.hpp"

namespace dauhst {

using Rng = std::mt19937_64;

Tensor uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0);
Tensor normal_tensor(Shape shape, Rng& rng, double stddev = 1.0);
/// Bernoulli(p) entries in {0, 1}.
Tensor binary_tensor(Shape shape, Rng& rng, double p = 0.5);

}  // namespace dauhst
