#include "dauhst/random.hpp"

namespace dauhst {

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Tensor binary_tensor(Shape shape, Rng& rng, double p) {
  Tensor t(std::move(shape));
  std::bernoulli_distribution dist(p);
  for (auto& v : t.values()) v = dist(rng) ? 1.0 : 0.0;
  return t;
}

}  // namespace dauhst
