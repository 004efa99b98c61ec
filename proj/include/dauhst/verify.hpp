#pragma once

// Self-check suite behind the `verify` subcommand: every structural property of the
// sensing model, the projection and the attention blocks, checked against independent
// dense or loop-based references on seeded random instances.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dauhst/cassi.hpp"

namespace dauhst::verify {

struct Options {
  std::uint64_t seed = 0;
  std::size_t instances = 0;  // 0 keeps each group's default count
  std::size_t cap = cassi::verification_cap();
  /// Flips the sign of the correction term in the projection under test.
  bool fault_inject = false;
};

struct PropertyResult {
  std::string group;
  std::string name;
  bool passed = true;
  double worst = 0.0;
  double tolerance = 0.0;
  std::size_t instances = 0;
  std::string detail;  // first failing instance, or the reason the group could not run
};

std::vector<PropertyResult> run(const Options& options);
bool all_passed(const std::vector<PropertyResult>& results);

}  // namespace dauhst::verify
