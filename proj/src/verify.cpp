#include "dauhst/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "dauhst/dauf.hpp"
#include "dauhst/error.hpp"
#include "dauhst/gradcheck.hpp"
#include "dauhst/hst.hpp"
#include "dauhst/ops.hpp"
#include "dauhst/random.hpp"

namespace dauhst::verify {

using ad::Var;
using cassi::SensingOperator;

namespace {

struct Instance {
  Rng rng;
  std::uint64_t seed;
};

// Runs `body` once per instance; body returns the instance's error.
PropertyResult sweep(std::string group, std::string name, double tolerance, std::size_t count, std::uint64_t seed,
                     const std::function<double(Instance&)>& body) {
  PropertyResult r{std::move(group), std::move(name), true, 0.0, tolerance, count, {}};
  try {
    for (std::size_t i = 0; i < count; ++i) {
      Instance inst{Rng(seed + i), seed + i};
      const double err = body(inst);
      const double shown = std::isnan(err) ? INFINITY : err;
      r.worst = std::max(r.worst, shown);
      if (!(err <= tolerance) && r.passed) {
        r.passed = false;
        r.detail = "first failure at instance seed " + std::to_string(inst.seed);
      }
    }
  } catch (const Error& e) {
    r.passed = false;
    r.detail = e.what();
  }
  return r;
}

SensingOperator random_operator(Rng& rng) {
  std::uniform_int_distribution<std::size_t> side(1, 8), bands(1, 4), shift(0, 2);
  const Shape ms{side(rng), side(rng)};
  const Tensor mask = std::bernoulli_distribution(0.5)(rng) ? binary_tensor(ms, rng, 0.5) : uniform_tensor(ms, rng, 0, 1);
  return SensingOperator(mask, shift(rng), bands(rng));
}

double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng));
}

Tensor global_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t n = q.size() / q.shape().back(), c = q.shape().back();
  Tensor out({n, c}, 0.0);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double peak = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < c; ++t) s += q[i * c + t] * k[j * c + t];
      row[j] = s / std::sqrt(static_cast<double>(c));
      peak = std::max(peak, row[j]);
    }
    double total = 0.0;
    for (double& x : row) total += (x = std::exp(x - peak));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < c; ++t) out[i * c + t] += row[j] / total * v[j * c + t];
  }
  return out;
}

}  // namespace

std::vector<PropertyResult> run(const Options& o) {
  auto count = [&](std::size_t fallback) { return o.instances ? o.instances : fallback; };
  std::vector<PropertyResult> out;
  const std::uint64_t s = o.seed;

  out.push_back(sweep("sensing", "Phi Phi^T off-diagonal entries are exactly zero", 0.0, count(100), s, [&](Instance& in) {
    return dauf::diagonality_error(dauf::dense_system(random_operator(in.rng), o.cap)).first;
  }));
  out.push_back(sweep("sensing", "diag(Phi Phi^T) equals psi", 1e-15, count(100), s, [&](Instance& in) {
    return dauf::diagonality_error(dauf::dense_system(random_operator(in.rng), o.cap)).second;
  }));
  out.push_back(sweep("sensing", "adjoint identity <Phi x, y> = <x, Phi^T y>", 1e-12, count(100), s, [&](Instance& in) {
    const auto op = random_operator(in.rng);
    const Tensor x = uniform_tensor(op.cube_shape(), in.rng), y = uniform_tensor(op.measurement_shape(), in.rng);
    return std::abs(dot(cassi::forward_phi(op, x), y) - dot(x, cassi::adjoint_phi(op, y)));
  }));
  out.push_back(sweep("sensing", "matrix-free Phi matches explicit sparse Phi", 1e-12, count(100), s, [&](Instance& in) {
    const auto op = random_operator(in.rng);
    const auto phi = cassi::build_explicit_phi(op, o.cap);
    const Tensor x = uniform_tensor(op.cube_shape(), in.rng), y = uniform_tensor(op.measurement_shape(), in.rng);
    const Eigen::VectorXd ex = phi * Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
    const Eigen::VectorXd ey = phi.transpose() * Eigen::Map<const Eigen::VectorXd>(y.data(), y.size());
    const Tensor fx = cassi::forward_phi(op, x), ay = cassi::adjoint_phi(op, y);
    return std::max((ex - Eigen::Map<const Eigen::VectorXd>(fx.data(), fx.size())).cwiseAbs().maxCoeff(),
                    (ey - Eigen::Map<const Eigen::VectorXd>(ay.data(), ay.size())).cwiseAbs().maxCoeff());
  }));

  out.push_back(sweep("inversion", "matrix inversion formula", 1e-10, count(50), s, [&](Instance& in) {
    const auto op = random_operator(in.rng);
    return dauf::inversion_formula_error(dauf::dense_system(op, o.cap), log_uniform(in.rng, 1e-3, 1e3));
  }));
  out.push_back(sweep("inversion", "diagonal closed forms of (I + Phi Phi^T / mu)^-1", 1e-10, count(50), s,
                      [&](Instance& in) {
                        const auto op = random_operator(in.rng);
                        auto [a, b] = dauf::diagonal_inverse_error(dauf::dense_system(op, o.cap),
                                                                   log_uniform(in.rng, 1e-3, 1e3));
                        return std::max(a, b);
                      }));

  auto projection = [&](const Tensor& y, const Tensor& z, double alpha, const SensingOperator& op) {
    Tensor x = dauf::linear_projection(y, z, alpha, op);
    if (o.fault_inject) x = z * 2.0 - x;
    return x;
  };
  out.push_back(sweep("projection", "elementwise projection equals the dense closed form", 1e-8, count(100), s,
                      [&](Instance& in) {
                        const auto op = random_operator(in.rng);
                        const double alpha = log_uniform(in.rng, 1e-3, 1e3);
                        const Tensor y = uniform_tensor(op.measurement_shape(), in.rng);
                        const Tensor z = uniform_tensor(op.cube_shape(), in.rng);
                        const Tensor oracle = dauf::closed_form_oracle(y, z, alpha, op, o.cap);
                        return max_abs_diff(projection(y, z, alpha, op), oracle) / std::max(1.0, max_abs(oracle));
                      }));
  out.push_back(sweep("projection", "consistent z is a fixed point", 1e-12, count(100), s, [&](Instance& in) {
    const auto op = random_operator(in.rng);
    const Tensor z = uniform_tensor(op.cube_shape(), in.rng);
    return max_abs_diff(projection(cassi::forward_phi(op, z), z, log_uniform(in.rng, 1e-3, 1e3), op), z);
  }));

  out.push_back(sweep("attention", "local branch with a full-map window equals global attention", 1e-10, count(20), s,
                      [&](Instance& in) {
                        const std::size_t side = std::uniform_int_distribution<std::size_t>(1, 6)(in.rng);
                        const std::size_t c = std::uniform_int_distribution<std::size_t>(1, 4)(in.rng);
                        const Tensor q = uniform_tensor({side, side, c}, in.rng, -2, 2),
                                     k = uniform_tensor({side, side, c}, in.rng, -2, 2),
                                     v = uniform_tensor({side, side, c}, in.rng);
                        ad::Tape tape(false);
                        auto part = [&](const Tensor& t) { return hst::window_partition(tape.constant(t), side); };
                        Var a = hst::window_reverse(hst::attention_branch(part(q), part(k), part(v), Var{}, 1), side,
                                                    side, side);
                        return max_abs_diff(a.value().reshaped({side * side, c}), global_attention(q, k, v));
                      }));
  out.push_back(sweep("attention", "non-local branch with M = 1 equals global attention", 1e-10, count(20), s,
                      [&](Instance& in) {
                        std::uniform_int_distribution<std::size_t> d(1, 6);
                        const std::size_t h = d(in.rng), w = d(in.rng), c = d(in.rng) % 4 + 1;
                        const Tensor q = uniform_tensor({h, w, c}, in.rng, -2, 2),
                                     k = uniform_tensor({h, w, c}, in.rng, -2, 2), v = uniform_tensor({h, w, c}, in.rng);
                        ad::Tape tape(false);
                        auto shuffled = [&](const Tensor& t) {
                          return hst::shuffle_transpose(hst::window_partition(tape.constant(t), 1));
                        };
                        Var a = hst::attention_branch(shuffled(q), shuffled(k), shuffled(v), Var{}, 1);
                        a = hst::window_reverse(hst::unshuffle(a), h, w, 1);
                        return max_abs_diff(a.value().reshaped({h * w, c}), global_attention(q, k, v));
                      }));
  out.push_back(sweep("attention", "attention rows sum to one", 1e-12, count(20), s, [&](Instance& in) {
    std::uniform_int_distribution<std::size_t> d(1, 6);
    const std::size_t g = d(in.rng), l = d(in.rng), heads = d(in.rng) % 3 + 1, c = heads * (d(in.rng) % 3 + 1);
    ad::Tape tape(false);
    const Tensor p = hst::attention_probabilities(tape.constant(uniform_tensor({g, l, c}, in.rng, -3, 3)),
                                                  tape.constant(uniform_tensor({g, l, c}, in.rng, -3, 3)),
                                                  tape.constant(normal_tensor({heads, l, l}, in.rng)), heads)
                         .value();
    double worst = 0.0;
    for (std::size_t r = 0; r < p.size() / l; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < l; ++j) sum += p[r * l + j];
      worst = std::max(worst, std::abs(sum - 1.0));
    }
    return worst;
  }));

  out.push_back(sweep("bijection", "window partition then reverse is bit-identical", 0.0, count(50), s,
                      [&](Instance& in) {
                        std::uniform_int_distribution<std::size_t> d(1, 4);
                        const std::size_t m = d(in.rng), h = m * d(in.rng), w = m * d(in.rng), c = d(in.rng);
                        const Tensor t = uniform_tensor({h, w, c}, in.rng);
                        ad::Tape tape(false);
                        const Tensor back = hst::window_reverse(hst::window_partition(tape.constant(t), m), h, w, m).value();
                        return back == t ? 0.0 : 1.0;
                      }));
  out.push_back(sweep("bijection", "shuffle then unshuffle is bit-identical", 0.0, count(50), s, [&](Instance& in) {
    std::uniform_int_distribution<std::size_t> d(1, 9);
    const Tensor t = uniform_tensor({d(in.rng), d(in.rng), d(in.rng)}, in.rng);
    ad::Tape tape(false);
    return hst::unshuffle(hst::shuffle_transpose(tape.constant(t))).value() == t ? 0.0 : 1.0;
  }));
  out.push_back(sweep("bijection", "shift then unshift restores the cube", 0.0, count(50), s, [&](Instance& in) {
    std::uniform_int_distribution<std::size_t> d(1, 6);
    const std::size_t shift = d(in.rng) % 3;
    const Tensor t = uniform_tensor({d(in.rng), d(in.rng), d(in.rng)}, in.rng);
    return cassi::unshift_cube(cassi::shift_cube(t, shift), t.dim(1), shift) == t ? 0.0 : 1.0;
  }));

  out.push_back(sweep("gradients", "every primitive matches central differences", 1e-4, count(3), s,
                      [&](Instance& in) {
                        double worst = 0.0;
                        for (const auto& r : ad::check_primitive_gradients(in.seed)) worst = std::max(worst, r.error);
                        return worst;
                      }));
  out.push_back(sweep("gradients", "tiny HST denoiser matches central differences", 1e-4, std::min<std::size_t>(count(1), 3),
                      s, [&](Instance& in) {
                        hst::HstConfig cfg;
                        cfg.channels = 4;
                        cfg.window = 2;
                        cfg.bands = 2;
                        cfg.height = 8;
                        cfg.width = 8;
                        cfg.heads = {1, 1, 1};
                        ad::ParamStore store;
                        hst::init_hst_params(store, "d", cfg, in.rng);
                        const Tensor probe = uniform_tensor({8, 8, 2}, in.rng);
                        ad::TensorFunction fn = [&](ad::Tape& tape, std::span<const Var> v) {
                          return ad::sum(ad::multiply(hst::hst_denoise(v[0], v[1], store, "d", cfg), tape.constant(probe)));
                        };
                        const Tensor inputs[] = {uniform_tensor({8, 8, 2}, in.rng, 0, 1), Tensor({1}, 0.4)};
                        return ad::grad_check(fn, inputs);
                      }));
  return out;
}

bool all_passed(const std::vector<PropertyResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

}  // namespace dauhst::verify
