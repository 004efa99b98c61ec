#include <cmath>

#include "dauhst/dauf.hpp"
#include "dauhst/error.hpp"
#include "dauhst/ops.hpp"
#include "doctest.h"

using namespace dauhst;
using ad::Var;
using cassi::SensingOperator;

namespace {

SensingOperator random_operator(Rng& rng, std::size_t max_side = 8, std::size_t max_bands = 4) {
  std::uniform_int_distribution<std::size_t> side(1, max_side), bands(1, max_bands), shift(0, 2);
  const Shape ms{side(rng), side(rng)};
  const Tensor mask = std::bernoulli_distribution(0.5)(rng) ? binary_tensor(ms, rng, 0.5) : uniform_tensor(ms, rng, 0, 1);
  return SensingOperator(mask, shift(rng), bands(rng));
}

double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng));
}

double relative_error(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b) / std::max(1.0, max_abs(b)); }

ad::ParamStore small_model(std::size_t bands, std::size_t stages, std::uint64_t seed) {
  Rng rng(seed);
  ad::ParamStore store;
  dauf::init_estimator_params(store, bands, stages, rng);
  dauf::init_z0_params(store, bands, rng);
  return store;
}

}  // namespace

TEST_CASE("explicit Phi Phi^T is exactly diagonal with entries psi") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto op = random_operator(rng);
    auto [off, diag] = dauf::diagonality_error(dauf::dense_system(op));
    CHECK(off == 0.0);
    CHECK(diag <= 1e-15);
  }
}

TEST_CASE("matrix inversion formula and diagonal closed forms hold on dense matrices") {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto op = random_operator(rng);
    const double mu = log_uniform(rng, 1e-3, 1e3);
    const auto sys = dauf::dense_system(op);
    INFO("mu = " << mu);
    CHECK(dauf::inversion_formula_error(sys, mu) <= 1e-10);
    auto [first, second] = dauf::diagonal_inverse_error(sys, mu);
    CHECK(first <= 1e-10);
    CHECK(second <= 1e-10);
  }
}

TEST_CASE("linear projection matches the dense closed form") {
  Rng rng(3);
  {
    const SensingOperator op(uniform_tensor({4, 4}, rng, 0, 1), 1, 3);
    const Tensor y = uniform_tensor(op.measurement_shape(), rng);
    const Tensor z = uniform_tensor(op.cube_shape(), rng);
    CHECK(relative_error(dauf::linear_projection(y, z, 0.7, op), dauf::closed_form_oracle(y, z, 0.7, op)) <= 1e-8);
  }
  for (int i = 0; i < 100; ++i) {
    const auto op = random_operator(rng);
    const double alpha = log_uniform(rng, 1e-3, 1e3);
    const Tensor y = uniform_tensor(op.measurement_shape(), rng);
    const Tensor z = uniform_tensor(op.cube_shape(), rng);
    INFO("alpha = " << alpha);
    CHECK(relative_error(dauf::linear_projection(y, z, alpha, op), dauf::closed_form_oracle(y, z, alpha, op)) <=
          1e-8);
  }
}

TEST_CASE("linear projection limit cases") {
  Rng rng(4);
  const SensingOperator op(uniform_tensor({5, 6}, rng, 0, 1), 2, 3);
  const Tensor z = uniform_tensor(op.cube_shape(), rng);
  const Tensor consistent = cassi::forward_phi(op, z);
  for (double alpha : {1e-3, 0.5, 7.0, 1e3}) {
    CHECK(max_abs_diff(dauf::linear_projection(consistent, z, alpha, op), z) <= 1e-15);
  }
  const Tensor y = uniform_tensor(op.measurement_shape(), rng);
  const double bound = max_abs(cassi::adjoint_phi(op, y - consistent)) / 1e8;
  CHECK(max_abs_diff(dauf::linear_projection(y, z, 1e8, op), z) <= bound);

  CHECK_THROWS_AS(dauf::linear_projection(y, z, 0.0, op), ValueError);
  CHECK_THROWS_AS(dauf::linear_projection(y, z, -1.0, op), ValueError);
  CHECK_THROWS_AS(dauf::linear_projection(z, z, 1.0, op), ShapeError);
}

TEST_CASE("closed form oracle analytic cases and cap") {
  Rng rng(5);
  const SensingOperator identity(Tensor({3, 4}, 1.0), 0, 1);
  const Tensor y = uniform_tensor({3, 4}, rng);
  const Tensor z = uniform_tensor({3, 4, 1}, rng);
  const double mu = 0.3;
  const Tensor expect = (y.reshaped({3, 4, 1}) + z * mu) * (1.0 / (1.0 + mu));
  CHECK(max_abs_diff(dauf::closed_form_oracle(y, z, mu, identity), expect) <= 1e-14);
  CHECK(max_abs_diff(dauf::closed_form_oracle(y, z, 1e12, identity), z) <= 1e-10);

  const SensingOperator big(Tensor({8, 8}, 1.0), 1, 4);
  CHECK_THROWS_AS(dauf::closed_form_oracle(uniform_tensor(big.measurement_shape(), rng),
                                           uniform_tensor(big.cube_shape(), rng), 1.0, big, 1000),
                  CapExceeded);
  CHECK_THROWS_AS(dauf::closed_form_oracle(y, z, 0.0, identity), ValueError);
}

TEST_CASE("estimator emits positive per-stage parameters") {
  Rng rng(6);
  const SensingOperator op(binary_tensor({6, 5}, rng, 0.5), 1, 3);
  const Tensor y = cassi::forward_phi(op, uniform_tensor(op.cube_shape(), rng, 0, 1));
  for (std::size_t k : {1, 2, 5}) {
    const auto store = small_model(3, k, 10 + k);
    const auto p = dauf::estimate_params(y, op.shifted_mask(), store, k);
    REQUIRE(p.alpha.size() == k);
    REQUIRE(p.beta.size() == k);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(p.alpha[i] > 0.0);
      CHECK(p.beta[i] > 0.0);
    }
    const auto again = dauf::estimate_params(y, op.shifted_mask(), store, k);
    CHECK(again.alpha == p.alpha);
    CHECK(again.beta == p.beta);
  }

  auto store = small_model(3, 2, 20);
  for (const char* fc : {"fc1", "fc2", "fc3"}) store.get_mutable(std::string("estimator/") + fc + "/weight").fill(0.0);
  store.set("estimator/fc1/bias", uniform_tensor({dauf::kEstimatorWidth}, rng));
  store.set("estimator/fc2/bias", uniform_tensor({dauf::kEstimatorWidth}, rng));
  store.set("estimator/fc3/bias", Tensor({4}, {-2.0, 0.0, 1.0, 3.0}));
  const auto p = dauf::estimate_params(y, op.shifted_mask(), store, 2);
  auto softplus = [](double b) { return std::log1p(std::exp(b)); };
  CHECK(p.alpha[0] == doctest::Approx(softplus(-2.0)).epsilon(1e-14));
  CHECK(p.alpha[1] == doctest::Approx(softplus(0.0)).epsilon(1e-14));
  CHECK(p.beta[0] == doctest::Approx(softplus(1.0)).epsilon(1e-14));
  CHECK(p.beta[1] == doctest::Approx(softplus(3.0)).epsilon(1e-14));

  CHECK_THROWS_AS(dauf::estimate_params(y, op.shifted_mask(), store, 3), ShapeError);
  CHECK_THROWS_AS(dauf::estimate_params(Tensor({6, 6}, 0.0), op.shifted_mask(), store, 2), ShapeError);
}

TEST_CASE("initial estimate") {
  Rng rng(7);
  const auto store = small_model(4, 1, 30);
  CHECK(max_abs(dauf::init_z0(Tensor({3, 5}, 0.0), Tensor({3, 5, 4}, 0.0), store)) == 0.0);
  const Tensor y = uniform_tensor({3, 5}, rng);
  const Tensor mask = uniform_tensor({3, 5, 4}, rng);
  CHECK(dauf::init_z0(y, mask, store).shape() == Shape{3, 5, 4});

  ad::ParamStore select = store;
  Tensor& w = select.get_mutable("init_z0/weight");
  w.fill(0.0);
  for (std::size_t l = 0; l < 4; ++l) w[l * 4 + l] = 1.0;  // y replica l -> band l
  const Tensor z0 = dauf::init_z0(y, mask, select);
  for (std::size_t i = 0; i < 15; ++i) {
    for (std::size_t l = 0; l < 4; ++l) CHECK(z0[i * 4 + l] == y[i]);
  }
}

TEST_CASE("unfolding loop composition") {
  Rng rng(8);
  const SensingOperator op(binary_tensor({6, 5}, rng, 0.5), 1, 3);
  const Tensor y = cassi::forward_phi(op, uniform_tensor(op.cube_shape(), rng, 0, 1));
  const auto store = small_model(3, 1, 40);
  dauf::UnfoldConfig cfg{1, false};

  // Denoiser: a fixed nonlinear map that depends on beta.
  dauf::Denoiser denoise = [](Var x, Var beta, std::size_t) { return ad::scale(ad::gelu(x), beta); };
  ad::Tape tape(false);
  dauf::UnfoldTrace trace;
  const Tensor out = dauf::run_unfolding(tape.constant(y), op, store, cfg, denoise, &trace).value();
  CHECK(out.shape() == Shape{6, 5, 3});

  const auto p = dauf::estimate_params(y, op.shifted_mask(), store, 1);
  const Tensor z0 = dauf::init_z0(y, op.shifted_mask(), store);
  const Tensor x1 = dauf::linear_projection(y, z0, p.alpha[0], op);
  Tensor manual = x1;
  for (double& v : manual.values()) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))) * p.beta[0];
  CHECK(max_abs_diff(out, cassi::unshift_cube(manual, 5, 1)) <= 1e-14);
  CHECK(trace.x.size() == 1);
  CHECK(max_abs_diff(trace.x[0], x1) == 0.0);

  CHECK(cfg.denoiser_prefix(0) == "stage1");
  dauf::UnfoldConfig shared{3, true};
  CHECK(shared.denoiser_prefix(2) == "stage1");
  CHECK(dauf::UnfoldConfig{3, false}.denoiser_prefix(2) == "stage3");
  CHECK_THROWS_AS((dauf::UnfoldConfig{0, false}.validate()), ValueError);
}

TEST_CASE("identity denoiser contracts the data residual") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const SensingOperator op(uniform_tensor({5, 5}, rng, 0.1, 1.0), 1, 3);
    const Tensor y = uniform_tensor(op.measurement_shape(), rng);
    auto store = small_model(3, 6, 50 + trial);
    store.get_mutable("estimator/fc3/weight").fill(0.0);
    store.set("estimator/fc3/bias", Tensor({12}, 0.2));
    ad::Tape tape(false);
    dauf::UnfoldTrace trace;
    dauf::run_unfolding(tape.constant(y), op, store, {6, false}, [](Var x, Var, std::size_t) { return x; },
                        &trace);
    auto residual = [&](const Tensor& z) {
      const Tensor r = y - cassi::forward_phi(op, z);
      return dot(r, r);
    };
    double previous = residual(trace.z0);
    for (const Tensor& z : trace.z) {
      const double current = residual(z);
      CHECK(current < previous);
      previous = current;
    }
  }
}

TEST_CASE("gradients flow through the unfolding loop") {
  Rng rng(10);
  const SensingOperator op(uniform_tensor({4, 4}, rng, 0, 1), 1, 2);
  const Tensor y = uniform_tensor(op.measurement_shape(), rng, 0, 1);
  const auto base = small_model(2, 2, 60);
  const Tensor probe = uniform_tensor({4, 4, 2}, rng);
  ad::Tape tape;
  dauf::Denoiser denoise = [](Var x, Var beta, std::size_t) { return ad::scale(ad::gelu(x), beta); };
  Var out = dauf::run_unfolding(tape.constant(y), op, base, {2, false}, denoise);
  tape.backward(ad::sum(ad::multiply(out, tape.constant(probe))));
  const auto grads = tape.gradients(base);
  const double h = 1e-6;
  for (const std::string name : {"init_z0/weight", "estimator/fc3/weight", "estimator/fc3/bias",
                                 "estimator/conv2/weight"}) {
    ad::ParamStore bumped = base;
    Tensor& w = bumped.get_mutable(name);
    double worst = 0.0;
    for (std::size_t j = 0; j < w.size(); j += std::max<std::size_t>(1, w.size() / 9)) {
      auto eval = [&] {
        ad::Tape t(false);
        return dot(dauf::run_unfolding(t.constant(y), op, bumped, {2, false}, denoise).value(), probe);
      };
      const double saved = w[j];
      w[j] = saved + h;
      const double up = eval();
      w[j] = saved - h;
      const double down = eval();
      w[j] = saved;
      const double numeric = (up - down) / (2 * h), analytic = grads.at(name)[j];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max({1.0, std::abs(numeric), std::abs(analytic)}));
    }
    CHECK_MESSAGE(worst <= 1e-6, name);
  }
}
