#include "dauhst/dauf.hpp"

#include <algorithm>
#include <cmath>

#include "dauhst/error.hpp"
#include "dauhst/ops.hpp"

namespace dauhst::dauf {

using ad::Var;
using cassi::SensingOperator;

void UnfoldConfig::validate() const {
  if (stages == 0) throw ValueError("unfolding needs at least one stage");
}

std::string UnfoldConfig::denoiser_prefix(std::size_t stage) const {
  return "stage" + std::to_string(share_denoiser_weights ? 1 : stage + 1);
}

namespace {

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform_tensor(std::move(shape), rng, -bound, bound);
}

std::string est(const char* name) { return kEstimatorPrefix + "/" + name; }

void check_measurement_pair(const Shape& y, const Shape& phi_rep, const char* what) {
  if (y.size() != 2 || phi_rep.size() != 3 || y[0] != phi_rep[0] || y[1] != phi_rep[1]) {
    throw ShapeError(std::string(what) + ": measurement " + to_string(y) + " does not match mask stack " +
                     to_string(phi_rep));
  }
}

}  // namespace

void init_estimator_params(ad::ParamStore& store, std::size_t bands, std::size_t stages, Rng& rng) {
  const std::size_t w = kEstimatorWidth;
  store.set(est("conv1/weight"), fan_in_uniform({1, 1, bands + 1, w}, bands + 1, rng));
  store.set(est("conv1/bias"), Tensor({w}, 0.0));
  store.set(est("conv2/weight"), fan_in_uniform({3, 3, w, w}, 9 * w, rng));
  store.set(est("conv2/bias"), Tensor({w}, 0.0));
  store.set(est("fc1/weight"), fan_in_uniform({w, w}, w, rng));
  store.set(est("fc1/bias"), Tensor({w}, 0.0));
  store.set(est("fc2/weight"), fan_in_uniform({w, w}, w, rng));
  store.set(est("fc2/bias"), Tensor({w}, 0.0));
  store.set(est("fc3/weight"), fan_in_uniform({w, 2 * stages}, w, rng));
  store.set(est("fc3/bias"), Tensor({2 * stages}, 0.0));
}

void init_z0_params(ad::ParamStore& store, std::size_t bands, Rng& rng) {
  store.set(kInitPrefix + "/weight", fan_in_uniform({1, 1, 2 * bands, bands}, 2 * bands, rng));
}

std::pair<Var, Var> estimate_params(Var y, Var phi_rep, const ad::ParamStore& store, std::size_t stages) {
  check_measurement_pair(y.shape(), phi_rep.shape(), "estimate_params");
  if (stages == 0) throw ValueError("estimate_params: K must be at least 1");
  const Shape& out_shape = store.get(est("fc3/bias")).shape();
  if (out_shape != Shape{2 * stages}) {
    throw ShapeError("estimate_params: estimator emits " + to_string(out_shape) + " values, K = " +
                     std::to_string(stages) + " needs " + std::to_string(2 * stages));
  }
  ad::Tape& tape = *y.tape();
  const Shape ys = y.shape();
  const double peak = max_abs(y.value());
  Var y_norm = ad::reshape(peak > 0.0 ? ad::scale(y, 1.0 / peak) : y, {ys[0], ys[1], 1});
  const Var in[] = {y_norm, phi_rep};
  auto p = [&](const char* name) { return tape.param(store, est(name)); };
  Var h = ad::gelu(ad::conv2d(ad::concat(in, 2), p("conv1/weight"), p("conv1/bias"), 1, 0));
  h = ad::gelu(ad::conv2d(h, p("conv2/weight"), p("conv2/bias"), 2, 1));
  Var v = ad::reshape(ad::global_average_pool(h), {1, kEstimatorWidth});
  v = ad::gelu(ad::fully_connected(v, p("fc1/weight"), p("fc1/bias")));
  v = ad::gelu(ad::fully_connected(v, p("fc2/weight"), p("fc2/bias")));
  v = ad::softplus(ad::reshape(ad::fully_connected(v, p("fc3/weight"), p("fc3/bias")), {2 * stages}));
  const std::size_t sizes[] = {stages, stages};
  auto parts = ad::split(v, 0, sizes);
  return {parts[0], parts[1]};
}

StageParams estimate_params(const Tensor& y, const Tensor& phi_rep, const ad::ParamStore& store,
                            std::size_t stages) {
  ad::Tape tape(false);
  auto [a, b] = estimate_params(tape.constant(y), tape.constant(phi_rep), store, stages);
  const auto& av = a.value();
  const auto& bv = b.value();
  return {{av.values().begin(), av.values().end()}, {bv.values().begin(), bv.values().end()}};
}

Var init_z0(Var y, Var phi_rep, const ad::ParamStore& store) {
  check_measurement_pair(y.shape(), phi_rep.shape(), "init_z0");
  const Shape ys = y.shape();
  const std::size_t bands = phi_rep.shape()[2];
  const Var in[] = {ad::tile(ad::reshape(y, {ys[0], ys[1], 1}), 2, bands), phi_rep};
  return ad::conv2d(ad::concat(in, 2), y.tape()->param(store, kInitPrefix + "/weight"), Var{}, 1, 0);
}

Tensor init_z0(const Tensor& y, const Tensor& phi_rep, const ad::ParamStore& store) {
  ad::Tape tape(false);
  return init_z0(tape.constant(y), tape.constant(phi_rep), store).value();
}

namespace {

void check_projection(const Tensor& y, const Tensor& z, double alpha, const SensingOperator& op) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw ValueError("linear_projection: alpha must be positive and finite, got " + std::to_string(alpha));
  }
  if (y.shape() != op.measurement_shape() || z.shape() != op.cube_shape()) {
    throw ShapeError("linear_projection: expected y " + to_string(op.measurement_shape()) + " and z " +
                     to_string(op.cube_shape()) + ", got " + to_string(y.shape()) + " and " + to_string(z.shape()));
  }
}

// r = y - Phi z and the per-pixel weight 1 / (alpha + psi).
std::pair<Tensor, Tensor> residual_and_weight(const Tensor& y, const Tensor& z, double alpha,
                                              const SensingOperator& op) {
  Tensor r = y - cassi::forward_phi(op, z);
  Tensor w(op.measurement_shape());
  const Tensor& psi = op.psi();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 / (alpha + psi[i]);
  return {std::move(r), std::move(w)};
}

}  // namespace

Tensor linear_projection(const Tensor& y, const Tensor& z, double alpha, const SensingOperator& op) {
  check_projection(y, z, alpha, op);
  auto [r, w] = residual_and_weight(y, z, alpha, op);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] *= w[i];
  return z + cassi::adjoint_phi(op, r);
}

Var linear_projection(Var y, Var z, Var alpha, const SensingOperator& op) {
  constexpr auto kind = ad::Primitive::kDataProjection;
  if (alpha.value().size() != 1) {
    throw ShapeError("linear_projection: alpha must hold one value, got " + to_string(alpha.shape()));
  }
  const double a = alpha.value()[0];
  check_projection(y.value(), z.value(), a, op);
  auto [r, w] = residual_and_weight(y.value(), z.value(), a, op);
  Tensor scaled = r;
  for (std::size_t i = 0; i < r.size(); ++i) scaled[i] *= w[i];
  Tensor out = z.value() + cassi::adjoint_phi(op, scaled);
  return y.tape()->record(
      kind, std::move(out), {y, z, alpha},
      [op, r = std::move(r), w = std::move(w)](const ad::BackwardArgs& g) {
        Tensor phi_g = cassi::forward_phi(op, g.grad_output);
        if (Tensor* dalpha = g.grad_inputs[2]) {
          double s = 0.0;
          for (std::size_t i = 0; i < r.size(); ++i) s -= phi_g[i] * r[i] * w[i] * w[i];
          (*dalpha)[0] += s;
        }
        for (std::size_t i = 0; i < phi_g.size(); ++i) phi_g[i] *= w[i];
        if (Tensor* dy = g.grad_inputs[0]) *dy += phi_g;
        if (Tensor* dz = g.grad_inputs[1]) {
          *dz += g.grad_output;
          *dz -= cassi::adjoint_phi(op, phi_g);
        }
      });
}

Var band_unshift(Var shifted, std::size_t width, std::size_t shift) {
  Tensor out = cassi::unshift_cube(shifted.value(), width, shift);
  return shifted.tape()->record(ad::Primitive::kBandUnshift, std::move(out), {shifted},
                                [shift](const ad::BackwardArgs& g) {
                                  if (g.grad_inputs[0]) *g.grad_inputs[0] += cassi::shift_cube(g.grad_output, shift);
                                });
}

DenseSystem dense_system(const SensingOperator& op, std::size_t cap) {
  const std::size_t cols = op.measurement_size() * op.bands();
  if (cols * cols > cap) {
    throw CapExceeded("dense system of " + std::to_string(cols) + "^2 entries exceeds the verification cap of " +
                      std::to_string(cap) + " (raise DAUHST_VERIFY_CAP)");
  }
  DenseSystem s;
  s.phi = Eigen::MatrixXd(cassi::build_explicit_phi(op, cap));
  s.psi = Eigen::Map<const Eigen::VectorXd>(op.psi().data(), static_cast<Eigen::Index>(op.psi().size()));
  return s;
}

std::pair<double, double> diagonality_error(const DenseSystem& s) {
  Eigen::MatrixXd gram = s.phi * s.phi.transpose();
  const Eigen::VectorXd diag = gram.diagonal();
  gram.diagonal().setZero();
  return {gram.cwiseAbs().maxCoeff(), (diag - s.psi).cwiseAbs().maxCoeff()};
}

double inversion_formula_error(const DenseSystem& s, double mu) {
  const Eigen::Index n = s.phi.rows(), m = s.phi.cols();
  const Eigen::MatrixXd lhs = (s.phi.transpose() * s.phi + mu * Eigen::MatrixXd::Identity(m, m))
                                  .ldlt()
                                  .solve(Eigen::MatrixXd::Identity(m, m));
  const Eigen::MatrixXd inner = (Eigen::MatrixXd::Identity(n, n) + s.phi * s.phi.transpose() / mu)
                                    .ldlt()
                                    .solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::MatrixXd rhs =
      Eigen::MatrixXd::Identity(m, m) / mu - s.phi.transpose() * inner * s.phi / (mu * mu);
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

std::pair<double, double> diagonal_inverse_error(const DenseSystem& s, double mu) {
  const Eigen::Index n = s.phi.rows();
  const Eigen::MatrixXd gram = s.phi * s.phi.transpose();
  const Eigen::MatrixXd inner =
      (Eigen::MatrixXd::Identity(n, n) + gram / mu).ldlt().solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::VectorXd denom = s.psi.array() + mu;
  const Eigen::MatrixXd first = Eigen::VectorXd(mu / denom.array()).asDiagonal();
  const Eigen::MatrixXd second = Eigen::VectorXd(mu * s.psi.array() / denom.array()).asDiagonal();
  return {(inner - first).cwiseAbs().maxCoeff(), (inner * gram - second).cwiseAbs().maxCoeff()};
}

Tensor closed_form_oracle(const Tensor& y, const Tensor& z, double mu, const SensingOperator& op, std::size_t cap) {
  if (!(mu > 0.0)) throw ValueError("closed_form_oracle: mu must be positive");
  if (y.shape() != op.measurement_shape() || z.shape() != op.cube_shape()) {
    throw ShapeError("closed_form_oracle: shapes do not match the operator");
  }
  const DenseSystem s = dense_system(op, cap);
  const Eigen::Index m = s.phi.cols();
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
  const Eigen::Map<const Eigen::VectorXd> zv(z.data(), m);
  Eigen::MatrixXd system = s.phi.transpose() * s.phi;
  system.diagonal().array() += mu;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(system);
  if (ldlt.info() != Eigen::Success) throw Error("closed_form_oracle: internal error, factorization failed");
  const Eigen::VectorXd x = ldlt.solve(s.phi.transpose() * yv + mu * zv);
  return Tensor(op.cube_shape(), std::vector<double>(x.data(), x.data() + x.size()));
}

Var run_unfolding(Var y, const SensingOperator& op, const ad::ParamStore& store, const UnfoldConfig& cfg,
                  const Denoiser& denoiser, UnfoldTrace* trace) {
  cfg.validate();
  if (y.shape() != op.measurement_shape()) {
    throw ShapeError("run_unfolding: measurement " + to_string(y.shape()) + " does not match the operator's " +
                     to_string(op.measurement_shape()));
  }
  ad::Tape& tape = *y.tape();
  Var phi_rep = tape.constant(op.shifted_mask());
  auto [alpha, beta] = estimate_params(y, phi_rep, store, cfg.stages);
  std::vector<std::size_t> ones(cfg.stages, 1);
  const std::vector<Var> alphas = ad::split(alpha, 0, ones);
  const std::vector<Var> betas = ad::split(beta, 0, ones);
  Var z = init_z0(y, phi_rep, store);
  if (trace) {
    const auto& av = alpha.value();
    const auto& bv = beta.value();
    trace->params = {{av.values().begin(), av.values().end()}, {bv.values().begin(), bv.values().end()}};
    trace->z0 = z.value();
    trace->x.clear();
    trace->z.clear();
  }
  for (std::size_t k = 0; k < cfg.stages; ++k) {
    Var x = linear_projection(y, z, alphas[k], op);
    z = denoiser(x, betas[k], k);
    if (trace) {
      trace->x.push_back(x.value());
      trace->z.push_back(z.value());
    }
  }
  return band_unshift(z, op.width(), op.shift());
}

}  // namespace dauhst::dauf
