#pragma once

// Degradation-aware unfolding: a small estimator predicts per-stage (alpha, beta) from
// the measurement and the shifted mask stack, then K stages alternate the closed-form
// data projection with a learned denoiser that also sees beta.

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dauhst/autodiff.hpp"
#include "dauhst/cassi.hpp"
#include "dauhst/random.hpp"

namespace dauhst::dauf {

inline constexpr std::size_t kEstimatorWidth = 64;
inline const std::string kEstimatorPrefix = "estimator";
inline const std::string kInitPrefix = "init_z0";

struct StageParams {
  std::vector<double> alpha;  // penalty mu_k
  std::vector<double> beta;   // mu_k / tau_k, the denoiser's noise-level input
};

struct UnfoldConfig {
  std::size_t stages = 2;
  bool share_denoiser_weights = false;

  void validate() const;
  /// Parameter prefix of the denoiser used at stage k (0-based).
  std::string denoiser_prefix(std::size_t stage) const;
};

void init_estimator_params(ad::ParamStore& store, std::size_t bands, std::size_t stages, Rng& rng);
void init_z0_params(ad::ParamStore& store, std::size_t bands, Rng& rng);

/// Estimator over y (H, W') and the shifted mask stack (H, W', N). Returns (alpha, beta),
/// each of shape (K), strictly positive.
std::pair<ad::Var, ad::Var> estimate_params(ad::Var y, ad::Var phi_rep, const ad::ParamStore& store,
                                            std::size_t stages);
StageParams estimate_params(const Tensor& y, const Tensor& phi_rep, const ad::ParamStore& store,
                            std::size_t stages);

/// Bias-free 1x1 conv over [y replicated to N bands, phi_rep] -> (H, W', N).
ad::Var init_z0(ad::Var y, ad::Var phi_rep, const ad::ParamStore& store);
Tensor init_z0(const Tensor& y, const Tensor& phi_rep, const ad::ParamStore& store);

/// x = z + Phi^T((y - Phi z) / (alpha + psi)), elementwise on the measurement plane.
/// Differentiable in y, z and alpha (a single value). The operator is copied into the tape.
ad::Var linear_projection(ad::Var y, ad::Var z, ad::Var alpha, const cassi::SensingOperator& op);
Tensor linear_projection(const Tensor& y, const Tensor& z, double alpha, const cassi::SensingOperator& op);

/// (H, W', N) shifted cube -> (H, W, N), differentiable.
ad::Var band_unshift(ad::Var shifted, std::size_t width, std::size_t shift);

/// (Phi^T Phi + mu I)^-1 (Phi^T y + mu z) by a dense solve. Verification only.
/// Throws CapExceeded when (nN)^2 exceeds `cap`.
Tensor closed_form_oracle(const Tensor& y, const Tensor& z, double mu, const cassi::SensingOperator& op,
                          std::size_t cap = cassi::verification_cap());

/// Dense matrices used by the verification suite.
struct DenseSystem {
  Eigen::MatrixXd phi;  // n x nN
  Eigen::VectorXd psi;  // n
};
DenseSystem dense_system(const cassi::SensingOperator& op, std::size_t cap = cassi::verification_cap());
/// max |offdiag(Phi Phi^T)| and max |diag(Phi Phi^T) - psi|.
std::pair<double, double> diagonality_error(const DenseSystem& s);
/// Max-entry gap between (Phi^T Phi + mu I)^-1 and the matrix-inversion-formula form.
double inversion_formula_error(const DenseSystem& s, double mu);
/// Max-entry gaps of (I + Phi Phi^T / mu)^-1 against diag(mu / (mu + psi)) and of
/// (I + Phi Phi^T / mu)^-1 Phi Phi^T against diag(mu psi / (mu + psi)).
std::pair<double, double> diagonal_inverse_error(const DenseSystem& s, double mu);

/// Denoiser for one stage: (x_k, beta_k as a single value, stage index) -> z_k.
using Denoiser = std::function<ad::Var(ad::Var x, ad::Var beta, std::size_t stage)>;

struct UnfoldTrace {
  StageParams params;
  Tensor z0;
  std::vector<Tensor> x;  // projection outputs per stage
  std::vector<Tensor> z;  // denoiser outputs per stage
};

/// Full loop; returns the unshifted cube (H, W, N).
ad::Var run_unfolding(ad::Var y, const cassi::SensingOperator& op, const ad::ParamStore& store,
                      const UnfoldConfig& cfg, const Denoiser& denoiser, UnfoldTrace* trace = nullptr);

}  // namespace dauhst::dauf
