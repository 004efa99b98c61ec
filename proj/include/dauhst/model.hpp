#pragma once

// The assembled reconstruction network: estimator, z0 initialisation and K HST denoisers,
// plus the checkpoint format (DTA1 archive + "<path>.json" sidecar).

#include <cstdint>
#include <filesystem>
#include <string>

#include "dauhst/autodiff.hpp"
#include "dauhst/cassi.hpp"
#include "dauhst/dauf.hpp"
#include "dauhst/hst.hpp"

namespace dauhst::model {

inline constexpr int kCheckpointVersion = 1;

struct ModelConfig {
  std::size_t height = 48;  // cube size the weights are bound to
  std::size_t width = 48;
  std::size_t bands = 8;
  std::size_t shift = 1;
  std::size_t stages = 2;
  std::size_t channels = 8;
  std::size_t window = 4;
  bool share_denoiser_weights = false;

  void validate() const;
  hst::HstConfig hst_config() const;
  dauf::UnfoldConfig unfold_config() const;

  std::string to_json() const;
  /// Throws FormatError on missing keys, wrong types or an unknown version.
  static ModelConfig from_json(const std::string& text);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Fresh weights, rounded to float precision so they survive a checkpoint round trip.
ad::ParamStore init_model_params(const ModelConfig& cfg, std::uint64_t seed);

/// Throws ShapeError when the operator does not match the bound size.
void check_operator(const ModelConfig& cfg, const cassi::SensingOperator& op);

/// y (H, W') -> reconstructed cube (H, W, N).
ad::Var reconstruct(ad::Var y, const cassi::SensingOperator& op, const ad::ParamStore& params,
                    const ModelConfig& cfg, dauf::UnfoldTrace* trace = nullptr);
Tensor reconstruct(const Tensor& y, const cassi::SensingOperator& op, const ad::ParamStore& params,
                   const ModelConfig& cfg, dauf::UnfoldTrace* trace = nullptr);

/// unshift(Phi^T (y / psi)), zero where psi = 0: the zero-iteration reference.
Tensor adjoint_baseline(const Tensor& y, const cassi::SensingOperator& op);

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);
void save_checkpoint(const std::filesystem::path& path, const ad::ParamStore& params, const ModelConfig& cfg);

struct Checkpoint {
  ModelConfig config;
  ad::ParamStore params;
};
/// Validates every tensor name and shape against the sidecar configuration.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dauhst::model
