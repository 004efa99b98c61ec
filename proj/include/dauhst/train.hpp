#pragma once

// Toy-scale training: RMSE objective, Adam with cosine annealing, dihedral augmentation
// and a synthetic scene generator standing in for real hyperspectral datasets.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dauhst/autodiff.hpp"
#include "dauhst/model.hpp"

namespace dauhst::train {

ad::Var rmse_loss(ad::Var pred, ad::Var truth);
double rmse(const Tensor& pred, const Tensor& truth);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::size_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// One bias-corrected Adam update of every parameter that has a gradient entry.
void adam_step(ad::ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

/// lr_min + (lr_max - lr_min)(1 + cos(pi step / total)) / 2 for 0 <= step <= total.
double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min);

/// Dihedral group on the spatial axes: element e rotates by 90 degrees (e % 4) times
/// after a horizontal flip when e >= 4. Rotations need square input.
inline constexpr int kDihedralOrder = 8;
Tensor apply_dihedral(const Tensor& cube, int element);
int dihedral_inverse(int element);
int draw_dihedral(std::uint64_t seed);
Tensor augment(const Tensor& cube, std::uint64_t seed);

/// Smooth scenes: seeded 2D Gaussian bumps, each with a smooth spectrum, normalised to [0, 1].
std::vector<Tensor> synth_dataset(std::size_t scenes, std::size_t height, std::size_t width, std::size_t bands,
                                  std::uint64_t seed);
/// Binary coded aperture with the given open fraction.
Tensor random_mask(std::size_t height, std::size_t width, std::uint64_t seed, double open = 0.5);

struct TrainConfig {
  model::ModelConfig model;
  double lr = 4e-4;
  double lr_min = 1e-6;
  std::size_t epochs = 30;
  std::size_t batch_size = 1;
  std::size_t train_scenes = 16;
  std::size_t val_scenes = 4;
  std::uint64_t seed = 0;
  int noise_bits = 0;  // 0 disables shot noise
  bool augment = true;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean training RMSE over the epoch
  double lr = 0.0;    // rate at the last step of the epoch
  double val_psnr = 0.0;
  double val_ssim = 0.0;
  double seconds = 0.0;  // wall time since training started
};
std::string to_json_line(const EpochRecord& r);

struct Evaluation {
  double psnr = 0.0;
  double ssim = 0.0;
  double baseline_psnr = 0.0;
  double baseline_ssim = 0.0;
};

/// Simulates each scene through the mask and scores the reconstruction and the adjoint baseline.
Evaluation evaluate(const ad::ParamStore& params, const model::ModelConfig& cfg, const Tensor& mask,
                    const std::vector<Tensor>& scenes, int noise_bits = 0, std::uint64_t seed = 0);

struct TrainResult {
  ad::ParamStore params;
  std::vector<EpochRecord> log;
};

/// Scenes may be larger than the model size; patches are cropped at random offsets.
/// Throws Error when a loss turns non-finite.
TrainResult train(const TrainConfig& cfg, const std::vector<Tensor>& train_scenes,
                  const std::vector<Tensor>& val_scenes, const Tensor& mask,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace dauhst::train
