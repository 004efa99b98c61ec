#include "dauhst/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "json.hpp"

#include "dauhst/error.hpp"
#include "dauhst/io.hpp"
#include "dauhst/metrics.hpp"
#include "dauhst/ops.hpp"
#include "dauhst/random.hpp"

namespace dauhst::train {

using ad::Var;

Var rmse_loss(Var pred, Var truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("rmse_loss: " + to_string(pred.shape()) + " vs " + to_string(truth.shape()));
  }
  const double n = static_cast<double>(pred.value().size());
  Var diff = ad::sub(pred, truth);
  return ad::sqrt(ad::scale(ad::sum(ad::multiply(diff, diff)), 1.0 / n));
}

double rmse(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("rmse: " + to_string(pred.shape()) + " vs " + to_string(truth.shape()));
  }
  const Tensor d = pred - truth;
  return std::sqrt(dot(d, d) / d.size());
}

void adam_step(ad::ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  if (!(lr > 0.0)) throw ValueError("adam_step: learning rate must be positive");
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ShapeError("adam_step: gradient for unknown parameter " + name);
    if (params.get(name).shape() != g.shape()) {
      throw ShapeError("adam_step: gradient of " + name + " has shape " + to_string(g.shape()) + ", parameter has " +
                       to_string(params.get(name).shape()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.get_mutable(name);
    auto [mi, fresh_m] = state.m.try_emplace(name, Tensor::zeros_like(g));
    auto [vi, fresh_v] = state.v.try_emplace(name, Tensor::zeros_like(g));
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min) {
  if (total == 0 || step > total) {
    throw ValueError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total);
  return lr_min + (lr_max - lr_min) * (1.0 + std::cos(phase)) / 2.0;
}

namespace {

Tensor rotate90(const Tensor& c) {
  const std::size_t h = c.dim(0), w = c.dim(1), n = c.dim(2);
  Tensor out({w, h, n});
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t l = 0; l < n; ++l) out.at(i, j, l) = c.at(j, w - 1 - i, l);
  return out;
}

Tensor flip_horizontal(const Tensor& c) {
  const std::size_t h = c.dim(0), w = c.dim(1), n = c.dim(2);
  Tensor out(c.shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t l = 0; l < n; ++l) out.at(i, j, l) = c.at(i, w - 1 - j, l);
  return out;
}

}  // namespace

Tensor apply_dihedral(const Tensor& cube, int element) {
  if (element < 0 || element >= kDihedralOrder) throw ValueError("dihedral element must be in [0, 8)");
  if (cube.rank() != 3) throw ShapeError("augment: expected (H, W, N), got " + to_string(cube.shape()));
  const int turns = element % 4;
  if (turns != 0 && cube.dim(0) != cube.dim(1)) {
    throw ValueError("augment: rotation needs a square cube, got " + to_string(cube.shape()));
  }
  Tensor out = element >= 4 ? flip_horizontal(cube) : cube;
  for (int t = 0; t < turns; ++t) out = rotate90(out);
  return out;
}

int dihedral_inverse(int element) {
  if (element < 0 || element >= kDihedralOrder) throw ValueError("dihedral element must be in [0, 8)");
  return element >= 4 ? element : (4 - element) % 4;
}

int draw_dihedral(std::uint64_t seed) {
  Rng rng(seed);
  return std::uniform_int_distribution<int>(0, kDihedralOrder - 1)(rng);
}

Tensor augment(const Tensor& cube, std::uint64_t seed) { return apply_dihedral(cube, draw_dihedral(seed)); }

std::vector<Tensor> synth_dataset(std::size_t scenes, std::size_t height, std::size_t width, std::size_t bands,
                                  std::uint64_t seed) {
  if (height == 0 || width == 0 || bands == 0) throw ValueError("synth_dataset: dimensions must be positive");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double side = static_cast<double>(std::min(height, width));
  const double nb = static_cast<double>(bands);
  std::vector<Tensor> out;
  out.reserve(scenes);
  for (std::size_t s = 0; s < scenes; ++s) {
    Tensor cube({height, width, bands}, 0.0);
    const std::size_t bumps = 4 + std::uniform_int_distribution<std::size_t>(0, 4)(rng);
    std::vector<double> spectrum(bands);
    for (std::size_t b = 0; b < bumps; ++b) {
      const double cy = unit(rng) * height, cx = unit(rng) * width;
      const double sigma = side * (1.0 / 12.0 + unit(rng) * (1.0 / 4.0 - 1.0 / 12.0));
      const double amp = 0.3 + 0.7 * unit(rng);
      const double peak = unit(rng) * (nb - 1.0);
      const double width_l = nb * (1.0 / 3.0 + unit(rng) * 2.0 / 3.0);
      const double floor = 0.2 * unit(rng);
      for (std::size_t l = 0; l < bands; ++l) {
        const double d = (static_cast<double>(l) - peak) / width_l;
        spectrum[l] = amp * (floor + (1.0 - floor) * std::exp(-0.5 * d * d));
      }
      for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
          const double dy = (i + 0.5 - cy) / sigma, dx = (j + 0.5 - cx) / sigma;
          const double g = std::exp(-0.5 * (dx * dx + dy * dy));
          for (std::size_t l = 0; l < bands; ++l) cube.at(i, j, l) += g * spectrum[l];
        }
      }
    }
    const auto [lo, hi] = std::minmax_element(cube.values().begin(), cube.values().end());
    const double min = *lo, range = *hi - *lo;
    for (double& v : cube.values()) v = range > 0.0 ? (v - min) / range : 0.0;
    out.push_back(std::move(cube));
  }
  return out;
}

Tensor random_mask(std::size_t height, std::size_t width, std::uint64_t seed, double open) {
  Rng rng(seed);
  return binary_tensor({height, width}, rng, open);
}

void TrainConfig::validate() const {
  model.validate();
  if (!(lr > 0.0) || lr_min < 0.0 || lr_min > lr) throw ValueError("train: need 0 <= lr_min <= lr and lr > 0");
  if (epochs == 0 || batch_size == 0 || train_scenes == 0) {
    throw ValueError("train: epochs, batch size and scene count must be positive");
  }
  if (noise_bits < 0 || noise_bits > 30) throw ValueError("train: noise bits must be in [0, 30]");
}

std::string to_json_line(const EpochRecord& r) {
  nlohmann::json j = {{"epoch", r.epoch},       {"loss", r.loss},         {"lr", r.lr},
                      {"val_psnr", r.val_psnr}, {"val_ssim", r.val_ssim}, {"wall_seconds", r.seconds}};
  return j.dump();
}

namespace {

Tensor crop_patch(const Tensor& scene, std::size_t h, std::size_t w, Rng& rng) {
  if (scene.rank() != 3 || scene.dim(0) < h || scene.dim(1) < w) {
    throw ShapeError("train: scene " + to_string(scene.shape()) + " is smaller than the " + std::to_string(h) + "x" +
                     std::to_string(w) + " patch");
  }
  const std::size_t oy = std::uniform_int_distribution<std::size_t>(0, scene.dim(0) - h)(rng);
  const std::size_t ox = std::uniform_int_distribution<std::size_t>(0, scene.dim(1) - w)(rng);
  const std::size_t n = scene.dim(2);
  Tensor out({h, w, n});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t l = 0; l < n; ++l) out.at(i, j, l) = scene.at(oy + i, ox + j, l);
  return out;
}

Tensor simulate(const cassi::SensingOperator& op, const Tensor& cube, int noise_bits, std::uint64_t seed) {
  Tensor y = cassi::forward_phi(op, cassi::shift_cube(cube, op.shift()));
  return noise_bits > 0 ? cassi::add_shot_noise(y, noise_bits, seed) : y;
}

}  // namespace

Evaluation evaluate(const ad::ParamStore& params, const model::ModelConfig& cfg, const Tensor& mask,
                    const std::vector<Tensor>& scenes, int noise_bits, std::uint64_t seed) {
  const cassi::SensingOperator op(mask, cfg.shift, cfg.bands);
  Evaluation e;
  if (scenes.empty()) return e;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Tensor y = simulate(op, scenes[i], noise_bits, seed + i);
    const Tensor rec = model::reconstruct(y, op, params, cfg);
    const Tensor base = model::adjoint_baseline(y, op);
    e.psnr += metrics::psnr(rec, scenes[i]);
    e.ssim += metrics::ssim(rec, scenes[i]);
    e.baseline_psnr += metrics::psnr(base, scenes[i]);
    e.baseline_ssim += metrics::ssim(base, scenes[i]);
  }
  const double n = static_cast<double>(scenes.size());
  e.psnr /= n;
  e.ssim /= n;
  e.baseline_psnr /= n;
  e.baseline_ssim /= n;
  return e;
}

TrainResult train(const TrainConfig& cfg, const std::vector<Tensor>& train_scenes,
                  const std::vector<Tensor>& val_scenes, const Tensor& mask,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train_scenes.empty()) throw ValueError("train: no training scenes");
  const auto& mc = cfg.model;
  const cassi::SensingOperator op(mask, mc.shift, mc.bands);
  model::check_operator(mc, op);
  const auto start = std::chrono::steady_clock::now();

  TrainResult result{model::init_model_params(mc, cfg.seed), {}};
  AdamState adam;
  Rng rng(cfg.seed ^ 0x5eedf00dULL);
  const bool square = mc.height == mc.width;
  const std::size_t steps_per_epoch = (train_scenes.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  std::vector<std::size_t> order(train_scenes.size());
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double lr = cfg.lr;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size, ++step) {
      const std::size_t last = std::min(order.size(), first + cfg.batch_size);
      std::map<std::string, Tensor> grads;
      double batch_loss = 0.0;
      for (std::size_t b = first; b < last; ++b) {
        Tensor truth = crop_patch(train_scenes[order[b]], mc.height, mc.width, rng);
        const std::uint64_t sample_seed = rng();
        if (cfg.augment && square) truth = augment(truth, sample_seed);
        const Tensor y = simulate(op, truth, cfg.noise_bits, sample_seed);

        ad::Tape tape;
        Var loss = rmse_loss(model::reconstruct(tape.constant(y), op, result.params, mc), tape.constant(truth));
        const double value = loss.value()[0];
        if (!std::isfinite(value)) {
          throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                      " (scene " + std::to_string(order[b]) + "); try a lower learning rate");
        }
        tape.backward(loss);
        auto g = tape.gradients(result.params);
        for (auto& [name, t] : g) {
          auto [it, fresh] = grads.try_emplace(name, std::move(t));
          if (!fresh) it->second += t;
        }
        batch_loss += value;
      }
      const double count = static_cast<double>(last - first);
      for (auto& [name, t] : grads) t *= 1.0 / count;
      lr = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min);
      adam_step(result.params, grads, adam, lr);
      for (auto& [name, t] : result.params) io::round_to_float(t);
      loss_sum += batch_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(train_scenes.size());
    rec.lr = lr;
    if (!val_scenes.empty()) {
      const Evaluation e = evaluate(result.params, mc, mask, val_scenes, cfg.noise_bits, cfg.seed + 7919);
      rec.val_psnr = e.psnr;
      rec.val_ssim = e.ssim;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace dauhst::train
