// Command-line front end: simulate | reconstruct | train | verify | metrics.
// Exit codes: 0 success, 1 validation or verification failure, 2 usage error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include <fmt/core.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "dauhst/cassi.hpp"
#include "dauhst/error.hpp"
#include "dauhst/io.hpp"
#include "dauhst/metrics.hpp"
#include "dauhst/model.hpp"
#include "dauhst/train.hpp"
#include "dauhst/verify.hpp"

namespace fs = std::filesystem;
using namespace dauhst;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;

struct Args {
  std::string mask, cube, measurement, checkpoint, out, config, pred, truth, log;
  std::size_t stages = 2, channels = 8, window = 4, shift = 1, epochs = 30, scenes = 16, val_scenes = 4, size = 48,
              bands = 8, batch = 1, instances = 0;
  int noise_bits = 0;
  std::uint64_t seed = 0;
  double lr = 4e-4;
  bool json = false, fault_inject = false, share_weights = false, no_augment = false, per_band = false;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ValueError(std::string("missing --") + what);
  if (!fs::is_regular_file(path)) throw ValueError(std::string(what) + " file not found: " + path);
}

void require_output(const std::string& path) {
  if (path.empty()) throw ValueError("missing --out");
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) throw ValueError("output directory does not exist: " + parent.string());
}

Tensor read_plane(const std::string& path, const char* what) {
  Tensor t = io::read_hsc(path);
  if (t.dim(2) != 1) {
    throw ValueError(std::string(what) + " must have one channel, " + path + " has " + std::to_string(t.dim(2)));
  }
  return t.reshaped({t.dim(0), t.dim(1)});
}

int cmd_simulate(const Args& a, const CLI::App& sub) {
  require_file(a.cube, "cube");
  require_file(a.mask, "mask");
  require_output(a.out);
  const Tensor cube = io::read_hsc(a.cube);
  const Tensor mask = read_plane(a.mask, "mask");
  if (mask.dim(0) != cube.dim(0) || mask.dim(1) != cube.dim(1)) {
    throw ValueError("mask " + to_string(mask.shape()) + " does not match cube " + to_string(cube.shape()));
  }
  const cassi::SensingOperator op(mask, a.shift, cube.dim(2));
  Tensor y = cassi::forward_phi(op, cassi::shift_cube(cube, a.shift));
  if (sub.count("--noise-bits") && a.noise_bits > 0) y = cassi::add_shot_noise(y, a.noise_bits, a.seed);
  io::write_hsc(a.out, y);
  fmt::print("measurement {} x {} (n = {})\n", op.height(), op.shifted_width(), op.measurement_size());
  return kOk;
}

int cmd_reconstruct(const Args& a) {
  require_file(a.measurement, "measurement");
  require_file(a.mask, "mask");
  require_file(a.checkpoint, "checkpoint");
  require_output(a.out);
  const auto ckpt = model::load_checkpoint(a.checkpoint);
  const auto& cfg = ckpt.config;
  const Tensor y = read_plane(a.measurement, "measurement");
  const Tensor mask = read_plane(a.mask, "mask");
  const std::size_t expect_w = cassi::shifted_width(cfg.width, cfg.bands, cfg.shift);
  if (y.dim(0) != cfg.height || y.dim(1) != expect_w) {
    throw ValueError(fmt::format("measurement is {} x {}, the checkpoint is bound to {} x {} (H x W')", y.dim(0),
                                 y.dim(1), cfg.height, expect_w));
  }
  if (mask.dim(0) != cfg.height || mask.dim(1) != cfg.width) {
    throw ValueError(fmt::format("mask is {} x {}, the checkpoint is bound to {} x {}", mask.dim(0), mask.dim(1),
                                 cfg.height, cfg.width));
  }
  const cassi::SensingOperator op(mask, cfg.shift, cfg.bands);
  dauf::UnfoldTrace trace;
  const Tensor cube = model::reconstruct(y, op, ckpt.params, cfg, &trace);
  io::write_hsc(a.out, cube);
  if (a.json) {
    json j = {{"shape", cube.shape()}, {"alpha", trace.params.alpha}, {"beta", trace.params.beta}};
    std::cout << j.dump() << "\n";
  } else {
    fmt::print("reconstructed {} x {} x {}\n", cube.dim(0), cube.dim(1), cube.dim(2));
    for (std::size_t k = 0; k < cfg.stages; ++k) {
      fmt::print("stage {}: alpha = {:.6g}, beta = {:.6g}\n", k + 1, trace.params.alpha[k], trace.params.beta[k]);
    }
  }
  return kOk;
}

train::TrainConfig train_config(const Args& a, const CLI::App& sub) {
  train::TrainConfig c;
  c.model.height = c.model.width = 48;
  json file;
  if (!a.config.empty()) {
    require_file(a.config, "config");
    try {
      file = json::parse(io::read_file(a.config));
    } catch (const json::exception& e) {
      throw ValueError("config " + a.config + ": " + e.what());
    }
    static const std::set<std::string> known = {"stages", "channels", "window", "shift", "epochs", "lr",
                                                "seed", "noise_bits", "scenes", "val_scenes", "size", "bands",
                                                "batch", "share_weights", "augment"};
    for (const auto& [key, value] : file.items()) {
      if (!known.contains(key)) throw ValueError("config " + a.config + ": unknown key \"" + key + "\"");
    }
  }
  // Flags override the config file, which overrides defaults.
  auto pick = [&](const char* flag, const char* key, auto flag_value, auto fallback) {
    using T = decltype(fallback);
    if (sub.count(flag)) return static_cast<T>(flag_value);
    if (file.contains(key)) {
      try {
        return file.at(key).get<T>();
      } catch (const json::exception& e) {
        throw ValueError(std::string("config key ") + key + ": " + e.what());
      }
    }
    return fallback;
  };
  c.model.stages = pick("--stages", "stages", a.stages, c.model.stages);
  c.model.channels = pick("--channels", "channels", a.channels, c.model.channels);
  c.model.window = pick("--window", "window", a.window, c.model.window);
  c.model.shift = pick("--shift", "shift", a.shift, c.model.shift);
  c.model.bands = pick("--bands", "bands", a.bands, c.model.bands);
  c.model.height = c.model.width = pick("--size", "size", a.size, c.model.height);
  c.model.share_denoiser_weights = pick("--share-weights", "share_weights", a.share_weights, false);
  c.epochs = pick("--epochs", "epochs", a.epochs, c.epochs);
  c.lr = pick("--lr", "lr", a.lr, c.lr);
  c.seed = pick("--seed", "seed", a.seed, c.seed);
  c.noise_bits = pick("--noise-bits", "noise_bits", a.noise_bits, c.noise_bits);
  c.train_scenes = pick("--scenes", "scenes", a.scenes, c.train_scenes);
  c.val_scenes = pick("--val-scenes", "val_scenes", a.val_scenes, c.val_scenes);
  c.batch_size = pick("--batch", "batch", a.batch, c.batch_size);
  c.augment = pick("--no-augment", "augment", !a.no_augment, true);
  c.lr_min = std::min(c.lr_min, c.lr);
  c.validate();
  return c;
}

int cmd_train(const Args& a, const CLI::App& sub) {
  const std::string ckpt = !a.checkpoint.empty() ? a.checkpoint : a.out;
  if (ckpt.empty()) throw ValueError("missing --checkpoint (output path of the trained model)");
  require_output(ckpt);
  const train::TrainConfig cfg = train_config(a, sub);
  const auto& mc = cfg.model;
  Tensor mask;
  if (!a.mask.empty()) {
    require_file(a.mask, "mask");
    mask = read_plane(a.mask, "mask");
    if (mask.dim(0) != mc.height || mask.dim(1) != mc.width) {
      throw ValueError(fmt::format("mask is {} x {}, training size is {} x {}", mask.dim(0), mask.dim(1), mc.height,
                                   mc.width));
    }
  } else {
    mask = train::random_mask(mc.height, mc.width, cfg.seed + 1);
  }
  const std::string log_path = a.log.empty() ? ckpt + ".log.jsonl" : a.log;
  const std::string mask_path = ckpt + ".mask.hsc";

  const auto scenes = train::synth_dataset(cfg.train_scenes, mc.height, mc.width, mc.bands, cfg.seed + 100);
  const auto val = train::synth_dataset(cfg.val_scenes, mc.height, mc.width, mc.bands, cfg.seed + 200);
  std::string log_text;
  const auto result = train::train(cfg, scenes, val, mask, [&](const train::EpochRecord& r) {
    log_text += train::to_json_line(r) + "\n";
    io::write_file_atomic(log_path, log_text);
    if (a.json) {
      std::cout << train::to_json_line(r) << std::endl;
    } else {
      fmt::print("epoch {:3d}  loss {:.6f}  lr {:.3e}  val psnr {:.4f} dB  ssim {:.4f}  ({:.1f} s)\n", r.epoch, r.loss,
                 r.lr, r.val_psnr, r.val_ssim, r.seconds);
      std::fflush(stdout);
    }
  });
  model::save_checkpoint(ckpt, result.params, mc);
  io::write_hsc(mask_path, mask);
  const auto eval = train::evaluate(result.params, mc, mask, val, cfg.noise_bits, cfg.seed + 7919);
  if (a.json) {
    std::cout << json{{"checkpoint", ckpt},
                      {"mask", mask_path},
                      {"val_psnr", eval.psnr},
                      {"val_ssim", eval.ssim},
                      {"baseline_psnr", eval.baseline_psnr},
                      {"baseline_ssim", eval.baseline_ssim},
                      {"first_loss", result.log.front().loss},
                      {"final_loss", result.log.back().loss}}
                     .dump()
              << "\n";
  } else {
    fmt::print("checkpoint {} (mask {})\n", ckpt, mask_path);
    fmt::print("held-out psnr {:.4f} dB, ssim {:.4f}; adjoint baseline {:.4f} dB, ssim {:.4f}\n", eval.psnr, eval.ssim,
               eval.baseline_psnr, eval.baseline_ssim);
  }
  return kOk;
}

int cmd_verify(const Args& a) {
  verify::Options o;
  o.seed = a.seed;
  o.instances = a.instances;
  o.fault_inject = a.fault_inject;
  const auto results = verify::run(o);
  const bool ok = verify::all_passed(results);
  if (a.json) {
    json arr = json::array();
    for (const auto& r : results) {
      arr.push_back({{"group", r.group},
                     {"property", r.name},
                     {"passed", r.passed},
                     {"worst", std::isfinite(r.worst) ? json(r.worst) : json("inf")},
                     {"tolerance", r.tolerance},
                     {"instances", r.instances},
                     {"detail", r.detail}});
    }
    std::cout << json{{"passed", ok}, {"properties", arr}}.dump(2) << "\n";
  } else {
    if (a.fault_inject) fmt::print("fault injection: projection correction term sign flipped\n");
    for (const auto& r : results) {
      fmt::print("{} [{}] {}: worst {:.3e} (tol {:.0e}, {} instances){}\n", r.passed ? "PASS" : "FAIL", r.group,
                 r.name, r.worst, r.tolerance, r.instances, r.detail.empty() ? "" : " - " + r.detail);
    }
    std::size_t failed = 0;
    for (const auto& r : results) failed += r.passed ? 0 : 1;
    fmt::print("{} of {} properties passed\n", results.size() - failed, results.size());
  }
  return ok ? kOk : kFailure;
}

int cmd_metrics(const Args& a) {
  require_file(a.pred, "pred");
  require_file(a.truth, "truth");
  const Tensor pred = io::read_hsc(a.pred), truth = io::read_hsc(a.truth);
  if (pred.shape() != truth.shape()) {
    throw ValueError("dimension mismatch: " + to_string(pred.shape()) + " vs " + to_string(truth.shape()));
  }
  const auto p = metrics::psnr_per_band(pred, truth);
  const auto s = metrics::ssim_per_band(pred, truth);
  const double psnr = metrics::psnr(pred, truth), ssim = metrics::ssim(pred, truth);
  if (a.json) {
    json j = {{"psnr", psnr}, {"ssim", ssim}};
    if (a.per_band) j["bands"] = {{"psnr", p}, {"ssim", s}};
    std::cout << j.dump() << "\n";
  } else {
    fmt::print("PSNR {:.4f} dB\nSSIM {:.4f}\n", psnr, ssim);
    if (a.per_band) {
      fmt::print("band,psnr,ssim\n");
      for (std::size_t l = 0; l < p.size(); ++l) fmt::print("{},{:.4f},{:.4f}\n", l, p[l], s[l]);
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperspectral snapshot reconstruction with degradation-aware unfolding"};
  app.require_subcommand(1);
  Args a;

  auto* sim = app.add_subcommand("simulate", "Simulate a coded measurement from a cube and a mask");
  sim->add_option("--cube", a.cube, "Input cube (HSC1, H x W x N)")->required();
  sim->add_option("--mask", a.mask, "Coded aperture (HSC1, H x W x 1)")->required();
  sim->add_option("--shift,-d", a.shift, "Dispersion step in pixels per band")->capture_default_str();
  sim->add_option("--noise-bits", a.noise_bits, "Shot-noise bit depth (omit for noiseless)");
  sim->add_option("--seed", a.seed, "Noise seed")->capture_default_str();
  sim->add_option("--out,-o", a.out, "Output measurement (HSC1)")->required();

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct a cube from a measurement");
  rec->add_option("--measurement", a.measurement, "Measurement (HSC1, H x W' x 1)")->required();
  rec->add_option("--mask", a.mask, "Coded aperture used for the measurement")->required();
  rec->add_option("--checkpoint", a.checkpoint, "Trained model (DTA1 + .json sidecar)")->required();
  rec->add_option("--out,-o", a.out, "Output cube (HSC1)")->required();
  rec->add_flag("--json", a.json, "Machine-readable output");

  auto* tr = app.add_subcommand("train", "Train on synthetic scenes");
  tr->add_option("--config", a.config, "JSON file with training settings (flags take precedence)");
  tr->add_option("--checkpoint,--out,-o", a.checkpoint, "Where to write the trained model")->required();
  tr->add_option("--mask", a.mask, "Coded aperture (default: seeded random binary mask)");
  tr->add_option("--stages,-K", a.stages, "Unfolding stages K")->capture_default_str();
  tr->add_option("--channels,-C", a.channels, "Denoiser base channels C")->capture_default_str();
  tr->add_option("--window,-M", a.window, "Attention window M")->capture_default_str();
  tr->add_option("--shift,-d", a.shift, "Dispersion step")->capture_default_str();
  tr->add_option("--bands", a.bands, "Spectral bands N")->capture_default_str();
  tr->add_option("--size", a.size, "Square scene size")->capture_default_str();
  tr->add_option("--epochs", a.epochs, "Training epochs")->capture_default_str();
  tr->add_option("--lr", a.lr, "Peak learning rate")->capture_default_str();
  tr->add_option("--batch", a.batch, "Scenes per optimizer step")->capture_default_str();
  tr->add_option("--scenes", a.scenes, "Training scenes")->capture_default_str();
  tr->add_option("--val-scenes", a.val_scenes, "Held-out scenes")->capture_default_str();
  tr->add_option("--noise-bits", a.noise_bits, "Shot-noise bit depth for training measurements (0 = off)");
  tr->add_option("--seed", a.seed, "Seed for data, mask, init and sampling")->capture_default_str();
  tr->add_option("--log", a.log, "Metrics log (JSON lines, default <checkpoint>.log.jsonl)");
  tr->add_flag("--share-weights", a.share_weights, "Share one denoiser across stages");
  tr->add_flag("--no-augment", a.no_augment, "Disable rotation/flip augmentation");
  tr->add_flag("--json", a.json, "Machine-readable output");

  auto* ver = app.add_subcommand("verify", "Run the oracle self-check suite");
  ver->add_option("--seed", a.seed, "Base instance seed")->capture_default_str();
  ver->add_option("--instances", a.instances, "Instances per property (default: per-property counts)");
  ver->add_flag("--fault-inject", a.fault_inject, "Flip a sign in the projection to exercise failure reporting");
  ver->add_flag("--json", a.json, "Machine-readable output");

  auto* met = app.add_subcommand("metrics", "PSNR and SSIM between two cubes");
  met->add_option("--pred", a.pred, "Predicted cube (HSC1)")->required();
  met->add_option("--truth", a.truth, "Reference cube (HSC1)")->required();
  met->add_flag("--per-band", a.per_band, "Also print per-band values (CSV)");
  met->add_flag("--json", a.json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*sim) return cmd_simulate(a, *sim);
    if (*rec) return cmd_reconstruct(a);
    if (*tr) return cmd_train(a, *tr);
    if (*ver) return cmd_verify(a);
    if (*met) return cmd_metrics(a);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
