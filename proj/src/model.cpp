#include "dauhst/model.hpp"

#include "json.hpp"

#include "dauhst/error.hpp"
#include "dauhst/io.hpp"

namespace dauhst::model {

using nlohmann::json;

void ModelConfig::validate() const {
  if (height == 0 || width == 0 || bands == 0) throw ValueError("model: cube dimensions must be positive");
  unfold_config().validate();
  hst_config().validate();
}

hst::HstConfig ModelConfig::hst_config() const {
  hst::HstConfig h;
  h.channels = channels;
  h.window = window;
  h.bands = bands;
  h.height = height;
  h.width = cassi::shifted_width(width, bands, shift);
  return h;
}

dauf::UnfoldConfig ModelConfig::unfold_config() const { return {stages, share_denoiser_weights}; }

std::string ModelConfig::to_json() const {
  const auto h = hst_config();
  json levels = json::array();
  for (std::size_t l = 0; l < hst::kLevels; ++l) {
    levels.push_back({{"channels", h.level_channels(l)}, {"heads", h.heads[l]}, {"windows", h.level_windows(l)}});
  }
  json j = {{"format_version", kCheckpointVersion},
            {"height", height},
            {"width", width},
            {"bands", bands},
            {"shift", shift},
            {"stages", stages},
            {"channels", channels},
            {"window", window},
            {"share_denoiser_weights", share_denoiser_weights},
            {"levels", levels}};
  return j.dump(2) + "\n";
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format_version").get<int>() != kCheckpointVersion) {
      throw FormatError("checkpoint sidecar: unsupported format_version " + j.at("format_version").dump());
    }
    ModelConfig c;
    c.height = j.at("height").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.bands = j.at("bands").get<std::size_t>();
    c.shift = j.at("shift").get<std::size_t>();
    c.stages = j.at("stages").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.window = j.at("window").get<std::size_t>();
    c.share_denoiser_weights = j.at("share_denoiser_weights").get<bool>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint sidecar: ") + e.what());
  } catch (const ValueError& e) {
    throw FormatError(std::string("checkpoint sidecar: ") + e.what());
  }
}

ad::ParamStore init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ad::ParamStore store;
  dauf::init_estimator_params(store, cfg.bands, cfg.stages, rng);
  dauf::init_z0_params(store, cfg.bands, rng);
  const auto ucfg = cfg.unfold_config();
  const auto hcfg = cfg.hst_config();
  const std::size_t denoisers = cfg.share_denoiser_weights ? 1 : cfg.stages;
  for (std::size_t k = 0; k < denoisers; ++k) hst::init_hst_params(store, ucfg.denoiser_prefix(k), hcfg, rng);
  for (auto& [name, t] : store) io::round_to_float(t);
  return store;
}

void check_operator(const ModelConfig& cfg, const cassi::SensingOperator& op) {
  if (op.height() != cfg.height || op.width() != cfg.width || op.bands() != cfg.bands || op.shift() != cfg.shift) {
    throw ShapeError("model is bound to " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) + "x" +
                     std::to_string(cfg.bands) + " with shift " + std::to_string(cfg.shift) + ", the mask gives " +
                     std::to_string(op.height()) + "x" + std::to_string(op.width()) + "x" +
                     std::to_string(op.bands()) + " with shift " + std::to_string(op.shift()));
  }
}

ad::Var reconstruct(ad::Var y, const cassi::SensingOperator& op, const ad::ParamStore& params, const ModelConfig& cfg,
                    dauf::UnfoldTrace* trace) {
  check_operator(cfg, op);
  const auto ucfg = cfg.unfold_config();
  const auto hcfg = cfg.hst_config();
  dauf::Denoiser denoiser = [&](ad::Var x, ad::Var beta, std::size_t k) {
    return hst::hst_denoise(x, beta, params, ucfg.denoiser_prefix(k), hcfg);
  };
  return dauf::run_unfolding(y, op, params, ucfg, denoiser, trace);
}

Tensor reconstruct(const Tensor& y, const cassi::SensingOperator& op, const ad::ParamStore& params,
                   const ModelConfig& cfg, dauf::UnfoldTrace* trace) {
  ad::Tape tape(false);
  return reconstruct(tape.constant(y), op, params, cfg, trace).value();
}

Tensor adjoint_baseline(const Tensor& y, const cassi::SensingOperator& op) {
  if (y.shape() != op.measurement_shape()) {
    throw ShapeError("adjoint baseline: measurement " + to_string(y.shape()) + " does not match " +
                     to_string(op.measurement_shape()));
  }
  Tensor normalized = y;
  const Tensor& psi = op.psi();
  for (std::size_t i = 0; i < normalized.size(); ++i) normalized[i] = psi[i] > 0.0 ? y[i] / psi[i] : 0.0;
  return cassi::unshift_cube(cassi::adjoint_phi(op, normalized), op.width(), op.shift());
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".json");
}

void save_checkpoint(const std::filesystem::path& path, const ad::ParamStore& params, const ModelConfig& cfg) {
  io::write_archive(path, params);
  io::write_file_atomic(sidecar_path(path), cfg.to_json());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint c;
  c.config = ModelConfig::from_json(io::read_file(sidecar_path(path)));
  c.params = io::read_archive(path);
  const ad::ParamStore expected = init_model_params(c.config, 0);
  for (const auto& [name, t] : expected) {
    if (!c.params.contains(name)) throw FormatError("checkpoint " + path.string() + ": missing tensor " + name);
    if (c.params.get(name).shape() != t.shape()) {
      throw FormatError("checkpoint " + path.string() + ": tensor " + name + " has shape " +
                        to_string(c.params.get(name).shape()) + ", the sidecar implies " + to_string(t.shape()));
    }
  }
  if (c.params.size() != expected.size()) {
    throw FormatError("checkpoint " + path.string() + ": " + std::to_string(c.params.size() - expected.size()) +
                      " unexpected tensors");
  }
  return c;
}

}  // namespace dauhst::model
