// Acceptance suite: one PASS/FAIL line per criterion, tolerances as contracted.
//
//   acceptance [criterion numbers...]     (default: all)
//
// Criteria 8, 10 and 11 drive the command-line tool; its path is baked in at build time.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <fmt/core.h>

#include "json.hpp"

#include "dauhst/cassi.hpp"
#include "dauhst/dauf.hpp"
#include "dauhst/gradcheck.hpp"
#include "dauhst/hst.hpp"
#include "dauhst/io.hpp"
#include "dauhst/ops.hpp"
#include "dauhst/random.hpp"
#include "dauhst/train.hpp"

#ifndef DAUHST_CLI_PATH
#error "DAUHST_CLI_PATH must point at the command-line tool"
#endif

namespace fs = std::filesystem;
using namespace dauhst;
using ad::Var;
using cassi::SensingOperator;

namespace {

struct Outcome {
  bool passed;
  std::string measured;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Command {
  int exit_code;
  std::string output;
};

Command run(const std::string& args) {
  const std::string cmd = std::string(DAUHST_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, "popen failed"};
  std::string out;
  std::array<char, 4096> buf;
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("dauhst_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

SensingOperator random_operator(Rng& rng) {
  std::uniform_int_distribution<std::size_t> side(1, 8), bands(1, 4), shift(0, 2);
  const Shape ms{side(rng), side(rng)};
  return SensingOperator(uniform_tensor(ms, rng, 0, 1), shift(rng), bands(rng));
}

double log_uniform(Rng& rng) {
  return std::exp(std::uniform_real_distribution<double>(std::log(1e-3), std::log(1e3))(rng));
}

// Independent global softmax attention over all tokens of an (H, W, C) map.
Tensor global_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t c = q.shape().back(), n = q.size() / c;
  Tensor out({n, c}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w(n);
    double total = 0.0, peak = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t t = 0; t < c; ++t) w[j] += q[i * c + t] * k[j * c + t];
      w[j] /= std::sqrt(static_cast<double>(c));
      peak = std::max(peak, w[j]);
    }
    for (double& x : w) total += (x = std::exp(x - peak));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < c; ++t) out[i * c + t] += w[j] / total * v[j * c + t];
  }
  return out;
}

Outcome diagonality() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(1000 + s);
    worst = std::max(worst, dauf::diagonality_error(dauf::dense_system(random_operator(rng))).first);
  }
  const double t = seconds_since(t0);
  return {worst == 0.0 && t < 5.0, fmt::format("max off-diagonal {:.1e}, {:.2f} s", worst, t)};
}

Outcome inversion_formula() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(2000 + s);
    const auto op = random_operator(rng);
    worst = std::max(worst, dauf::inversion_formula_error(dauf::dense_system(op), log_uniform(rng)));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-10 && t < 10.0, fmt::format("max entry error {:.2e}, {:.2f} s", worst, t)};
}

Outcome diagonal_forms() {
  double first = 0.0, second = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(2000 + s);  // same instances as the inversion formula
    const auto op = random_operator(rng);
    auto [a, b] = dauf::diagonal_inverse_error(dauf::dense_system(op), log_uniform(rng));
    first = std::max(first, a);
    second = std::max(second, b);
  }
  return {first <= 1e-10 && second <= 1e-10, fmt::format("max entry errors {:.2e} and {:.2e}", first, second)};
}

Outcome projection_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(3000 + s);
    const auto op = random_operator(rng);
    const double alpha = log_uniform(rng);
    const Tensor y = uniform_tensor(op.measurement_shape(), rng), z = uniform_tensor(op.cube_shape(), rng);
    const Tensor oracle = dauf::closed_form_oracle(y, z, alpha, op);
    const double rel = max_abs_diff(dauf::linear_projection(y, z, alpha, op), oracle) / std::max(1.0, max_abs(oracle));
    worst = std::max(worst, rel);
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-8 && t < 10.0, fmt::format("max relative error {:.2e}, {:.2f} s", worst, t)};
}

Outcome attention_degenerate() {
  const auto t0 = Clock::now();
  double local = 0.0, nonlocal = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(4000 + s);
    std::uniform_int_distribution<std::size_t> d(2, 6);
    const std::size_t side = d(rng), h = d(rng), w = d(rng), c = d(rng) - 1;
    ad::Tape tape(false);
    {
      const Tensor q = uniform_tensor({side, side, c}, rng, -2, 2), k = uniform_tensor({side, side, c}, rng, -2, 2),
                   v = uniform_tensor({side, side, c}, rng);
      auto part = [&](const Tensor& t) { return hst::window_partition(tape.constant(t), side); };
      Var a = hst::attention_branch(part(q), part(k), part(v), Var{}, 1);
      local = std::max(local, max_abs_diff(hst::window_reverse(a, side, side, side).value().reshaped({side * side, c}),
                                           global_attention(q, k, v)));
    }
    {
      const Tensor q = uniform_tensor({h, w, c}, rng, -2, 2), k = uniform_tensor({h, w, c}, rng, -2, 2),
                   v = uniform_tensor({h, w, c}, rng);
      auto shuf = [&](const Tensor& t) { return hst::shuffle_transpose(hst::window_partition(tape.constant(t), 1)); };
      Var a = hst::attention_branch(shuf(q), shuf(k), shuf(v), Var{}, 1);
      a = hst::window_reverse(hst::unshuffle(a), h, w, 1);
      nonlocal = std::max(nonlocal, max_abs_diff(a.value().reshaped({h * w, c}), global_attention(q, k, v)));
    }
  }
  const double t = seconds_since(t0);
  return {local <= 1e-10 && nonlocal <= 1e-10 && t < 10.0,
          fmt::format("local {:.1e}, non-local {:.1e}, {:.2f} s", local, nonlocal, t)};
}

Outcome bijections() {
  const auto t0 = Clock::now();
  std::size_t exact = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(5000 + s);
    std::uniform_int_distribution<std::size_t> d(1, 5);
    const std::size_t m = d(rng), h = m * d(rng), w = m * d(rng), c = d(rng);
    const Tensor t = uniform_tensor({h, w, c}, rng);
    ad::Tape tape(false);
    Var part = hst::window_partition(tape.constant(t), m);
    const bool windows = hst::window_reverse(part, h, w, m).value() == t;
    const bool shuffle = hst::unshuffle(hst::shuffle_transpose(part)).value() == part.value();
    exact += windows && shuffle;
  }
  const double t = seconds_since(t0);
  return {exact == 50 && t < 5.0, fmt::format("{}/50 shapes bit-identical, {:.2f} s", exact, t)};
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  double primitives = 0.0;
  std::set<ad::Primitive> covered;
  for (const auto& r : ad::check_primitive_gradients(6000)) {
    primitives = std::max(primitives, r.error);
    covered.insert(r.kind);
  }
  const std::size_t catalog = static_cast<std::size_t>(ad::Primitive::kBandUnshift);  // every kind but kLeaf

  hst::HstConfig cfg;
  cfg.channels = 4;
  cfg.window = 2;
  cfg.bands = 2;
  cfg.height = 8;
  cfg.width = 8;
  cfg.heads = {1, 1, 1};
  Rng rng(6001);
  ad::ParamStore store;
  hst::init_hst_params(store, "d", cfg, rng);
  const Tensor probe = uniform_tensor({8, 8, 2}, rng);
  ad::TensorFunction fn = [&](ad::Tape& tape, std::span<const Var> v) {
    return ad::sum(ad::multiply(hst::hst_denoise(v[0], v[1], store, "d", cfg), tape.constant(probe)));
  };
  const Tensor inputs[] = {uniform_tensor({8, 8, 2}, rng, 0, 1), Tensor({1}, 0.5)};
  const double hst_error = ad::grad_check(fn, inputs);
  const double t = seconds_since(t0);
  return {primitives <= 1e-4 && hst_error <= 1e-4 && covered.size() == catalog && t < 60.0,
          fmt::format("{} primitive kinds worst {:.1e}, HST {:.1e}, {:.1f} s", covered.size(), primitives, hst_error, t)};
}

// Shared by criteria 8 and 10: one toy training run through the CLI.
struct ToyRun {
  bool ok = false;
  std::string checkpoint, mask, message;
  nlohmann::json summary;
  double seconds = 0.0;
};

const ToyRun& toy_run() {
  static const ToyRun run_result = [] {
    ToyRun r;
    r.checkpoint = (work_dir() / "toy.dta").string();
    const auto t0 = Clock::now();
    const Command c = run("train --checkpoint " + r.checkpoint + " --size 48 --bands 8 --shift 1 --stages 2 " +
                          "--channels 8 --window 4 --epochs 30 --seed 0 --json");
    r.seconds = seconds_since(t0);
    r.mask = r.checkpoint + ".mask.hsc";
    if (c.exit_code != 0) {
      r.message = "train exited " + std::to_string(c.exit_code) + ": " + c.output.substr(0, 300);
      return r;
    }
    const auto last = c.output.find_last_of('{');
    try {
      r.summary = nlohmann::json::parse(c.output.substr(last));
      r.ok = true;
    } catch (const std::exception& e) {
      r.message = std::string("unparsable train output: ") + e.what();
    }
    return r;
  }();
  return run_result;
}

Outcome toy_learning() {
  const ToyRun& r = toy_run();
  if (!r.ok) return {false, r.message};
  const double psnr = r.summary["val_psnr"], base = r.summary["baseline_psnr"];
  const double first = r.summary["first_loss"], last = r.summary["final_loss"];
  const bool pass = psnr - base >= 3.0 && last < 0.5 * first && r.seconds <= 600.0;
  return {pass, fmt::format("held-out {:.2f} dB vs baseline {:.2f} dB (+{:.2f}), loss {:.4f} -> {:.4f} ({:.0f}%), {:.0f} s",
                            psnr, base, psnr - base, first, last, 100.0 * last / first, r.seconds)};
}

Outcome stage_trend() {
  train::TrainConfig cfg;  // toy defaults: 48x48, N = 8, d = 1, C = 8, M = 4, 30 epochs
  const auto& mc = cfg.model;
  const auto scenes = train::synth_dataset(cfg.train_scenes, mc.height, mc.width, mc.bands, 100);
  const auto held_out = train::synth_dataset(4, mc.height, mc.width, mc.bands, 200);
  const Tensor mask = train::random_mask(mc.height, mc.width, 1);
  std::map<std::size_t, double> mean;
  std::string per_seed;
  for (std::size_t stages : {1, 3}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      cfg.model.stages = stages;
      cfg.seed = seed;
      const auto result = train::train(cfg, scenes, {}, mask);
      const double psnr = train::evaluate(result.params, cfg.model, mask, held_out).psnr;
      mean[stages] += psnr / 3.0;
      per_seed += fmt::format(" K{}s{}={:.2f}", stages, seed, psnr);
    }
  }
  return {mean[3] >= mean[1], fmt::format("mean PSNR K=3 {:.2f} dB vs K=1 {:.2f} dB;{}", mean[3], mean[1], per_seed)};
}

Outcome alpha_beta_probe() {
  const ToyRun& r = toy_run();
  if (!r.ok) return {false, r.message};
  const fs::path cube = work_dir() / "scene.hsc", y = work_dir() / "y.hsc", rec = work_dir() / "rec.hsc";
  io::write_hsc(cube, train::synth_dataset(1, 48, 48, 8, 777)[0]);
  const Command sim = run("simulate --cube " + cube.string() + " --mask " + r.mask + " --shift 1 --out " + y.string());
  if (sim.exit_code != 0) return {false, "simulate failed: " + sim.output};
  const Command c = run("reconstruct --measurement " + y.string() + " --mask " + r.mask + " --checkpoint " +
                        r.checkpoint + " --out " + rec.string());
  if (c.exit_code != 0) return {false, "reconstruct failed: " + c.output};
  std::istringstream lines(c.output);
  std::string line, values;
  std::size_t pairs = 0;
  bool positive = true;
  while (std::getline(lines, line)) {
    double a = 0, b = 0;
    int k = 0;
    if (std::sscanf(line.c_str(), "stage %d: alpha = %lf, beta = %lf", &k, &a, &b) == 3) {
      ++pairs;
      positive = positive && std::isfinite(a) && std::isfinite(b) && a > 0 && b > 0;
      values += fmt::format(" a{}={:.4g} b{}={:.4g}", k, a, k, b);
    }
  }
  return {pairs == 2 && positive, fmt::format("{} stage pairs printed:{}", pairs, values)};
}

Outcome verify_command() {
  const auto t0 = Clock::now();
  const Command clean = run("verify");
  const Command faulty = run("verify --fault-inject");
  const double t = seconds_since(t0);
  const bool projection_failed = faulty.output.find("FAIL [projection]") != std::string::npos;
  const bool diagonal_passed = faulty.output.find("PASS [sensing] Phi Phi^T off-diagonal") != std::string::npos;
  return {clean.exit_code == 0 && faulty.exit_code == 1 && projection_failed && diagonal_passed && t < 120.0,
          fmt::format("clean exit {}, fault-injected exit {} (projection {}, diagonality {}), {:.1f} s", clean.exit_code,
                      faulty.exit_code, projection_failed ? "fails" : "passes",
                      diagonal_passed ? "passes" : "fails", t)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"explicit Phi Phi^T is exactly diagonal (100 instances, < 5 s)", diagonality},
      {"matrix inversion formula within 1e-10 (50 instances, < 10 s)", inversion_formula},
      {"diagonal closed forms within 1e-10 (same instances)", diagonal_forms},
      {"projection matches the dense closed form within 1e-8 relative (100 instances, < 10 s)", projection_oracle},
      {"attention degenerate windows match global attention within 1e-10 (20 inputs, < 10 s)", attention_degenerate},
      {"window and shuffle round trips are bit-identical (50 shapes, < 5 s)", bijections},
      {"all primitives and the tiny HST pass central differences at 1e-4 (< 60 s)", gradient_checks},
      {"toy training beats the adjoint baseline by >= 3 dB, loss halves, <= 10 min", toy_learning},
      {"K = 3 toy model scores >= K = 1 (mean over 3 seeds)", stage_trend},
      {"reconstruct prints finite positive alpha, beta per stage", alpha_beta_probe},
      {"verify exits 0 clean and 1 under fault injection (< 2 min)", verify_command},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.contains(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.passed ? 0 : 1;
    fmt::print("{} criterion {:>2}: {} | {}\n", o.passed ? "PASS" : "FAIL", i + 1, criteria[i].first, o.measured);
    std::fflush(stdout);
  }
  fs::remove_all(work_dir());
  return failed == 0 ? 0 : 1;
}
