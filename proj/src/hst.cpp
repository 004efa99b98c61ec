#include "dauhst/hst.hpp"

#include <cmath>

#include "dauhst/error.hpp"
#include "dauhst/ops.hpp"

namespace dauhst::hst {

using ad::Var;

namespace {

std::size_t round_up(std::size_t v, std::size_t multiple) { return (v + multiple - 1) / multiple * multiple; }

std::string level_prefix(const std::string& prefix, std::size_t level) {
  return prefix + "/level" + std::to_string(level);
}

}  // namespace

void HstConfig::validate() const {
  if (channels == 0 || window == 0 || bands == 0 || height == 0 || width == 0) {
    throw ValueError("HST config: all sizes must be positive");
  }
  for (std::size_t l = 0; l < kLevels; ++l) {
    const std::size_t c = level_channels(l);
    if (heads[l] == 0 || c % (2 * heads[l]) != 0) {
      throw ValueError("HST config: level " + std::to_string(l) + " has " + std::to_string(c) +
                       " channels, not divisible into two halves of " + std::to_string(heads[l]) + " heads");
    }
  }
  if (padded_height() - height >= height || padded_width() - width >= width) {
    throw ValueError("HST config: " + std::to_string(height) + "x" + std::to_string(width) +
                     " is too small to reflect-pad to a multiple of 4*M = " + std::to_string(4 * window));
  }
}

std::size_t HstConfig::padded_height() const { return round_up(height, 4 * window); }
std::size_t HstConfig::padded_width() const { return round_up(width, 4 * window); }

std::size_t HstConfig::level_windows(std::size_t level) const {
  return (level_height(level) / window) * (level_width(level) / window);
}

HsMsaWeights bind_msa(ad::Tape& tape, const ad::ParamStore& store, const std::string& prefix) {
  auto p = [&](const char* name) { return tape.param(store, prefix + "/" + name); };
  return {p("wq"), p("wk"), p("wv"), p("pos_local"), p("pos_nonlocal"), p("out_local"), p("out_nonlocal")};
}

HsabWeights bind_hsab(ad::Tape& tape, const ad::ParamStore& store, const std::string& prefix) {
  auto p = [&](const char* name) { return tape.param(store, prefix + "/" + name); };
  HsabWeights w;
  w.norm1_scale = p("norm1/scale");
  w.norm1_shift = p("norm1/shift");
  w.msa = bind_msa(tape, store, prefix + "/msa");
  w.norm2_scale = p("norm2/scale");
  w.norm2_shift = p("norm2/shift");
  w.ffn_in_weight = p("ffn/w1");
  w.ffn_in_bias = p("ffn/b1");
  w.ffn_out_weight = p("ffn/w2");
  w.ffn_out_bias = p("ffn/b2");
  return w;
}

std::array<Var, 3> qkv_project(Var tokens, Var wq, Var wk, Var wv) {
  return {ad::fully_connected(tokens, wq, Var{}), ad::fully_connected(tokens, wk, Var{}),
          ad::fully_connected(tokens, wv, Var{})};
}

std::pair<Var, Var> half_split(Var t) {
  const Shape& s = t.shape();
  const std::size_t c = s.back();
  if (c % 2 != 0) throw ValueError("half_split: channel count " + std::to_string(c) + " is odd");
  const std::size_t sizes[] = {c / 2, c / 2};
  auto parts = ad::split(t, s.size() - 1, sizes);
  return {parts[0], parts[1]};
}

Var window_partition(Var t, std::size_t window) {
  const Shape s = t.shape();
  if (s.size() != 3) throw ShapeError("window_partition: expected (H, W, C), got " + to_string(s));
  const std::size_t h = s[0], w = s[1], c = s[2], m = window;
  if (m == 0 || h % m != 0 || w % m != 0) {
    throw ShapeError("window_partition: " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by window " + std::to_string(m));
  }
  Var grid = ad::reshape(t, {h / m, m, w / m, m, c});
  return ad::reshape(ad::permute(grid, {0, 2, 1, 3, 4}), {(h / m) * (w / m), m * m, c});
}

Var window_reverse(Var windows, std::size_t height, std::size_t width, std::size_t window) {
  const Shape s = windows.shape();
  const std::size_t m = window;
  if (s.size() != 3 || m == 0 || height % m || width % m || s[0] != (height / m) * (width / m) || s[1] != m * m) {
    throw ShapeError("window_reverse: " + to_string(s) + " does not tile " + std::to_string(height) + "x" +
                     std::to_string(width) + " with window " + std::to_string(m));
  }
  Var grid = ad::reshape(windows, {height / m, width / m, m, m, s[2]});
  return ad::reshape(ad::permute(grid, {0, 2, 1, 3, 4}), {height, width, s[2]});
}

Var shuffle_transpose(Var t) {
  if (t.shape().size() != 3) throw ShapeError("shuffle_transpose: expected rank 3, got " + to_string(t.shape()));
  return ad::permute(t, {1, 0, 2});
}

namespace {

// (G, L, h*d) -> (h*G, L, d), head-major.
Var split_heads(Var t, std::size_t heads) {
  const Shape s = t.shape();
  const std::size_t g = s[0], l = s[1], d = s[2] / heads;
  if (heads == 1) return t;
  return ad::reshape(ad::permute(ad::reshape(t, {g, l, heads, d}), {2, 0, 1, 3}), {heads * g, l, d});
}

Var merge_heads(Var t, std::size_t heads, std::size_t groups) {
  const Shape s = t.shape();
  const std::size_t l = s[1], d = s[2];
  if (heads == 1) return t;
  return ad::reshape(ad::permute(ad::reshape(t, {heads, groups, l, d}), {1, 2, 0, 3}), {groups, l, heads * d});
}

}  // namespace

Var attention_probabilities(Var q, Var k, Var pos, std::size_t heads) {
  const Shape qs = q.shape();
  if (qs.size() != 3 || k.shape() != qs) {
    throw ShapeError("attention: Q " + to_string(qs) + " and K " + to_string(k.shape()) + " must match (G, L, C)");
  }
  if (heads == 0 || qs[2] % heads != 0) {
    throw ShapeError("attention: " + std::to_string(qs[2]) + " channels do not split into " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t g = qs[0], l = qs[1], d = qs[2] / heads;
  Var scores = ad::scale(ad::matmul(split_heads(q, heads), split_heads(k, heads), false, true),
                         1.0 / std::sqrt(static_cast<double>(d)));
  if (pos.valid()) {
    if (pos.shape() != Shape{heads, l, l}) {
      throw ShapeError("attention: position table " + to_string(pos.shape()) + " should be " +
                       to_string(Shape{heads, l, l}));
    }
    Var table = g == 1 ? pos : ad::reshape(ad::tile(ad::reshape(pos, {heads, 1, l, l}), 1, g), {heads * g, l, l});
    scores = ad::add(scores, table);
  }
  return ad::softmax(scores, -1);
}

Var attention_branch(Var q, Var k, Var v, Var pos, std::size_t heads) {
  if (v.shape() != q.shape()) {
    throw ShapeError("attention: V " + to_string(v.shape()) + " must match Q " + to_string(q.shape()));
  }
  const std::size_t groups = q.shape()[0];
  Var probs = attention_probabilities(q, k, pos, heads);
  return merge_heads(ad::matmul(probs, split_heads(v, heads)), heads, groups);
}

Var hs_msa(Var x, const HsMsaWeights& w, std::size_t window, std::size_t heads) {
  const Shape s = x.shape();
  if (s.size() != 3) throw ShapeError("hs_msa: expected (H, W, C), got " + to_string(s));
  const std::size_t h = s[0], wd = s[1];
  auto [q, k, v] = qkv_project(x, w.wq, w.wk, w.wv);
  auto [q_l, q_nl] = half_split(q);
  auto [k_l, k_nl] = half_split(k);
  auto [v_l, v_nl] = half_split(v);

  Var local = attention_branch(window_partition(q_l, window), window_partition(k_l, window),
                               window_partition(v_l, window), w.pos_local, heads);
  local = window_reverse(local, h, wd, window);

  auto shuffled = [&](Var t) { return shuffle_transpose(window_partition(t, window)); };
  Var nonlocal = attention_branch(shuffled(q_nl), shuffled(k_nl), shuffled(v_nl), w.pos_nonlocal, heads);
  nonlocal = window_reverse(unshuffle(nonlocal), h, wd, window);

  return ad::add(ad::fully_connected(local, w.out_local, Var{}), ad::fully_connected(nonlocal, w.out_nonlocal, Var{}));
}

Var hsab_forward(Var x, const HsabWeights& w, std::size_t window, std::size_t heads) {
  Var attended = ad::add(x, hs_msa(ad::layer_norm(x, w.norm1_scale, w.norm1_shift), w.msa, window, heads));
  Var hidden = ad::gelu(
      ad::fully_connected(ad::layer_norm(attended, w.norm2_scale, w.norm2_shift), w.ffn_in_weight, w.ffn_in_bias));
  return ad::add(attended, ad::fully_connected(hidden, w.ffn_out_weight, w.ffn_out_bias));
}

Var hst_denoise(Var x, Var beta, const ad::ParamStore& store, const std::string& prefix, const HstConfig& cfg) {
  cfg.validate();
  const Shape xs = x.shape();
  if (xs != Shape{cfg.height, cfg.width, cfg.bands}) {
    throw ShapeError("hst_denoise: input " + to_string(xs) + " does not match the size the weights are bound to " +
                     to_string(Shape{cfg.height, cfg.width, cfg.bands}));
  }
  if (beta.value().size() != 1 || !(beta.value()[0] > 0.0)) {
    throw ValueError("hst_denoise: beta must be a single positive value");
  }
  ad::Tape& tape = *x.tape();
  const std::size_t ph = cfg.padded_height(), pw = cfg.padded_width();
  auto param = [&](std::size_t level, const std::string& name) {
    return tape.param(store, level_prefix(prefix, level) + "/" + name);
  };
  auto block = [&](std::size_t level, const std::string& name) {
    return bind_hsab(tape, store, level_prefix(prefix, level) + "/" + name);
  };

  Var padded = (ph == cfg.height && pw == cfg.width) ? x : ad::pad_reflect(x, ph - cfg.height, pw - cfg.width);
  Var noise_plane = ad::scale(tape.constant(Tensor({ph, pw, 1}, 1.0)), beta);
  const Var stem_in[] = {padded, noise_plane};
  Var feat = ad::conv2d(ad::concat(stem_in, 2), param(0, "embed/weight"), param(0, "embed/bias"), 1, 1);

  std::array<Var, kLevels - 1> skips;
  for (std::size_t l = 0; l + 1 < kLevels; ++l) {
    skips[l] = hsab_forward(feat, block(l, "enc"), cfg.window, cfg.heads[l]);
    feat = ad::conv2d(skips[l], param(l, "down/weight"), param(l, "down/bias"), 2, 1);
  }
  feat = hsab_forward(feat, block(kLevels - 1, "bottleneck"), cfg.window, cfg.heads[kLevels - 1]);
  for (std::size_t l = kLevels - 1; l-- > 0;) {
    Var up = ad::conv_transpose2d(feat, param(l, "up/weight"), param(l, "up/bias"), 2, 0);
    const Var fuse_in[] = {up, skips[l]};
    feat = ad::fully_connected(ad::concat(fuse_in, 2), param(l, "fuse/weight"), param(l, "fuse/bias"));
    feat = hsab_forward(feat, block(l, "dec"), cfg.window, cfg.heads[l]);
  }
  Var residual = ad::conv2d(feat, param(0, "mapping/weight"), param(0, "mapping/bias"), 1, 1);
  if (ph != cfg.height || pw != cfg.width) residual = ad::crop(residual, cfg.height, cfg.width);
  return ad::add(x, residual);
}

Tensor hst_denoise(const Tensor& x, double beta, const ad::ParamStore& store, const std::string& prefix,
                   const HstConfig& cfg) {
  ad::Tape tape(false);
  return hst_denoise(tape.constant(x), tape.constant(Tensor::scalar(beta)), store, prefix, cfg).value();
}

namespace {

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform_tensor(std::move(shape), rng, -bound, bound);
}

void init_hsab(ad::ParamStore& store, const std::string& p, std::size_t c, std::size_t heads, std::size_t window,
               std::size_t windows, Rng& rng) {
  const std::size_t tokens = window * window;
  store.set(p + "/norm1/scale", Tensor({c}, 1.0));
  store.set(p + "/norm1/shift", Tensor({c}, 0.0));
  store.set(p + "/norm2/scale", Tensor({c}, 1.0));
  store.set(p + "/norm2/shift", Tensor({c}, 0.0));
  store.set(p + "/msa/wq", fan_in_uniform({c, c}, c, rng));
  store.set(p + "/msa/wk", fan_in_uniform({c, c}, c, rng));
  store.set(p + "/msa/wv", fan_in_uniform({c, c}, c, rng));
  store.set(p + "/msa/pos_local", normal_tensor({heads, tokens, tokens}, rng, 0.02));
  store.set(p + "/msa/pos_nonlocal", normal_tensor({heads, windows, windows}, rng, 0.02));
  store.set(p + "/msa/out_local", fan_in_uniform({c / 2, c}, c, rng));
  store.set(p + "/msa/out_nonlocal", fan_in_uniform({c / 2, c}, c, rng));
  store.set(p + "/ffn/w1", fan_in_uniform({c, 4 * c}, c, rng));
  store.set(p + "/ffn/b1", Tensor({4 * c}, 0.0));
  store.set(p + "/ffn/w2", fan_in_uniform({4 * c, c}, 4 * c, rng));
  store.set(p + "/ffn/b2", Tensor({c}, 0.0));
}

}  // namespace

void init_hst_params(ad::ParamStore& store, const std::string& prefix, const HstConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t c0 = cfg.level_channels(0);
  const std::string l0 = level_prefix(prefix, 0);
  store.set(l0 + "/embed/weight", fan_in_uniform({3, 3, cfg.bands + 1, c0}, 9 * (cfg.bands + 1), rng));
  store.set(l0 + "/embed/bias", Tensor({c0}, 0.0));
  for (std::size_t l = 0; l < kLevels; ++l) {
    const std::string lp = level_prefix(prefix, l);
    const std::size_t c = cfg.level_channels(l);
    const bool bottom = l + 1 == kLevels;
    init_hsab(store, lp + (bottom ? "/bottleneck" : "/enc"), c, cfg.heads[l], cfg.window, cfg.level_windows(l), rng);
    if (bottom) continue;
    const std::size_t next = cfg.level_channels(l + 1);
    store.set(lp + "/down/weight", fan_in_uniform({4, 4, c, next}, 16 * c, rng));
    store.set(lp + "/down/bias", Tensor({next}, 0.0));
    store.set(lp + "/up/weight", fan_in_uniform({2, 2, next, c}, 4 * next, rng));
    store.set(lp + "/up/bias", Tensor({c}, 0.0));
    store.set(lp + "/fuse/weight", fan_in_uniform({2 * c, c}, 2 * c, rng));
    store.set(lp + "/fuse/bias", Tensor({c}, 0.0));
    init_hsab(store, lp + "/dec", c, cfg.heads[l], cfg.window, cfg.level_windows(l), rng);
  }
  store.set(l0 + "/mapping/weight", fan_in_uniform({3, 3, c0, cfg.bands}, 9 * c0, rng));
  store.set(l0 + "/mapping/bias", Tensor({cfg.bands}, 0.0));
}

}  // namespace dauhst::hst
