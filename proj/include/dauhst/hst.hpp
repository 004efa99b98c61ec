#pragma once

// Half-Shuffle Transformer denoiser.
//
// Three-level U-shape over (H, W', C) token maps. Each Half-Shuffle Attention Block
// (HSAB) is X + HS-MSA(LN(X)) followed by X' + FFN(LN(X')). HS-MSA projects tokens to
// Q, K, V, splits channels in half, and runs windowed attention on the first half
// (tokens inside one M x M window attend to each other) and shuffled attention on the
// second half (after transposing the window and in-window axes, each group holds the
// token at the same in-window position of every window).

#include <array>
#include <cstddef>
#include <string>
#include <utility>

#include "dauhst/autodiff.hpp"
#include "dauhst/random.hpp"

namespace dauhst::hst {

inline constexpr std::size_t kLevels = 3;

struct HstConfig {
  std::size_t channels = 8;  // C at the first level
  std::size_t window = 8;    // M
  std::size_t bands = 8;     // spectral channels of the denoised cube
  std::size_t height = 48;   // spatial size the position tables are bound to
  std::size_t width = 55;
  std::array<std::size_t, kLevels> heads{1, 2, 4};
  std::array<std::size_t, kLevels> multipliers{1, 2, 4};

  /// Throws ValueError when a level's channel count is odd or not divisible into heads.
  void validate() const;

  std::size_t padded_height() const;
  std::size_t padded_width() const;
  std::size_t level_channels(std::size_t level) const { return channels * multipliers.at(level); }
  std::size_t level_height(std::size_t level) const { return padded_height() >> level; }
  std::size_t level_width(std::size_t level) const { return padded_width() >> level; }
  /// Number of M x M windows at a level (the non-local attention length).
  std::size_t level_windows(std::size_t level) const;
  std::size_t head_dim(std::size_t level) const { return level_channels(level) / (2 * heads.at(level)); }
};

/// Weights of one HS-MSA module, bound to tape variables.
struct HsMsaWeights {
  ad::Var wq, wk, wv;              // (C, C), no bias
  ad::Var pos_local;               // (h, M^2, M^2)
  ad::Var pos_nonlocal;            // (h, nW, nW)
  ad::Var out_local, out_nonlocal; // (C/2, C): per-head d_h x C blocks stacked
};

struct HsabWeights {
  ad::Var norm1_scale, norm1_shift;
  HsMsaWeights msa;
  ad::Var norm2_scale, norm2_shift;
  ad::Var ffn_in_weight, ffn_in_bias;    // (C, 4C), (4C)
  ad::Var ffn_out_weight, ffn_out_bias;  // (4C, C), (C)
};

HsMsaWeights bind_msa(ad::Tape& tape, const ad::ParamStore& store, const std::string& prefix);
HsabWeights bind_hsab(ad::Tape& tape, const ad::ParamStore& store, const std::string& prefix);

/// Q = X W^Q, K = X W^K, V = X W^V per token.
std::array<ad::Var, 3> qkv_project(ad::Var tokens, ad::Var wq, ad::Var wk, ad::Var wv);
/// First C/2 channels and last C/2 channels. Throws ValueError for odd C.
std::pair<ad::Var, ad::Var> half_split(ad::Var t);
/// (H, W, C) -> (HW/M^2, M^2, C), windows and in-window tokens both row-major.
ad::Var window_partition(ad::Var t, std::size_t window);
ad::Var window_reverse(ad::Var windows, std::size_t height, std::size_t width, std::size_t window);
/// Swaps the first two axes: (G, L, C) -> (L, G, C). Its own inverse.
ad::Var shuffle_transpose(ad::Var t);
inline ad::Var unshuffle(ad::Var t) { return shuffle_transpose(t); }

/// softmax(Q K^T / sqrt(d_h) + P) per group and head; Q, K are (G, L, h*d_h),
/// P is (h, L, L) or unbound. Returns (h*G, L, L), head-major.
ad::Var attention_probabilities(ad::Var q, ad::Var k, ad::Var pos, std::size_t heads);
/// Multi-head attention within each group: returns (G, L, h*d_h).
ad::Var attention_branch(ad::Var q, ad::Var k, ad::Var v, ad::Var pos, std::size_t heads);

ad::Var hs_msa(ad::Var x, const HsMsaWeights& w, std::size_t window, std::size_t heads);
ad::Var hsab_forward(ad::Var x, const HsabWeights& w, std::size_t window, std::size_t heads);

/// Denoises a shifted cube (H, W', N) at noise-level input beta (one value, > 0).
/// Weights are read from `store` under "<prefix>/level{l}/...".
ad::Var hst_denoise(ad::Var x, ad::Var beta, const ad::ParamStore& store, const std::string& prefix,
                    const HstConfig& cfg);
Tensor hst_denoise(const Tensor& x, double beta, const ad::ParamStore& store, const std::string& prefix,
                   const HstConfig& cfg);

/// Adds a freshly initialised HST under `prefix`.
void init_hst_params(ad::ParamStore& store, const std::string& prefix, const HstConfig& cfg, Rng& rng);

}  // namespace dauhst::hst
