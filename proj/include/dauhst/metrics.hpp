#pragma once

// Image-quality metrics over (H, W, N) cubes, both averaged over bands.

#include <vector>

#include "dauhst/tensor.hpp"

namespace dauhst::metrics {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(peak^2 / MSE) per band, capped at kPsnrCap for identical bands.
std::vector<double> psnr_per_band(const Tensor& pred, const Tensor& truth, double peak = 1.0);
double psnr(const Tensor& pred, const Tensor& truth, double peak = 1.0);

/// Gaussian-window SSIM (11 x 11, sigma 1.5, k1 = 0.01, k2 = 0.03, data range 1), averaged
/// over valid window positions. Images smaller than 11 pixels use a window clipped to fit.
std::vector<double> ssim_per_band(const Tensor& pred, const Tensor& truth);
double ssim(const Tensor& pred, const Tensor& truth);

}  // namespace dauhst::metrics
