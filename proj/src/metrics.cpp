#include "dauhst/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dauhst/error.hpp"

namespace dauhst::metrics {

namespace {

void check_pair(const Tensor& pred, const Tensor& truth, const char* what) {
  if (pred.shape() != truth.shape() || pred.rank() != 3) {
    throw ShapeError(std::string(what) + ": expected two equal (H, W, N) cubes, got " + to_string(pred.shape()) +
                     " and " + to_string(truth.shape()));
  }
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = (size - 1) / 2.0;
  for (std::size_t i = 0; i < size; ++i) g[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  const double total = std::accumulate(g.begin(), g.end(), 0.0);
  for (double& v : g) v /= total;
  return g;
}

}  // namespace

std::vector<double> psnr_per_band(const Tensor& pred, const Tensor& truth, double peak) {
  check_pair(pred, truth, "psnr");
  const std::size_t bands = pred.dim(2), pixels = pred.size() / bands;
  std::vector<double> out(bands);
  for (std::size_t l = 0; l < bands; ++l) {
    double se = 0.0;
    for (std::size_t i = 0; i < pixels; ++i) {
      const double d = pred[i * bands + l] - truth[i * bands + l];
      se += d * d;
    }
    const double mse = se / pixels;
    out[l] = mse == 0.0 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
  }
  return out;
}

double psnr(const Tensor& pred, const Tensor& truth, double peak) { return mean(psnr_per_band(pred, truth, peak)); }

std::vector<double> ssim_per_band(const Tensor& pred, const Tensor& truth) {
  check_pair(pred, truth, "ssim");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t h = pred.dim(0), w = pred.dim(1), bands = pred.dim(2);
  const std::size_t win = std::min<std::size_t>({11, h, w});
  const std::vector<double> g = gaussian_window(win, 1.5);
  std::vector<double> out(bands);
  for (std::size_t l = 0; l < bands; ++l) {
    double total = 0.0;
    for (std::size_t i = 0; i + win <= h; ++i) {
      for (std::size_t j = 0; j + win <= w; ++j) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (std::size_t a = 0; a < win; ++a) {
          for (std::size_t b = 0; b < win; ++b) {
            const double wt = g[a] * g[b];
            const double x = pred[((i + a) * w + j + b) * bands + l];
            const double y = truth[((i + a) * w + j + b) * bands + l];
            mx += wt * x;
            my += wt * y;
            sxx += wt * x * x;
            syy += wt * y * y;
            sxy += wt * x * y;
          }
        }
        const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    }
    out[l] = total / ((h - win + 1) * (w - win + 1));
  }
  return out;
}

double ssim(const Tensor& pred, const Tensor& truth) { return mean(ssim_per_band(pred, truth)); }

}  // namespace dauhst::metrics
