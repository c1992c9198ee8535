#include "lkf/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace lkf {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kL = 255.0;
constexpr double kC1 = (0.01 * kL) * (0.01 * kL);
constexpr double kC2 = (0.03 * kL) * (0.03 * kL);

void check_pair(const ImageU8& a, const ImageU8& b, int crop, const char* op) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument(std::string(op) + ": image dims differ (" +
                                std::to_string(a.height) + "x" + std::to_string(a.width) +
                                " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + ")");
  }
  if (crop < 0 || 2 * crop >= a.height || 2 * crop >= a.width) {
    throw std::invalid_argument(std::string(op) + ": border crop " + std::to_string(crop) +
                                " leaves no pixels");
  }
}

// 1-D Gaussian normalized to sum 1; the separable product then sums to 1 in
// 2-D as well.
std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> g{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - (kWindow - 1) / 2;
    g[i] = std::exp(-(d * d) / (2.0 * kSigma * kSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Horizontal then vertical Gaussian pass over an h x w buffer, valid region
// only: output is (h - 10) x (w - 10).
std::vector<double> gauss_filter_valid(const std::vector<double>& img, int h, int w) {
  static const std::array<double, kWindow> g = gaussian_window();
  const int wo = w - kWindow + 1;
  const int ho = h - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * wo);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (int t = 0; t < kWindow; ++t) acc += g[t] * img[static_cast<std::size_t>(y) * w + x + t];
      rows[static_cast<std::size_t>(y) * wo + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (int t = 0; t < kWindow; ++t) acc += g[t] * rows[static_cast<std::size_t>(y + t) * wo + x];
      out[static_cast<std::size_t>(y) * wo + x] = acc;
    }
  }
  return out;
}

std::vector<double> cropped(const ImageU8& img, int crop) {
  const int h = img.height - 2 * crop;
  const int w = img.width - 2 * crop;
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out[static_cast<std::size_t>(y) * w + x] = img.at(y + crop, x + crop);
    }
  }
  return out;
}

}  // namespace

double psnr(const ImageU8& a, const ImageU8& b, int border_crop) {
  check_pair(a, b, border_crop, "psnr");
  const int y1 = a.height - border_crop;
  const int x1 = a.width - border_crop;
  double se = 0.0;
  std::size_t n = 0;
  for (int y = border_crop; y < y1; ++y) {
    for (int x = border_crop; x < x1; ++x) {
      const double d = a.at(y, x) - b.at(y, x);
      se += d * d;
      ++n;
    }
  }
  const double mse = se / static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(kL * kL / mse);
}

double ssim(const ImageU8& a, const ImageU8& b, int border_crop) {
  check_pair(a, b, border_crop, "ssim");
  const int h = a.height - 2 * border_crop;
  const int w = a.width - 2 * border_crop;
  if (h < kWindow || w < kWindow) {
    throw std::invalid_argument("ssim: image too small for an 11x11 window after cropping");
  }
  const std::vector<double> pa = cropped(a, border_crop);
  const std::vector<double> pb = cropped(b, border_crop);
  const std::size_t n = pa.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = pa[i] * pa[i];
    bb[i] = pb[i] * pb[i];
    ab[i] = pa[i] * pb[i];
  }
  const std::vector<double> mu_a = gauss_filter_valid(pa, h, w);
  const std::vector<double> mu_b = gauss_filter_valid(pb, h, w);
  const std::vector<double> e_aa = gauss_filter_valid(aa, h, w);
  const std::vector<double> e_bb = gauss_filter_valid(bb, h, w);
  const std::vector<double> e_ab = gauss_filter_valid(ab, h, w);

  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i];
    const double mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    const double num = (2.0 * ma * mb + kC1) * (2.0 * cov + kC2);
    const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
    total += num / den;
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace lkf
