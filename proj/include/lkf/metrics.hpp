#pragma once

#include <vector>

// PSNR and SSIM on 8-bit-range grayscale images. Pixels are held as doubles
// in [0, 255] so metric math is lossless; both metrics crop the same border
// from both images first (the usual SR protocol crops `scale` pixels).

namespace lkf {

struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // row-major, values in [0, 255]

  ImageU8() = default;
  ImageU8(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0.0) {}

  double at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// 10*log10(255^2 / MSE) over the cropped region; +infinity for identical
// images (zero MSE).
double psnr(const ImageU8& a, const ImageU8& b, int border_crop = 0);

// Mean of the local SSIM map, 11x11 Gaussian window with sigma 1.5 over
// fully-interior windows, K1=0.01, K2=0.03, L=255.
double ssim(const ImageU8& a, const ImageU8& b, int border_crop = 0);

}  // namespace lkf
