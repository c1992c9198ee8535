#pragma once

#include "lkf/tensor.hpp"

// Neural building blocks on (B, C, H, W) tensors: grouped 2-D convolution
// (cross-correlation with zero padding, stride 1), separable large-kernel
// depth-wise pairs, per-location channel layer norm, SiLU and pixel shuffle.
// All of them differentiate through the tape.

namespace lkf {

struct Conv2dParams {
  Tensor weight;  // (C_out, C_in/groups, k_h, k_w)
  Tensor bias;    // (C_out); leave undefined for a bias-free conv
  int groups = 1;
  int pad_h = 0;
  int pad_w = 0;

  int out_channels() const { return weight.dim(0); }
  int in_channels() const { return weight.dim(1) * groups; }
  int kh() const { return weight.dim(2); }
  int kw() const { return weight.dim(3); }
  bool has_bias() const { return bias.defined(); }
};

// Gaussian(0, weight_std) weights, zero bias, "same" padding floor(k/2).
Conv2dParams make_conv(int c_in, int c_out, int k_h, int k_w, int groups, Rng& rng,
                       bool with_bias = true, double weight_std = 0.02);

// out(b,oc,oy,ox) = bias(oc) + sum over the oc's group of
//   x(b,ic,oy+ky-pad_h,ox+kx-pad_w) * w(oc,icg,ky,kx), zeros outside x.
// Output spatial dims: H + 2*pad_h - k_h + 1 by W + 2*pad_w - k_w + 1.
Tensor conv2d(const Tensor& x, const Conv2dParams& p);

// k x 1 depth-wise followed by 1 x k depth-wise, both same-padded; the pair
// realizes a rank-1 k x k depth-wise kernel at cost 2k instead of k^2.
struct SeparableDwcParams {
  Conv2dParams col;  // k x 1
  Conv2dParams row;  // 1 x k
  int k = 0;
};
SeparableDwcParams make_separable_dwc(int channels, int k, Rng& rng, bool with_bias = true,
                                      double weight_std = 0.02);
Tensor separable_dwc(const Tensor& x, const SeparableDwcParams& p);

// Normalization over the channel dimension independently at each (b, y, x).
struct LayerNormParams {
  Tensor gamma;  // (C)
  Tensor beta;   // (C)
  double eps = 1e-6;
};
LayerNormParams make_layer_norm(int channels);
Tensor layer_norm(const Tensor& x, const LayerNormParams& p);

// x * sigmoid(x)
Tensor silu(const Tensor& x);

// (B, C*r^2, H, W) -> (B, C, H*r, W*r);
// out(b,c,y*r+dy,x*r+dx) = in(b, c*r^2 + dy*r + dx, y, x).
Tensor pixel_shuffle(const Tensor& x, int r);

}  // namespace lkf
