#pragma once

#include <cstddef>
#include <vector>

#include "lkf/tensor.hpp"

// Test-only reference implementations. Each is written as a direct
// per-output-element summation so it shares no code path with the library
// kernel it checks.

namespace lkf::testing {

// Direct grouped cross-correlation with zero padding, one output element at
// a time.
inline Tensor conv2d_reference(const Tensor& x, const Tensor& weight, const Tensor& bias,
                               int groups, int pad_h, int pad_w) {
  const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = weight.dim(0), Cin_g = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  const int Ho = H + 2 * pad_h - kh + 1;
  const int Wo = W + 2 * pad_w - kw + 1;
  const int cout_g = Cout / groups;
  Tensor out = zeros({B, Cout, Ho, Wo});
  for (int b = 0; b < B; ++b) {
    for (int oc = 0; oc < Cout; ++oc) {
      const int g = oc / cout_g;
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = bias.defined() ? bias.data()[oc] : 0.0;
          for (int icg = 0; icg < Cin_g; ++icg) {
            const int ic = g * Cin_g + icg;
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy + ky - pad_h;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox + kx - pad_w;
                if (ix < 0 || ix >= W) continue;
                acc += x.at4(b, ic, iy, ix) * weight.at4(oc, icg, ky, kx);
              }
            }
          }
          out.at4(b, oc, oy, ox) = acc;
        }
      }
    }
  }
  return out;
}

// Rank-1 k x k depth-wise kernel built as the outer product of a (C,1,k,1)
// column kernel and a (C,1,1,k) row kernel.
inline Tensor outer_product_kernel(const Tensor& col, const Tensor& row) {
  const int C = col.dim(0);
  const int k = col.dim(2);
  Tensor w = zeros({C, 1, k, k});
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        w.at4(c, 0, i, j) = col.at4(c, 0, i, 0) * row.at4(c, 0, 0, j);
      }
    }
  }
  return w;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = pa[i] > pb[i] ? pa[i] - pb[i] : pb[i] - pa[i];
    if (d > m) m = d;
  }
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (pa[i] != pb[i]) return false;
  }
  return true;
}

inline Tensor uniform_tensor(const std::vector<int>& shape, Rng& rng, double lo, double hi) {
  Tensor t = zeros(shape);
  double* p = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) p[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

}  // namespace lkf::testing
