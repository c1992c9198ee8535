#include "lkf/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lkf/autograd.hpp"
#include "parallel.hpp"

#if defined(LKF_USE_MVEC) && defined(__AVX512F__)
#include <immintrin.h>
extern "C" __m512d _ZGVeN8v_exp(__m512d);  // glibc libmvec, <= 2 ulp
#define LKF_VEC_EXP 1
#endif

namespace lkf {

namespace {

// Numerically stable sigmoid for the whole buffer. With libmvec available
// every element goes through the same 8-lane exp (tails via a staging
// buffer), keeping the function a pure mapping of values.
void sigmoid_buffer(const double* x, double* s, std::size_t n) {
#ifdef LKF_VEC_EXP
  const __m512d sign_mask = _mm512_set1_pd(-0.0);
  const __m512d one = _mm512_set1_pd(1.0);
  const __m512d zero = _mm512_setzero_pd();
  std::size_t i = 0;
  alignas(64) double stage[8];
  while (i < n) {
    const std::size_t chunk = std::min<std::size_t>(8, n - i);
    __m512d v;
    if (chunk == 8) {
      v = _mm512_loadu_pd(x + i);
    } else {
      for (std::size_t j = 0; j < chunk; ++j) stage[j] = x[i + j];
      for (std::size_t j = chunk; j < 8; ++j) stage[j] = 0.0;
      v = _mm512_load_pd(stage);
    }
    const __m512d absv = _mm512_andnot_pd(sign_mask, v);
    const __m512d e = _ZGVeN8v_exp(_mm512_sub_pd(zero, absv));
    const __mmask8 nonneg = _mm512_cmp_pd_mask(v, zero, _CMP_GE_OQ);
    const __m512d num = _mm512_mask_blend_pd(nonneg, e, one);
    const __m512d sig = _mm512_div_pd(num, _mm512_add_pd(one, e));
    if (chunk == 8) {
      _mm512_storeu_pd(s + i, sig);
    } else {
      _mm512_store_pd(stage, sig);
      for (std::size_t j = 0; j < chunk; ++j) s[i + j] = stage[j];
    }
    i += chunk;
  }
#else
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    s[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
#endif
}

struct ConvDims {
  int B, Cin, H, W;
  int Cout, Cin_g, kh, kw;
  int ph, pw;
  int Ho, Wo;
  int groups;
};

ConvDims conv_dims(const Tensor& x, const Conv2dParams& p) {
  if (!x.defined() || x.ndim() != 4) {
    throw std::invalid_argument("conv2d: input must be 4-D (B,C,H,W)");
  }
  if (!p.weight.defined() || p.weight.ndim() != 4) {
    throw std::invalid_argument("conv2d: weight must be 4-D (C_out,C_in/groups,k_h,k_w)");
  }
  ConvDims d;
  d.B = x.dim(0);
  d.Cin = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.Cout = p.weight.dim(0);
  d.Cin_g = p.weight.dim(1);
  d.kh = p.weight.dim(2);
  d.kw = p.weight.dim(3);
  d.ph = p.pad_h;
  d.pw = p.pad_w;
  d.groups = p.groups;
  if (d.groups < 1 || d.Cin % d.groups != 0 || d.Cout % d.groups != 0) {
    throw std::invalid_argument("conv2d: channels must be divisible by groups");
  }
  if (d.Cin / d.groups != d.Cin_g) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(d.Cin) +
                                " channels, weight expects " +
                                std::to_string(d.Cin_g * d.groups));
  }
  if (p.has_bias() && (p.bias.ndim() != 1 || p.bias.dim(0) != d.Cout)) {
    throw std::invalid_argument("conv2d: bias shape must be (C_out)");
  }
  if (d.ph < 0 || d.pw < 0) throw std::invalid_argument("conv2d: negative padding");
  d.Ho = d.H + 2 * d.ph - d.kh + 1;
  d.Wo = d.W + 2 * d.pw - d.kw + 1;
  if (d.Ho < 1 || d.Wo < 1) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }
  return d;
}

// Pointwise (1x1, unpadded) convolution: a plane-sized axpy per channel
// pair, four output channels per pass so the input plane is streamed once.
// Each output element accumulates in icg order either way, so this kernel
// and the generic one produce identical bits.
void conv1x1_forward(const ConvDims& d, const double* x, const double* w, const double* bias,
                     double* out) {
  const std::size_t plane = static_cast<std::size_t>(d.H) * d.W;
  const int cout_g = d.Cout / d.groups;
  constexpr int kTile = 4;
  const int tiles_per_group = (cout_g + kTile - 1) / kTile;
  const std::size_t task_count = static_cast<std::size_t>(d.B) * d.groups * tiles_per_group;
  detail::parallel_for(task_count, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const int b = static_cast<int>(i / (d.groups * tiles_per_group));
      const int rem = static_cast<int>(i % (d.groups * tiles_per_group));
      const int g = rem / tiles_per_group;
      const int oc0 = g * cout_g + (rem % tiles_per_group) * kTile;
      const int nt = std::min(kTile, g * cout_g + cout_g - oc0);
      double* op[kTile];
      for (int j = 0; j < nt; ++j) {
        op[j] = out + (static_cast<std::size_t>(b) * d.Cout + oc0 + j) * plane;
        std::fill(op[j], op[j] + plane, bias ? bias[oc0 + j] : 0.0);
      }
      const double* xg = x + (static_cast<std::size_t>(b) * d.Cin + g * d.Cin_g) * plane;
      for (int icg = 0; icg < d.Cin_g; ++icg) {
        const double* xp = xg + static_cast<std::size_t>(icg) * plane;
        if (nt == kTile) {
          const double w0 = w[static_cast<std::size_t>(oc0 + 0) * d.Cin_g + icg];
          const double w1 = w[static_cast<std::size_t>(oc0 + 1) * d.Cin_g + icg];
          const double w2 = w[static_cast<std::size_t>(oc0 + 2) * d.Cin_g + icg];
          const double w3 = w[static_cast<std::size_t>(oc0 + 3) * d.Cin_g + icg];
          double* o0 = op[0];
          double* o1 = op[1];
          double* o2 = op[2];
          double* o3 = op[3];
          for (std::size_t t = 0; t < plane; ++t) {
            const double xv = xp[t];
            o0[t] += w0 * xv;
            o1[t] += w1 * xv;
            o2[t] += w2 * xv;
            o3[t] += w3 * xv;
          }
        } else {
          for (int j = 0; j < nt; ++j) {
            const double wj = w[static_cast<std::size_t>(oc0 + j) * d.Cin_g + icg];
            double* orow = op[j];
            for (std::size_t t = 0; t < plane; ++t) orow[t] += wj * xp[t];
          }
        }
      }
    }
  });
}

// Forward as accumulation of weight-scaled shifted rows; the inner loop is a
// contiguous axpy over output columns.
void conv_forward(const ConvDims& d, const double* x, const double* w, const double* bias,
                  double* out) {
  if (d.kh == 1 && d.kw == 1 && d.ph == 0 && d.pw == 0) {
    conv1x1_forward(d, x, w, bias, out);
    return;
  }
  const std::size_t xplane = static_cast<std::size_t>(d.H) * d.W;
  const std::size_t oplane = static_cast<std::size_t>(d.Ho) * d.Wo;
  const int cout_g = d.Cout / d.groups;
  detail::parallel_for(static_cast<std::size_t>(d.B) * d.Cout, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const int b = static_cast<int>(i) / d.Cout;
      const int oc = static_cast<int>(i) % d.Cout;
      const int g = oc / cout_g;
      double* op = out + i * oplane;
      std::fill(op, op + oplane, bias ? bias[oc] : 0.0);
      for (int icg = 0; icg < d.Cin_g; ++icg) {
        const double* xp = x + (static_cast<std::size_t>(b) * d.Cin + g * d.Cin_g + icg) * xplane;
        const double* wp =
            w + ((static_cast<std::size_t>(oc) * d.Cin_g + icg) * d.kh) * d.kw;
        for (int ky = 0; ky < d.kh; ++ky) {
          const int oy0 = std::max(0, d.ph - ky);
          const int oy1 = std::min(d.Ho, d.H + d.ph - ky);
          for (int kx = 0; kx < d.kw; ++kx) {
            const double wv = wp[ky * d.kw + kx];
            const int ox0 = std::max(0, d.pw - kx);
            const int ox1 = std::min(d.Wo, d.W + d.pw - kx);
            const int len = ox1 - ox0;
            if (len <= 0) continue;
            if (len == d.W && d.Wo == d.W && ky == d.ph && kx == d.pw) {
              // unshifted tap: one contiguous axpy across all rows
              const double* xr = xp + static_cast<std::size_t>(oy0) * d.W;
              double* orow = op + static_cast<std::size_t>(oy0) * d.Wo;
              const std::size_t span = static_cast<std::size_t>(oy1 - oy0) * d.W;
              for (std::size_t t = 0; t < span; ++t) orow[t] += wv * xr[t];
              continue;
            }
            for (int oy = oy0; oy < oy1; ++oy) {
              const double* xr = xp + static_cast<std::size_t>(oy + ky - d.ph) * d.W +
                                 (ox0 + kx - d.pw);
              double* orow = op + static_cast<std::size_t>(oy) * d.Wo + ox0;
              for (int t = 0; t < len; ++t) orow[t] += wv * xr[t];
            }
          }
        }
      }
    }
  });
}

// Pointwise dL/dx: mirrors conv1x1_forward with the roles of channels
// swapped (four input planes per pass, grad plane streamed once).
void conv1x1_backward_input(const ConvDims& d, const double* w, const double* gout, double* dx) {
  const std::size_t plane = static_cast<std::size_t>(d.H) * d.W;
  const int cout_g = d.Cout / d.groups;
  constexpr int kTile = 4;
  const int tiles_per_group = (d.Cin_g + kTile - 1) / kTile;
  const std::size_t task_count = static_cast<std::size_t>(d.B) * d.groups * tiles_per_group;
  detail::parallel_for(task_count, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const int b = static_cast<int>(i / (d.groups * tiles_per_group));
      const int rem = static_cast<int>(i % (d.groups * tiles_per_group));
      const int g = rem / tiles_per_group;
      const int icg0 = (rem % tiles_per_group) * kTile;
      const int nt = std::min(kTile, d.Cin_g - icg0);
      double* dxp[kTile];
      for (int j = 0; j < nt; ++j) {
        dxp[j] = dx + (static_cast<std::size_t>(b) * d.Cin + g * d.Cin_g + icg0 + j) * plane;
      }
      for (int ocg = 0; ocg < cout_g; ++ocg) {
        const int oc = g * cout_g + ocg;
        const double* gop = gout + (static_cast<std::size_t>(b) * d.Cout + oc) * plane;
        if (nt == kTile) {
          const double w0 = w[static_cast<std::size_t>(oc) * d.Cin_g + icg0 + 0];
          const double w1 = w[static_cast<std::size_t>(oc) * d.Cin_g + icg0 + 1];
          const double w2 = w[static_cast<std::size_t>(oc) * d.Cin_g + icg0 + 2];
          const double w3 = w[static_cast<std::size_t>(oc) * d.Cin_g + icg0 + 3];
          double* x0 = dxp[0];
          double* x1 = dxp[1];
          double* x2 = dxp[2];
          double* x3 = dxp[3];
          for (std::size_t t = 0; t < plane; ++t) {
            const double gv = gop[t];
            x0[t] += w0 * gv;
            x1[t] += w1 * gv;
            x2[t] += w2 * gv;
            x3[t] += w3 * gv;
          }
        } else {
          for (int j = 0; j < nt; ++j) {
            const double wj = w[static_cast<std::size_t>(oc) * d.Cin_g + icg0 + j];
            double* dxr = dxp[j];
            for (std::size_t t = 0; t < plane; ++t) dxr[t] += wj * gop[t];
          }
        }
      }
    }
  });
}

// dL/dx, gather form: each (b, ic) plane is produced by exactly one task.
void conv_backward_input(const ConvDims& d, const double* w, const double* gout, double* dx) {
  if (d.kh == 1 && d.kw == 1 && d.ph == 0 && d.pw == 0) {
    conv1x1_backward_input(d, w, gout, dx);
    return;
  }
  const std::size_t xplane = static_cast<std::size_t>(d.H) * d.W;
  const std::size_t oplane = static_cast<std::size_t>(d.Ho) * d.Wo;
  const int cout_g = d.Cout / d.groups;
  detail::parallel_for(static_cast<std::size_t>(d.B) * d.Cin, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const int b = static_cast<int>(i) / d.Cin;
      const int ic = static_cast<int>(i) % d.Cin;
      const int g = ic / d.Cin_g;
      const int icg = ic % d.Cin_g;
      double* dxp = dx + i * xplane;
      for (int ocg = 0; ocg < cout_g; ++ocg) {
        const int oc = g * cout_g + ocg;
        const double* gop = gout + (static_cast<std::size_t>(b) * d.Cout + oc) * oplane;
        const double* wp =
            w + ((static_cast<std::size_t>(oc) * d.Cin_g + icg) * d.kh) * d.kw;
        for (int ky = 0; ky < d.kh; ++ky) {
          const int iy0 = std::max(0, ky - d.ph);
          const int iy1 = std::min(d.H, d.Ho + ky - d.ph);
          for (int kx = 0; kx < d.kw; ++kx) {
            const double wv = wp[ky * d.kw + kx];
            const int ix0 = std::max(0, kx - d.pw);
            const int ix1 = std::min(d.W, d.Wo + kx - d.pw);
            const int len = ix1 - ix0;
            if (len <= 0) continue;
            if (len == d.W && d.Wo == d.W && ky == d.ph && kx == d.pw) {
              const double* gr = gop + static_cast<std::size_t>(iy0) * d.Wo;
              double* dxr = dxp + static_cast<std::size_t>(iy0) * d.W;
              const std::size_t span = static_cast<std::size_t>(iy1 - iy0) * d.W;
              for (std::size_t t = 0; t < span; ++t) dxr[t] += wv * gr[t];
              continue;
            }
            for (int iy = iy0; iy < iy1; ++iy) {
              const double* gr = gop + static_cast<std::size_t>(iy - ky + d.ph) * d.Wo +
                                 (ix0 - kx + d.pw);
              double* dxr = dxp + static_cast<std::size_t>(iy) * d.W + ix0;
              for (int t = 0; t < len; ++t) dxr[t] += wv * gr[t];
            }
          }
        }
      }
    }
  });
}

// Dot product over eight independent accumulator chains. The grouping is
// fixed, so results are deterministic; the independent chains let the
// compiler overlap FMA latency, which a single strict-FP chain forbids.
double dot8(const double* a, const double* b, int n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int t = 0;
  for (; t + 8 <= n; t += 8) {
    for (int u = 0; u < 8; ++u) acc[u] += a[t + u] * b[t + u];
  }
  for (; t < n; ++t) acc[t & 7] += a[t] * b[t];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

double sum8(const double* a, int n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int t = 0;
  for (; t + 8 <= n; t += 8) {
    for (int u = 0; u < 8; ++u) acc[u] += a[t + u];
  }
  for (; t < n; ++t) acc[t & 7] += a[t];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// dL/dw and dL/db, gather form: each oc owns its weight rows and bias entry,
// so the accumulation order is fixed regardless of thread count. The batch
// loop sits outside the tap loops so each grad plane is streamed once per
// sample; every weight still sums its per-sample dots in batch order.
void conv_backward_params(const ConvDims& d, const double* x, const double* gout, double* dw,
                          double* db) {
  const std::size_t xplane = static_cast<std::size_t>(d.H) * d.W;
  const std::size_t oplane = static_cast<std::size_t>(d.Ho) * d.Wo;
  const std::size_t wrow = static_cast<std::size_t>(d.Cin_g) * d.kh * d.kw;
  detail::parallel_for(static_cast<std::size_t>(d.Cout), [&](std::size_t oc0, std::size_t oc1) {
    std::vector<double> acc(wrow);
    for (std::size_t oci = oc0; oci < oc1; ++oci) {
      const int oc = static_cast<int>(oci);
      const int g = oc / (d.Cout / d.groups);
      std::fill(acc.begin(), acc.end(), 0.0);
      double bias_acc = 0.0;
      for (int b = 0; b < d.B; ++b) {
        const double* gop = gout + (static_cast<std::size_t>(b) * d.Cout + oc) * oplane;
        for (int icg = 0; icg < d.Cin_g; ++icg) {
          const double* xp =
              x + (static_cast<std::size_t>(b) * d.Cin + g * d.Cin_g + icg) * xplane;
          double* arow = acc.data() + static_cast<std::size_t>(icg) * d.kh * d.kw;
          for (int ky = 0; ky < d.kh; ++ky) {
            const int oy0 = std::max(0, d.ph - ky);
            const int oy1 = std::min(d.Ho, d.H + d.ph - ky);
            for (int kx = 0; kx < d.kw; ++kx) {
              const int ox0 = std::max(0, d.pw - kx);
              const int ox1 = std::min(d.Wo, d.W + d.pw - kx);
              const int len = ox1 - ox0;
              if (len <= 0) continue;
              if (len == d.W && d.Wo == d.W && ky == d.ph && kx == d.pw) {
                arow[ky * d.kw + kx] += dot8(xp + static_cast<std::size_t>(oy0) * d.W,
                                             gop + static_cast<std::size_t>(oy0) * d.Wo,
                                             (oy1 - oy0) * d.W);
                continue;
              }
              double dot = 0.0;
              for (int oy = oy0; oy < oy1; ++oy) {
                const double* xr = xp + static_cast<std::size_t>(oy + ky - d.ph) * d.W +
                                   (ox0 + kx - d.pw);
                const double* gr = gop + static_cast<std::size_t>(oy) * d.Wo + ox0;
                dot += dot8(xr, gr, len);
              }
              arow[ky * d.kw + kx] += dot;
            }
          }
        }
        if (db) bias_acc += sum8(gop, static_cast<int>(oplane));
      }
      std::copy(acc.begin(), acc.end(), dw + static_cast<std::size_t>(oc) * wrow);
      if (db) db[oc] = bias_acc;
    }
  });
}

}  // namespace

Conv2dParams make_conv(int c_in, int c_out, int k_h, int k_w, int groups, Rng& rng,
                       bool with_bias, double weight_std) {
  if (c_in < 1 || c_out < 1 || k_h < 1 || k_w < 1) {
    throw std::invalid_argument("make_conv: channels and kernel dims must be >= 1");
  }
  if (groups < 1 || c_in % groups != 0 || c_out % groups != 0) {
    throw std::invalid_argument("make_conv: channels must be divisible by groups");
  }
  Conv2dParams p;
  p.weight = randn({c_out, c_in / groups, k_h, k_w}, rng, weight_std);
  if (with_bias) p.bias = zeros({c_out});
  p.groups = groups;
  p.pad_h = (k_h - 1) / 2;
  p.pad_w = (k_w - 1) / 2;
  return p;
}

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  const ConvDims d = conv_dims(x, p);
  Tensor out = zeros({d.B, d.Cout, d.Ho, d.Wo});
  conv_forward(d, x.data(), p.weight.data(), p.has_bias() ? p.bias.data() : nullptr, out.data());

  auto state = p.has_bias() ? detail::tape_of({&x, &p.weight, &p.bias})
                            : detail::tape_of({&x, &p.weight});
  if (state) {
    Tensor xs = x.detached();
    Tensor ws = p.weight.detached();
    const bool with_bias = p.has_bias();
    auto backward = [xs, ws, d, with_bias](BackwardCtx& ctx) {
      Tensor g = ctx.grad_output();
      if (ctx.needs_grad(0)) {
        Tensor dx = zeros(xs.shape());
        conv_backward_input(d, ws.data(), g.data(), dx.data());
        ctx.add_grad(0, dx);
      }
      const bool need_w = ctx.needs_grad(1);
      const bool need_b = with_bias && ctx.needs_grad(2);
      if (need_w || need_b) {
        Tensor dw = zeros(ws.shape());
        Tensor db = zeros({d.Cout});
        conv_backward_params(d, xs.data(), g.data(), dw.data(), db.data());
        if (need_w) ctx.add_grad(1, dw);
        if (need_b) ctx.add_grad(2, db);
      }
    };
    if (with_bias) {
      detail::record(state, "conv2d", {&x, &p.weight, &p.bias}, out, backward);
    } else {
      detail::record(state, "conv2d", {&x, &p.weight}, out, backward);
    }
  }
  return out;
}

SeparableDwcParams make_separable_dwc(int channels, int k, Rng& rng, bool with_bias,
                                      double weight_std) {
  if (k < 1 || k % 2 == 0) {
    throw std::invalid_argument("separable_dwc: kernel length must be odd, got " +
                                std::to_string(k));
  }
  SeparableDwcParams p;
  p.col = make_conv(channels, channels, k, 1, channels, rng, with_bias, weight_std);
  p.row = make_conv(channels, channels, 1, k, channels, rng, with_bias, weight_std);
  p.k = k;
  return p;
}

Tensor separable_dwc(const Tensor& x, const SeparableDwcParams& p) {
  const int k = p.k > 0 ? p.k : p.col.kh();
  if (k % 2 == 0) {
    throw std::invalid_argument("separable_dwc: kernel length must be odd, got " +
                                std::to_string(k));
  }
  if (p.col.kh() != k || p.col.kw() != 1 || p.row.kh() != 1 || p.row.kw() != k) {
    throw std::invalid_argument("separable_dwc: expected k x 1 then 1 x k kernels");
  }
  const int c = p.col.out_channels();
  if (p.col.groups != c || p.row.groups != c) {
    throw std::invalid_argument("separable_dwc: convolutions must be depth-wise");
  }
  return conv2d(conv2d(x, p.col), p.row);
}

LayerNormParams make_layer_norm(int channels) {
  LayerNormParams p;
  p.gamma = ones({channels});
  p.beta = zeros({channels});
  return p;
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
  if (!x.defined() || x.ndim() != 4) {
    throw std::invalid_argument("layer_norm: input must be 4-D (B,C,H,W)");
  }
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (p.gamma.ndim() != 1 || p.gamma.dim(0) != C || p.beta.ndim() != 1 || p.beta.dim(0) != C) {
    throw std::invalid_argument("layer_norm: gamma/beta must have shape (C=" +
                                std::to_string(C) + ")");
  }
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  const double inv_c = 1.0 / C;

  Tensor out = zeros_like(x);
  Tensor xhat = zeros_like(x);          // saved for backward
  Tensor inv_std = zeros({B, 1, H, W});  // saved for backward
  const double* px = x.data();
  const double* pg = p.gamma.data();
  const double* pb = p.beta.data();
  double* po = out.data();
  double* ph = xhat.data();
  double* ps = inv_std.data();
  for (int b = 0; b < B; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * C * hw;
    for (std::size_t t = 0; t < hw; ++t) {
      double m = 0.0;
      for (int c = 0; c < C; ++c) m += px[base + c * hw + t];
      m *= inv_c;
      double var = 0.0;
      for (int c = 0; c < C; ++c) {
        const double d = px[base + c * hw + t] - m;
        var += d * d;
      }
      var *= inv_c;
      const double is = 1.0 / std::sqrt(var + p.eps);
      ps[static_cast<std::size_t>(b) * hw + t] = is;
      for (int c = 0; c < C; ++c) {
        const double h = (px[base + c * hw + t] - m) * is;
        ph[base + c * hw + t] = h;
        po[base + c * hw + t] = pg[c] * h + pb[c];
      }
    }
  }

  auto state = detail::tape_of({&x, &p.gamma, &p.beta});
  if (state) {
    Tensor gs = p.gamma.detached();
    Tensor xh = xhat.detached();
    Tensor is = inv_std.detached();
    std::vector<int> xshape = x.shape();
    detail::record(state, "layer_norm", {&x, &p.gamma, &p.beta}, out,
                   [gs, xh, is, xshape](BackwardCtx& ctx) {
      const int B = xshape[0], C = xshape[1];
      const std::size_t hw = static_cast<std::size_t>(xshape[2]) * xshape[3];
      const double inv_c = 1.0 / C;
      Tensor g = ctx.grad_output();
      const double* pgo = g.data();
      const double* pxh = xh.data();
      const double* pis = is.data();
      const double* pgm = gs.data();
      if (ctx.needs_grad(0)) {
        Tensor dx = zeros(xshape);
        double* pdx = dx.data();
        for (int b = 0; b < B; ++b) {
          const std::size_t base = static_cast<std::size_t>(b) * C * hw;
          for (std::size_t t = 0; t < hw; ++t) {
            double m1 = 0.0, m2 = 0.0;
            for (int c = 0; c < C; ++c) {
              const double gy = pgo[base + c * hw + t] * pgm[c];
              m1 += gy;
              m2 += gy * pxh[base + c * hw + t];
            }
            m1 *= inv_c;
            m2 *= inv_c;
            const double s = pis[static_cast<std::size_t>(b) * hw + t];
            for (int c = 0; c < C; ++c) {
              const double gy = pgo[base + c * hw + t] * pgm[c];
              pdx[base + c * hw + t] = (gy - m1 - pxh[base + c * hw + t] * m2) * s;
            }
          }
        }
        ctx.add_grad(0, dx);
      }
      if (ctx.needs_grad(1) || ctx.needs_grad(2)) {
        Tensor dgamma = zeros({C});
        Tensor dbeta = zeros({C});
        double* pdg = dgamma.data();
        double* pdb = dbeta.data();
        for (int b = 0; b < B; ++b) {
          const std::size_t base = static_cast<std::size_t>(b) * C * hw;
          for (int c = 0; c < C; ++c) {
            double sg = 0.0, sb = 0.0;
            for (std::size_t t = 0; t < hw; ++t) {
              sg += pgo[base + c * hw + t] * pxh[base + c * hw + t];
              sb += pgo[base + c * hw + t];
            }
            pdg[c] += sg;
            pdb[c] += sb;
          }
        }
        ctx.add_grad(1, dgamma);
        ctx.add_grad(2, dbeta);
      }
    });
  }
  return out;
}

Tensor silu(const Tensor& x) {
  if (!x.defined()) throw std::invalid_argument("silu: undefined tensor");
  Tensor out = zeros_like(x);
  auto state = detail::tape_of({&x});
  Tensor sig = state ? zeros_like(x) : Tensor();  // saved only while recording
  const double* px = x.data();
  double* po = out.data();
  const std::size_t n = x.numel();
  // compute sigmoid into the output (or the saved tensor), then scale by x
  double* ps = sig.defined() ? sig.data() : po;
  sigmoid_buffer(px, ps, n);
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * ps[i];
  if (state) {
    Tensor xs = x.detached();
    detail::record(state, "silu", {&x}, out, [xs, sig](BackwardCtx& ctx) {
      // d/dx x*sigmoid(x) = s * (1 + x * (1 - s)), with s saved from forward
      Tensor g = ctx.grad_output();
      Tensor gi = zeros_like(g);
      const double* px = xs.data();
      const double* psg = sig.data();
      const double* pg = g.data();
      double* pgi = gi.data();
      const std::size_t m = g.numel();
      for (std::size_t i = 0; i < m; ++i) {
        const double s = psg[i];
        pgi[i] = pg[i] * (s * (1.0 + px[i] * (1.0 - s)));
      }
      ctx.add_grad(0, gi);
    });
  }
  return out;
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  if (!x.defined() || x.ndim() != 4) {
    throw std::invalid_argument("pixel_shuffle: input must be 4-D (B,C,H,W)");
  }
  if (r < 1) throw std::invalid_argument("pixel_shuffle: factor must be >= 1");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C % (r * r) != 0) {
    throw std::invalid_argument("pixel_shuffle: channel count " + std::to_string(C) +
                                " not divisible by r^2=" + std::to_string(r * r));
  }
  const int Co = C / (r * r);
  Tensor out = zeros({B, Co, H * r, W * r});
  const double* px = x.data();
  double* po = out.data();
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  const std::size_t ohw = hw * r * r;
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Co; ++co) {
      double* op = po + (static_cast<std::size_t>(b) * Co + co) * ohw;
      for (int dy = 0; dy < r; ++dy) {
        for (int dx = 0; dx < r; ++dx) {
          const double* ip =
              px + (static_cast<std::size_t>(b) * C + co * r * r + dy * r + dx) * hw;
          for (int y = 0; y < H; ++y) {
            for (int xx = 0; xx < W; ++xx) {
              op[static_cast<std::size_t>(y * r + dy) * (W * r) + (xx * r + dx)] =
                  ip[static_cast<std::size_t>(y) * W + xx];
            }
          }
        }
      }
    }
  }
  auto state = detail::tape_of({&x});
  if (state) {
    std::vector<int> in_shape = x.shape();
    detail::record(state, "pixel_shuffle", {&x}, out, [in_shape, r](BackwardCtx& ctx) {
      const int B = in_shape[0], C = in_shape[1], H = in_shape[2], W = in_shape[3];
      const int Co = C / (r * r);
      Tensor g = ctx.grad_output();
      Tensor gi = zeros(in_shape);
      const double* pg = g.data();
      double* pi = gi.data();
      const std::size_t hw = static_cast<std::size_t>(H) * W;
      const std::size_t ohw = hw * r * r;
      for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Co; ++co) {
          const double* op = pg + (static_cast<std::size_t>(b) * Co + co) * ohw;
          for (int dy = 0; dy < r; ++dy) {
            for (int dx = 0; dx < r; ++dx) {
              double* ip =
                  pi + (static_cast<std::size_t>(b) * C + co * r * r + dy * r + dx) * hw;
              for (int y = 0; y < H; ++y) {
                for (int xx = 0; xx < W; ++xx) {
                  ip[static_cast<std::size_t>(y) * W + xx] =
                      op[static_cast<std::size_t>(y * r + dy) * (W * r) + (xx * r + dx)];
                }
              }
            }
          }
        }
      }
      ctx.add_grad(0, gi);
    });
  }
  return out;
}

}  // namespace lkf
