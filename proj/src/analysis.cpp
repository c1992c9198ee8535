#include "lkf/analysis.hpp"

#include <sstream>
#include <stdexcept>

namespace lkf {

namespace {

void check_dims(std::int64_t h, std::int64_t w, std::int64_t c) {
  if (h < 1 || w < 1 || c < 1) {
    throw std::invalid_argument("omega: h, w and C must be >= 1");
  }
}

mpz_class omega_msa_hw(const mpz_class& hw, std::int64_t c) {
  return 4 * hw * c * c + 2 * hw * hw * c;
}

mpz_class omega_lkra_hw(const mpz_class& hw, std::int64_t c, const std::vector<int>& kernels,
                        bool decomposed) {
  mpz_class per_pixel = 0;
  for (int k : kernels) {
    const mpz_class kernel_cost = decomposed ? mpz_class(2 * mpz_class(k))
                                             : mpz_class(mpz_class(k) * k);
    per_pixel += c * (kernel_cost + c);
  }
  return per_pixel * hw;
}

}  // namespace

mpz_class omega_msa(std::int64_t h, std::int64_t w, std::int64_t c) {
  check_dims(h, w, c);
  return omega_msa_hw(mpz_class(h) * w, c);
}

mpz_class omega_lkra(std::int64_t h, std::int64_t w, std::int64_t c,
                     const std::vector<int>& kernels) {
  check_dims(h, w, c);
  if (kernels.empty()) throw std::invalid_argument("omega_lkra: empty kernel list");
  return omega_lkra_hw(mpz_class(h) * w, c, kernels, false);
}

mpz_class omega_lkra_decomposed(std::int64_t h, std::int64_t w, std::int64_t c,
                                const std::vector<int>& kernels) {
  check_dims(h, w, c);
  if (kernels.empty()) throw std::invalid_argument("omega_lkra: empty kernel list");
  return omega_lkra_hw(mpz_class(h) * w, c, kernels, true);
}

mpz_class crossover_resolution(std::int64_t c, const std::vector<int>& kernels) {
  if (c < 1) throw std::invalid_argument("crossover: C must be >= 1");
  if (kernels.empty()) throw std::invalid_argument("crossover: empty kernel list");
  // msa(hw) - lkra(hw) = hw * (2*C*hw + 4*C^2 - S) with S = sum C*(K^2+C):
  // positive exactly when hw > (S - 4*C^2) / (2*C).
  mpz_class s = 0;
  for (int k : kernels) s += c * (mpz_class(k) * k + c);
  mpz_class num = s - 4 * mpz_class(c) * c;
  mpz_class hw;
  if (num < 0) {
    hw = 1;
  } else {
    mpz_class q = num / (2 * mpz_class(c));  // floor; num >= 0
    hw = q + 1;
    if (hw < 1) hw = 1;
  }
  return hw;
}

std::uint64_t conv_param_count(int c_in, int c_out, int k_h, int k_w, int groups, bool bias) {
  const std::uint64_t weights = static_cast<std::uint64_t>(c_out) *
                                static_cast<std::uint64_t>(c_in / groups) * k_h * k_w;
  return weights + (bias ? static_cast<std::uint64_t>(c_out) : 0);
}

std::uint64_t conv_flops(int c_in, int c_out, int k_h, int k_w, int groups, bool bias,
                         int out_h, int out_w) {
  const std::uint64_t per_pixel_macs = static_cast<std::uint64_t>(c_out) *
                                       static_cast<std::uint64_t>(c_in / groups) * k_h * k_w;
  const std::uint64_t pixels = static_cast<std::uint64_t>(out_h) * out_w;
  return pixels * (2 * per_pixel_macs + (bias ? static_cast<std::uint64_t>(c_out) : 0));
}

namespace {

std::uint64_t separable_param_count(int c, int k) {
  return conv_param_count(c, c, k, 1, c, true) + conv_param_count(c, c, 1, k, c, true);
}

std::uint64_t lkra_param_count(const LkformerConfig& cfg) {
  const int c = cfg.channels;
  std::uint64_t n = conv_param_count(c, c, 1, 1, 1, true);  // proj_in
  if (cfg.lkra.use_local_pair) n += separable_param_count(c, 7);
  for (int k : cfg.lkra.kernels) n += separable_param_count(c, k);
  n += conv_param_count(c, c, 1, 1, 1, true);  // value
  n += conv_param_count(c, c, 1, 1, 1, true);  // proj_out
  return n;
}

std::uint64_t gpfn_param_count(const LkformerConfig& cfg) {
  const int c = cfg.channels;
  const int e = c * cfg.gpfn_expansion;
  return conv_param_count(c, e, 1, 1, 1, true) + conv_param_count(e, e, 1, 1, 1, true) +
         conv_param_count(e, e, 1, 1, 1, true) + conv_param_count(e, e, 3, 3, e, true) +
         conv_param_count(e, c, 1, 1, 1, true);
}

constexpr std::uint64_t kLayerNormFlopsPerElement = 7;

std::uint64_t separable_flops(int c, int k, int h, int w) {
  return conv_flops(c, c, k, 1, c, true, h, w) + conv_flops(c, c, 1, k, c, true, h, w);
}

std::uint64_t lkra_flops(const LkformerConfig& cfg, int h, int w) {
  const int c = cfg.channels;
  const std::uint64_t plane = static_cast<std::uint64_t>(c) * h * w;
  std::uint64_t f = conv_flops(c, c, 1, 1, 1, true, h, w) + plane;  // proj_in + silu
  if (cfg.lkra.use_local_pair) f += separable_flops(c, 7, h, w);
  for (int k : cfg.lkra.kernels) {
    f += separable_flops(c, k, h, w);
    if (cfg.lkra.inner_residual) f += plane;  // the "+ x"
    f += plane;                               // silu
  }
  f += conv_flops(c, c, 1, 1, 1, true, h, w);  // value branch
  f += plane;                                  // gate multiply
  f += conv_flops(c, c, 1, 1, 1, true, h, w);  // proj_out
  return f;
}

std::uint64_t gpfn_flops(const LkformerConfig& cfg, int h, int w) {
  const int c = cfg.channels;
  const int e = c * cfg.gpfn_expansion;
  const std::uint64_t eplane = static_cast<std::uint64_t>(e) * h * w;
  std::uint64_t f = conv_flops(c, e, 1, 1, 1, true, h, w) + eplane;  // expand + silu
  f += conv_flops(e, e, 1, 1, 1, true, h, w);                       // attn pointwise
  f += conv_flops(e, e, 3, 3, e, true, h, w);                       // attn depth-wise
  f += conv_flops(e, e, 1, 1, 1, true, h, w);                       // value branch
  f += eplane;                                                      // gate multiply
  f += conv_flops(e, c, 1, 1, 1, true, h, w);                       // proj_out
  return f;
}

}  // namespace

std::uint64_t count_params(const LkformerConfig& cfg) {
  cfg.validate();
  const int c = cfg.channels;
  std::uint64_t n = conv_param_count(cfg.in_channels, c, 3, 3, 1, true);  // shallow
  const std::uint64_t per_tl = 2ull * c +                                 // ln1
                               lkra_param_count(cfg) + 2ull * c +         // ln2
                               gpfn_param_count(cfg);
  const std::uint64_t per_rtb =
      static_cast<std::uint64_t>(cfg.tl_count) * per_tl + conv_param_count(c, c, 3, 3, 1, true);
  n += static_cast<std::uint64_t>(cfg.rtb_count) * per_rtb;
  n += conv_param_count(c * cfg.rtb_count, c, 1, 1, 1, true);  // fusion
  for (int s = 0; s < cfg.upsample_stages(); ++s) {
    n += conv_param_count(c, 4 * c, 3, 3, 1, true);
  }
  n += conv_param_count(c, cfg.in_channels, 3, 3, 1, true);  // out
  return n;
}

std::uint64_t count_flops(const LkformerConfig& cfg, int h, int w) {
  cfg.validate();
  if (h < 1 || w < 1) throw std::invalid_argument("count_flops: h and w must be >= 1");
  const int c = cfg.channels;
  const std::uint64_t plane = static_cast<std::uint64_t>(c) * h * w;

  std::uint64_t f = conv_flops(cfg.in_channels, c, 3, 3, 1, true, h, w);  // shallow
  const std::uint64_t ln = kLayerNormFlopsPerElement * plane;
  const std::uint64_t per_tl = ln + lkra_flops(cfg, h, w) + plane +  // residual add
                               ln + gpfn_flops(cfg, h, w) + plane;
  const std::uint64_t per_rtb = static_cast<std::uint64_t>(cfg.tl_count) * per_tl +
                                conv_flops(c, c, 3, 3, 1, true, h, w) + plane;  // skip add
  f += static_cast<std::uint64_t>(cfg.rtb_count) * per_rtb;
  f += conv_flops(c * cfg.rtb_count, c, 1, 1, 1, true, h, w);
  f += plane;  // global residual add
  int uh = h, uw = w;
  for (int s = 0; s < cfg.upsample_stages(); ++s) {
    f += conv_flops(c, 4 * c, 3, 3, 1, true, uh, uw);
    uh *= 2;
    uw *= 2;
  }
  f += conv_flops(c, cfg.in_channels, 3, 3, 1, true, uh, uw);
  return f;
}

CostReport analyze(const LkformerConfig& cfg, int h, int w) {
  CostReport r;
  r.config = cfg;
  r.h = h;
  r.w = w;
  r.params = count_params(cfg);
  r.flops = count_flops(cfg, h, w);
  r.msa = omega_msa(h, w, cfg.channels);
  if (!cfg.lkra.kernels.empty()) {
    r.lkra = omega_lkra(h, w, cfg.channels, cfg.lkra.kernels);
    r.lkra_decomposed = omega_lkra_decomposed(h, w, cfg.channels, cfg.lkra.kernels);
    r.crossover_hw = crossover_resolution(cfg.channels, cfg.lkra.kernels);
  }
  return r;
}

namespace {

std::string kernels_str(const std::vector<int>& kernels) {
  std::ostringstream os;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    if (i) os << '+';
    os << kernels[i];
  }
  return kernels.empty() ? "none" : os.str();
}

}  // namespace

std::string CostReport::format_text() const {
  std::ostringstream os;
  os << "config: C=" << config.channels << " N=" << config.rtb_count << " n=" << config.tl_count
     << " scale=x" << config.scale << " kernels=" << kernels_str(config.lkra.kernels)
     << " local_pair=" << (config.lkra.use_local_pair ? "yes" : "no")
     << " residual=" << (config.lkra.inner_residual ? "yes" : "no") << '\n';
  os << "input: " << h << " x " << w << '\n';
  os << "params:                " << params << " (" << static_cast<double>(params) / 1e6
     << " M)\n";
  os << "forward flops:         " << flops << " (" << static_cast<double>(flops) / 1e9
     << " G)\n";
  os << "omega(MSA):            " << msa.get_str() << '\n';
  if (config.lkra.kernels.empty()) {
    os << "omega(LKRA):           n/a (empty kernel set)\n";
  } else {
    os << "omega(LKRA), K^2 form: " << lkra.get_str() << '\n';
    os << "omega(LKRA), 2K form:  " << lkra_decomposed.get_str() << '\n';
    os << "crossover hw:          " << crossover_hw.get_str()
       << " (MSA costlier above this pixel count)\n";
  }
  return os.str();
}

std::string CostReport::format_csv() const {
  std::ostringstream os;
  os << "channels,rtb_count,tl_count,scale,kernels,use_local_pair,inner_residual,h,w,"
        "params,flops,omega_msa,omega_lkra,omega_lkra_decomposed,crossover_hw\n";
  os << config.channels << ',' << config.rtb_count << ',' << config.tl_count << ','
     << config.scale << ',' << kernels_str(config.lkra.kernels) << ','
     << (config.lkra.use_local_pair ? 1 : 0) << ',' << (config.lkra.inner_residual ? 1 : 0)
     << ',' << h << ',' << w << ',' << params << ',' << flops << ',' << msa.get_str() << ',';
  if (config.lkra.kernels.empty()) {
    os << ",,\n";
  } else {
    os << lkra.get_str() << ',' << lkra_decomposed.get_str() << ',' << crossover_hw.get_str()
       << '\n';
  }
  return os.str();
}

}  // namespace lkf
