#pragma once

#include <gmpxx.h>

#include <cstdint>
#include <string>
#include <vector>

#include "lkf/model.hpp"

// Cost accounting: the closed-form complexity of global self-attention
// versus the large-kernel attention, exact parameter counts mirroring the
// built model, and a forward-pass FLOPs estimate.
//
// FLOPs convention (the literature rarely states one, so it is pinned here):
// one multiply-accumulate = 2 FLOPs, bias adds counted, activations and
// elementwise add/mul = 1 FLOP per element, layer norm = 7 FLOPs per
// element, pixel shuffle and concatenation free.

namespace lkf {

// 4*hw*C^2 + 2*(hw)^2*C, exact at any size (the quadratic term overflows
// 64 bits quickly, hence arbitrary precision).
mpz_class omega_msa(std::int64_t h, std::int64_t w, std::int64_t c);

// sum_i C*(K_i^2 + C) * hw, the kernel costs as printed (k x k).
mpz_class omega_lkra(std::int64_t h, std::int64_t w, std::int64_t c,
                     const std::vector<int>& kernels);

// Same sum with each k x k block costed as the decomposed k x 1 + 1 x k
// pair actually implemented: sum_i C*(2*K_i + C) * hw.
mpz_class omega_lkra_decomposed(std::int64_t h, std::int64_t w, std::int64_t c,
                                const std::vector<int>& kernels);

// Smallest hw with omega_msa(hw) > omega_lkra(hw); above it the gap only
// grows, since the MSA cost is quadratic in hw and the LKRA cost linear.
mpz_class crossover_resolution(std::int64_t c, const std::vector<int>& kernels);

std::uint64_t conv_param_count(int c_in, int c_out, int k_h, int k_w, int groups, bool bias);
std::uint64_t conv_flops(int c_in, int c_out, int k_h, int k_w, int groups, bool bias,
                         int out_h, int out_w);

// Exact element count of every parameter tensor build_model would create.
std::uint64_t count_params(const LkformerConfig& cfg);

// Forward-pass FLOPs for one (1, in_channels, h, w) input.
std::uint64_t count_flops(const LkformerConfig& cfg, int h, int w);

struct CostReport {
  LkformerConfig config;
  int h = 0, w = 0;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  mpz_class msa;              // omega_msa at (h, w, channels)
  mpz_class lkra;             // omega_lkra, formula form (K^2)
  mpz_class lkra_decomposed;  // as-implemented form (2K)
  mpz_class crossover_hw;

  std::string format_text() const;
  std::string format_csv() const;  // header + one row
};

CostReport analyze(const LkformerConfig& cfg, int h, int w);

}  // namespace lkf
