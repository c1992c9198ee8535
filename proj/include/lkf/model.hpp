#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lkf/layers.hpp"
#include "lkf/tensor.hpp"

// The LKFormer network: a shallow 3x3 conv, N residual transformer blocks
// (each n transformer layers plus a fusing conv and skip), channel
// concatenation of every block output, and a pixel-shuffle reconstruction
// head. A transformer layer is pre-norm residual around LKRA (large kernel
// residual attention) and GPFN (gated-pixel feed-forward network).

namespace lkf {

struct LkraConfig {
  std::vector<int> kernels{11, 21, 31};  // residual depth-wise block sizes, in order
  bool use_local_pair = true;            // 7x1 / 1x7 stage after the input projection
  bool inner_residual = true;            // the "+ x" inside each residual depth-wise block

  void validate() const;
};

struct LkformerConfig {
  int channels = 48;
  int rtb_count = 6;  // N
  int tl_count = 6;   // n per block
  int scale = 2;      // 2 or 4
  int in_channels = 1;
  LkraConfig lkra;
  int gpfn_expansion = 2;
  int min_input = 8;  // smallest accepted input side

  void validate() const;
  int upsample_stages() const { return scale == 4 ? 2 : 1; }
};

struct RdbParams {
  SeparableDwcParams sep;
};

struct LkraParams {
  Conv2dParams proj_in;       // 1x1
  SeparableDwcParams local;   // 7x1 / 1x7, present iff use_local_pair
  std::vector<RdbParams> rdbs;
  Conv2dParams value;         // 1x1, gated branch
  Conv2dParams proj_out;      // 1x1
};

struct GpfnParams {
  Conv2dParams expand;      // 1x1 C -> eC
  Conv2dParams value;       // 1x1 eC -> eC
  Conv2dParams attn_point;  // 1x1 eC -> eC
  Conv2dParams attn_dw;     // 3x3 depth-wise on eC
  Conv2dParams proj_out;    // 1x1 eC -> C
};

struct TlParams {
  LayerNormParams ln1;
  LkraParams lkra;
  LayerNormParams ln2;
  GpfnParams gpfn;
};

struct RtbParams {
  std::vector<TlParams> tls;
  Conv2dParams fuse;  // 3x3
};

struct LkformerParams {
  Conv2dParams shallow;             // 3x3 in_channels -> C
  std::vector<RtbParams> rtbs;
  Conv2dParams fusion;              // 1x1 N*C -> C
  std::vector<Conv2dParams> ups;    // 3x3 C -> 4C per x2 stage
  Conv2dParams out;                 // 3x3 C -> in_channels
};

LkformerParams build_model(const LkformerConfig& cfg, Rng& rng);

// Visits every parameter tensor in canonical (module path) order; the same
// order defines checkpoint layout, Adam state slots and parameter counting.
void for_each_param(LkformerParams& p,
                    const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(const LkformerParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn);

// Block forwards (Eq.-level pieces; each composes the nn primitives 1:1).
Tensor rdb_forward(const Tensor& x, const RdbParams& p, bool inner_residual);
Tensor lkra_forward(const Tensor& h, const LkraParams& p, const LkraConfig& cfg);
Tensor gpfn_forward(const Tensor& f, const GpfnParams& p);
Tensor tl_forward(const Tensor& x, const TlParams& p, const LkraConfig& cfg);
Tensor rtb_forward(const Tensor& x, const RtbParams& p, const LkraConfig& cfg);

// (B, in_channels, H, W) -> (B, in_channels, H*scale, W*scale)
Tensor lkformer_forward(const Tensor& lr, const LkformerConfig& cfg, const LkformerParams& p);

// Checkpoint file: magic "LKF1", length-prefixed key=value config record,
// then per-parameter records [name_len, name, ndim, dims..., little-endian
// f64 payload]. Round trips are bit-exact.
void save_checkpoint(const std::string& path, const LkformerConfig& cfg,
                     const LkformerParams& params);
struct Checkpoint {
  LkformerConfig config;
  LkformerParams params;
};
Checkpoint load_checkpoint(const std::string& path);

std::string serialize_config(const LkformerConfig& cfg);
LkformerConfig parse_config(const std::string& text);

}  // namespace lkf
