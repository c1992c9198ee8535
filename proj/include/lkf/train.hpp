#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lkf/autograd.hpp"
#include "lkf/data.hpp"
#include "lkf/model.hpp"

// L1 training with Adam and a step-halving schedule, plus the evaluation
// helpers shared by the CLI. The loop is deterministic from (seed, config,
// data): identical runs produce bit-identical logs and checkpoints.

namespace lkf {

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 8;
  int patch_size = 32;  // LR pixels
  int total_steps = 2000;
  std::uint64_t seed = 0;
  int checkpoint_interval = 500;
  int log_interval = 100;  // loss + validation PSNR cadence
  bool augment = true;
  std::vector<double> milestones{0.5, 0.75, 0.9};  // lr halves past these fractions
  std::string init_checkpoint;                     // resume source, optional

  void validate() const;
};

struct AdamState {
  std::vector<Tensor> m;  // aligned with for_each_param order
  std::vector<Tensor> v;
  long step = 0;
};

// mean |pred - target|
Tensor l1_loss(const Tensor& pred, const Tensor& target);

// Standard bias-corrected Adam; throws on non-finite gradients instead of
// propagating them into the parameters.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr_now, const TrainConfig& tc);

double lr_at_step(const TrainConfig& tc, int step);

ImageU8 super_resolve(const LkformerConfig& cfg, const LkformerParams& params,
                      const ImageU8& lr);

struct EvalRow {
  std::string name;
  double psnr_db = 0.0;
  double ssim_val = 0.0;
};
struct EvalSummary {
  std::vector<EvalRow> rows;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

// Border crop = scale pixels on both images, the usual SR protocol.
EvalSummary evaluate(const LkformerConfig& cfg, const LkformerParams& params,
                     const std::vector<SrPair>& pairs, bool with_ssim = true);
EvalSummary bicubic_baseline(const std::vector<SrPair>& pairs, bool with_ssim = true);

struct TrainResult {
  std::string checkpoint_path;
  std::string log_path;
  double final_val_psnr = 0.0;
  int steps = 0;
};

// Trains on <data_root>, validating on its test split; writes log.csv,
// periodic checkpoints and model.lkf under out_dir.
TrainResult train(const LkformerConfig& mc, const TrainConfig& tc, const std::string& data_root,
                  const std::string& out_dir);

// Finite-difference check of every differentiable layer plus the assembled
// blocks and the whole model (built from cfg, input 12x12). Returns one
// report per layer, in run order.
std::vector<std::pair<std::string, GradReport>> gradcheck_battery(const LkformerConfig& cfg,
                                                                  double h = 1e-5,
                                                                  double tolerance = 1e-4);

}  // namespace lkf
