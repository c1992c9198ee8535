#include "lkf/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "lkf/autograd.hpp"

namespace lkf {

namespace {

// Activation tensors exceed glibc's default mmap threshold, so without this
// every training step pays mmap/munmap page faults for its whole tape.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (total_steps < 1) throw std::invalid_argument("train: total_steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (patch_size < 1) throw std::invalid_argument("train: patch_size must be >= 1");
  if (checkpoint_interval < 1 || log_interval < 1) {
    throw std::invalid_argument("train: intervals must be >= 1");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train: betas must lie in [0, 1)");
  }
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  return mean(abs(sub(pred, target)));
}

double lr_at_step(const TrainConfig& tc, int step) {
  double lr = tc.lr;
  for (double frac : tc.milestones) {
    if (step > static_cast<int>(frac * tc.total_steps)) lr *= 0.5;
  }
  return lr;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr_now, const TrainConfig& tc) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam: parameter/gradient count mismatch");
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(zeros_like(*p));
      state.v.push_back(zeros_like(*p));
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam: state does not match parameter list");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].all_finite()) {
      throw std::runtime_error("adam: non-finite gradient for parameter " + std::to_string(i) +
                               " at step " + std::to_string(state.step + 1) +
                               "; aborting the update");
    }
    if (!grads[i].same_shape(*params[i])) {
      throw std::invalid_argument("adam: gradient shape mismatch for parameter " +
                                  std::to_string(i));
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    const double* g = grads[i].data();
    const std::size_t n = params[i]->numel();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = tc.beta1 * m[j] + (1.0 - tc.beta1) * g[j];
      v[j] = tc.beta2 * v[j] + (1.0 - tc.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr_now * mhat / (std::sqrt(vhat) + tc.eps);
    }
  }
}

ImageU8 super_resolve(const LkformerConfig& cfg, const LkformerParams& params,
                      const ImageU8& lr) {
  return tensor_to_image(lkformer_forward(image_to_tensor(lr), cfg, params));
}

EvalSummary evaluate(const LkformerConfig& cfg, const LkformerParams& params,
                     const std::vector<SrPair>& pairs, bool with_ssim) {
  EvalSummary s;
  for (const SrPair& p : pairs) {
    EvalRow row;
    row.name = p.name;
    const ImageU8 sr = super_resolve(cfg, params, p.lr);
    row.psnr_db = psnr(sr, p.hr, p.scale);
    if (with_ssim) row.ssim_val = ssim(sr, p.hr, p.scale);
    s.mean_psnr += row.psnr_db;
    s.mean_ssim += row.ssim_val;
    s.rows.push_back(std::move(row));
  }
  s.mean_psnr /= static_cast<double>(pairs.size());
  s.mean_ssim /= static_cast<double>(pairs.size());
  return s;
}

EvalSummary bicubic_baseline(const std::vector<SrPair>& pairs, bool with_ssim) {
  EvalSummary s;
  for (const SrPair& p : pairs) {
    EvalRow row;
    row.name = p.name;
    const ImageU8 up = bicubic_resize(p.lr, p.hr.height, p.hr.width);
    row.psnr_db = psnr(up, p.hr, p.scale);
    if (with_ssim) row.ssim_val = ssim(up, p.hr, p.scale);
    s.mean_psnr += row.psnr_db;
    s.mean_ssim += row.ssim_val;
    s.rows.push_back(std::move(row));
  }
  s.mean_psnr /= static_cast<double>(pairs.size());
  s.mean_ssim /= static_cast<double>(pairs.size());
  return s;
}

namespace {

// One (B,1,p,p) / (B,1,sp,sp) batch in [0,1].
void assemble_batch(PatchSampler& sampler, int batch, int patch, int scale, Tensor& lr,
                    Tensor& hr) {
  lr = zeros({batch, 1, patch, patch});
  hr = zeros({batch, 1, patch * scale, patch * scale});
  ImageU8 lp, hp;
  for (int b = 0; b < batch; ++b) {
    sampler.sample(lp, hp);
    double* pl = lr.data() + static_cast<std::size_t>(b) * patch * patch;
    for (std::size_t i = 0; i < lp.pixels.size(); ++i) pl[i] = lp.pixels[i] / 255.0;
    double* ph = hr.data() + static_cast<std::size_t>(b) * hp.pixels.size();
    for (std::size_t i = 0; i < hp.pixels.size(); ++i) ph[i] = hp.pixels[i] / 255.0;
  }
}

}  // namespace

TrainResult train(const LkformerConfig& mc, const TrainConfig& tc, const std::string& data_root,
                  const std::string& out_dir) {
  mc.validate();
  tc.validate();
  tune_allocator();
  std::filesystem::create_directories(out_dir);

  const std::vector<SrPair> train_pairs = load_split(data_root, mc.scale, "train");
  const std::vector<SrPair> val_pairs = load_split(data_root, mc.scale, "test");

  LkformerParams params = [&] {
    if (!tc.init_checkpoint.empty()) {
      Checkpoint ckpt = load_checkpoint(tc.init_checkpoint);
      return std::move(ckpt.params);
    }
    Rng init_rng = Rng(tc.seed).fork(1);
    return build_model(mc, init_rng);
  }();

  std::vector<Tensor*> ptrs;
  for_each_param(params, [&ptrs](const std::string&, Tensor& t) { ptrs.push_back(&t); });

  PatchSampler sampler(&train_pairs, tc.patch_size, tc.augment, Rng(tc.seed).fork(2).seed());
  AdamState adam;

  const std::string log_path = out_dir + "/log.csv";
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error("train: cannot write '" + log_path + "'");
  log << "step,loss,val_psnr\n";

  TrainResult result;
  result.log_path = log_path;
  char buf[160];
  for (int step = 1; step <= tc.total_steps; ++step) {
    Tensor lr_batch, hr_batch;
    assemble_batch(sampler, tc.batch_size, tc.patch_size, mc.scale, lr_batch, hr_batch);

    double loss_value = 0.0;
    std::vector<Tensor> grads;
    {
      Tape tape;
      for (Tensor* p : ptrs) tape.watch(*p);
      Tensor out = lkformer_forward(lr_batch, mc, params);
      Tensor loss = l1_loss(out, hr_batch);
      loss_value = loss.value();
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
      }
      tape.backward(loss);
      grads.reserve(ptrs.size());
      for (Tensor* p : ptrs) grads.push_back(tape.grad(*p));
    }  // tape released before the in-place update
    adam_step(ptrs, grads, adam, lr_at_step(tc, step), tc);

    if (step % tc.log_interval == 0 || step == tc.total_steps) {
      const EvalSummary val = evaluate(mc, params, val_pairs, /*with_ssim=*/false);
      result.final_val_psnr = val.mean_psnr;
      std::snprintf(buf, sizeof(buf), "%d,%.17g,%.6f\n", step, loss_value, val.mean_psnr);
      log << buf;
      log.flush();
    }
    if (step % tc.checkpoint_interval == 0 && step != tc.total_steps) {
      std::snprintf(buf, sizeof(buf), "%s/ckpt_%06d.lkf", out_dir.c_str(), step);
      save_checkpoint(buf, mc, params);
    }
  }
  result.checkpoint_path = out_dir + "/model.lkf";
  save_checkpoint(result.checkpoint_path, mc, params);
  result.steps = tc.total_steps;
  if (!log) throw std::runtime_error("train: writing '" + log_path + "' failed");
  return result;
}

// ---------------------------------------------------------------------------
// Gradient-check battery

namespace {

Tensor rand_input(const std::vector<int>& shape, Rng& rng) {
  Tensor t = zeros(shape);
  double* p = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) p[i] = 2.0 * rng.uniform() - 1.0;
  return t;
}

// Fixed random projection. A generic cotangent exercises every backward
// rule; squared readouts are near-invariant for layer norm (unit-variance
// output), which starves the finite differences of signal.
Tensor readout(const Tensor& y) {
  Rng r(0xC0FFEE);
  Tensor w = zeros(y.shape());
  double* p = w.data();
  for (std::size_t i = 0; i < w.numel(); ++i) p[i] = 0.5 + r.uniform();
  return mean(mul(y, w));
}

using Problem = std::function<Tensor(const std::vector<Tensor>&)>;

void push_params(std::vector<std::pair<std::string, Tensor>>& inputs, const Conv2dParams& c,
                 const std::string& prefix) {
  inputs.emplace_back(prefix + ".w", c.weight);
  if (c.has_bias()) inputs.emplace_back(prefix + ".b", c.bias);
}

}  // namespace

std::vector<std::pair<std::string, GradReport>> gradcheck_battery(const LkformerConfig& cfg,
                                                                  double h, double tolerance) {
  cfg.validate();
  std::vector<std::pair<std::string, GradReport>> out;
  Rng rng(2024);
  const int c = cfg.channels;

  {
    Conv2dParams p = make_conv(3, 4, 3, 3, 1, rng);
    std::vector<std::pair<std::string, Tensor>> in{{"x", rand_input({1, 3, 5, 5}, rng)}};
    push_params(in, p, "conv");
    Problem f = [p](const std::vector<Tensor>& v) {
      Conv2dParams q = p;
      q.weight = v[1];
      q.bias = v[2];
      return readout(conv2d(v[0], q));
    };
    out.emplace_back("conv2d_3x3", gradcheck(f, in, h, tolerance));
  }
  {
    Conv2dParams p = make_conv(4, 4, 5, 5, 4, rng);
    std::vector<std::pair<std::string, Tensor>> in{{"x", rand_input({1, 4, 6, 6}, rng)}};
    push_params(in, p, "conv");
    Problem f = [p](const std::vector<Tensor>& v) {
      Conv2dParams q = p;
      q.weight = v[1];
      q.bias = v[2];
      return readout(conv2d(v[0], q));
    };
    out.emplace_back("conv2d_depthwise_5x5", gradcheck(f, in, h, tolerance));
  }
  {
    Conv2dParams p = make_conv(4, 6, 1, 1, 1, rng);
    std::vector<std::pair<std::string, Tensor>> in{{"x", rand_input({1, 4, 5, 5}, rng)}};
    push_params(in, p, "conv");
    Problem f = [p](const std::vector<Tensor>& v) {
      Conv2dParams q = p;
      q.weight = v[1];
      q.bias = v[2];
      return readout(conv2d(v[0], q));
    };
    out.emplace_back("conv2d_1x1", gradcheck(f, in, h, tolerance));
  }
  for (int k : {3, 7, 11}) {
    SeparableDwcParams p = make_separable_dwc(3, k, rng);
    std::vector<std::pair<std::string, Tensor>> in{{"x", rand_input({1, 3, 8, 8}, rng)}};
    push_params(in, p.col, "col");
    push_params(in, p.row, "row");
    Problem f = [p](const std::vector<Tensor>& v) {
      SeparableDwcParams q = p;
      q.col.weight = v[1];
      q.col.bias = v[2];
      q.row.weight = v[3];
      q.row.bias = v[4];
      return readout(separable_dwc(v[0], q));
    };
    out.emplace_back("separable_dwc_k" + std::to_string(k), gradcheck(f, in, h, tolerance));
  }
  {
    LayerNormParams p = make_layer_norm(5);
    std::vector<std::pair<std::string, Tensor>> in{{"x", rand_input({2, 5, 3, 3}, rng)},
                                                   {"gamma", p.gamma},
                                                   {"beta", p.beta}};
    Problem f = [p](const std::vector<Tensor>& v) {
      LayerNormParams q = p;
      q.gamma = v[1];
      q.beta = v[2];
      return readout(layer_norm(v[0], q));
    };
    out.emplace_back("layer_norm", gradcheck(f, in, h, tolerance));
  }
  {
    std::vector<std::pair<std::string, Tensor>> in{{"x", rand_input({3, 3}, rng)}};
    Problem f = [](const std::vector<Tensor>& v) { return readout(silu(v[0])); };
    out.emplace_back("silu", gradcheck(f, in, h, tolerance));
  }
  {
    std::vector<std::pair<std::string, Tensor>> in{{"x", rand_input({1, 8, 3, 3}, rng)}};
    Problem f = [](const std::vector<Tensor>& v) { return readout(pixel_shuffle(v[0], 2)); };
    out.emplace_back("pixel_shuffle", gradcheck(f, in, h, tolerance));
  }
  {
    RdbParams p{make_separable_dwc(4, 7, rng)};
    std::vector<std::pair<std::string, Tensor>> in{{"x", rand_input({1, 4, 8, 8}, rng)}};
    push_params(in, p.sep.col, "col");
    push_params(in, p.sep.row, "row");
    Problem f = [p](const std::vector<Tensor>& v) {
      RdbParams q = p;
      q.sep.col.weight = v[1];
      q.sep.col.bias = v[2];
      q.sep.row.weight = v[3];
      q.sep.row.bias = v[4];
      return readout(rdb_forward(v[0], q, true));
    };
    out.emplace_back("rdb_k7", gradcheck(f, in, h, tolerance));
  }

  // assembled blocks at the configured width
  LkformerConfig block_cfg = cfg;
  block_cfg.rtb_count = 1;
  block_cfg.tl_count = 1;
  Rng block_rng(7);
  LkformerParams model = build_model(block_cfg, block_rng);
  // Check at a generic weight scale: with the training init (std 0.02) the
  // branch contribution behind a residual is so small that its central
  // differences drown in the rounding noise of f at h=1e-5.
  for_each_param(model, [](const std::string& name, Tensor& t) {
    if (name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0) {
      double* p = t.data();
      for (std::size_t i = 0; i < t.numel(); ++i) p[i] *= 15.0;
    }
  });
  const TlParams& tl = model.rtbs[0].tls[0];

  {
    std::vector<std::pair<std::string, Tensor>> in{{"x", rand_input({1, c, 12, 12}, rng)}};
    std::size_t base = in.size();
    LkraParams p = tl.lkra;
    push_params(in, p.proj_in, "proj_in");
    if (block_cfg.lkra.use_local_pair) {
      push_params(in, p.local.col, "local.col");
      push_params(in, p.local.row, "local.row");
    }
    for (std::size_t i = 0; i < p.rdbs.size(); ++i) {
      push_params(in, p.rdbs[i].sep.col, "rdb.col");
      push_params(in, p.rdbs[i].sep.row, "rdb.row");
    }
    push_params(in, p.value, "value");
    push_params(in, p.proj_out, "proj_out");
    LkraConfig lc = block_cfg.lkra;
    Problem f = [p, lc, base](const std::vector<Tensor>& v) {
      LkraParams q = p;
      std::size_t i = base;
      q.proj_in.weight = v[i++];
      q.proj_in.bias = v[i++];
      if (lc.use_local_pair) {
        q.local.col.weight = v[i++];
        q.local.col.bias = v[i++];
        q.local.row.weight = v[i++];
        q.local.row.bias = v[i++];
      }
      for (std::size_t m = 0; m < q.rdbs.size(); ++m) {
        q.rdbs[m].sep.col.weight = v[i++];
        q.rdbs[m].sep.col.bias = v[i++];
        q.rdbs[m].sep.row.weight = v[i++];
        q.rdbs[m].sep.row.bias = v[i++];
      }
      q.value.weight = v[i++];
      q.value.bias = v[i++];
      q.proj_out.weight = v[i++];
      q.proj_out.bias = v[i++];
      return readout(lkra_forward(v[0], q, lc));
    };
    out.emplace_back("lkra", gradcheck(f, in, h, tolerance));
  }
  {
    std::vector<std::pair<std::string, Tensor>> in{{"x", rand_input({1, c, 8, 8}, rng)}};
    GpfnParams p = tl.gpfn;
    push_params(in, p.expand, "expand");
    push_params(in, p.value, "value");
    push_params(in, p.attn_point, "attn_point");
    push_params(in, p.attn_dw, "attn_dw");
    push_params(in, p.proj_out, "proj_out");
    Problem f = [p](const std::vector<Tensor>& v) {
      GpfnParams q = p;
      std::size_t i = 1;
      q.expand.weight = v[i++];
      q.expand.bias = v[i++];
      q.value.weight = v[i++];
      q.value.bias = v[i++];
      q.attn_point.weight = v[i++];
      q.attn_point.bias = v[i++];
      q.attn_dw.weight = v[i++];
      q.attn_dw.bias = v[i++];
      q.proj_out.weight = v[i++];
      q.proj_out.bias = v[i++];
      return readout(gpfn_forward(v[0], q));
    };
    out.emplace_back("gpfn", gradcheck(f, in, h, tolerance));
  }

  // TL, RTB and the full model go through the parameter enumeration, taking
  // only the tensors the block under test actually uses.
  const auto block_problem = [&](const std::string& prefix, auto&& forward) {
    std::vector<std::pair<std::string, Tensor>> in{{"x", rand_input({1, c, 12, 12}, rng)}};
    for_each_param(model, [&in, &prefix](const std::string& name, Tensor& t) {
      if (name.rfind(prefix, 0) == 0) in.emplace_back(name, t);
    });
    LkformerParams live = model;
    Problem f = [live, prefix, forward](const std::vector<Tensor>& v) {
      LkformerParams m = live;
      std::size_t i = 1;
      for_each_param(m, [&](const std::string& name, Tensor& t) {
        if (name.rfind(prefix, 0) == 0) t = v[i++];
      });
      return readout(forward(v[0], m));
    };
    return gradcheck(f, in, h, tolerance);
  };
  const LkraConfig lc = block_cfg.lkra;
  out.emplace_back("tl", block_problem("rtb0.tl0.", [lc](const Tensor& x, const LkformerParams& m) {
    return tl_forward(x, m.rtbs[0].tls[0], lc);
  }));
  out.emplace_back("rtb", block_problem("rtb0.", [lc](const Tensor& x, const LkformerParams& m) {
    return rtb_forward(x, m.rtbs[0], lc);
  }));
  {
    std::vector<std::pair<std::string, Tensor>> in{{"x", rand_input({1, block_cfg.in_channels, 12, 12}, rng)}};
    LkformerParams live = model;
    for_each_param(live, [&in](const std::string& name, Tensor& t) {
      in.emplace_back("p:" + name, t);
    });
    LkformerConfig mc = block_cfg;
    mc.min_input = std::min(mc.min_input, 12);
    Problem f = [live, mc](const std::vector<Tensor>& v) {
      LkformerParams m = live;
      std::size_t i = 1;
      for_each_param(m, [&v, &i](const std::string&, Tensor& t) { t = v[i++]; });
      return readout(lkformer_forward(v[0], mc, m));
    };
    out.emplace_back("lkformer_full", gradcheck(f, in, h, tolerance));
  }
  return out;
}

}  // namespace lkf
