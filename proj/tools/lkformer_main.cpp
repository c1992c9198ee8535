#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "lkf/analysis.hpp"
#include "lkf/data.hpp"
#include "lkf/train.hpp"

// Subcommands: make-data, train, eval, sr, analyze, gradcheck. Every
// subcommand also accepts --config FILE with key=value lines; command-line
// flags win over the file.

namespace {

struct ModelFlags {
  lkf::LkformerConfig cfg;

  void attach(CLI::App* app) {
    app->add_option("--channels", cfg.channels, "Feature channels C");
    app->add_option("--rtb-count", cfg.rtb_count, "Residual transformer blocks N");
    app->add_option("--tl-count", cfg.tl_count, "Transformer layers per block n");
    app->add_option("--scale", cfg.scale, "Upscaling factor (2 or 4)");
    app->add_option("--in-channels", cfg.in_channels, "Input image channels");
    app->add_option("--gpfn-expansion", cfg.gpfn_expansion, "GPFN hidden expansion e");
    app->add_option("--kernels", cfg.lkra.kernels,
                    "Residual depth-wise kernel sizes, e.g. 11,21,31")
        ->delimiter(',');
    app->add_flag("!--no-local-pair", cfg.lkra.use_local_pair, "Drop the 7x1/1x7 stage");
    app->add_flag("!--no-inner-residual", cfg.lkra.inner_residual,
                  "Drop the residual inside each depth-wise block");
  }
};

void add_config_layer(CLI::App* app) {
  app->set_config("--config", "", "key=value file; explicit flags win");
}

int run_make_data(const std::string& root, const std::string& hr_dir, int count, int height,
                  int width, int scale, std::uint64_t seed) {
  if (hr_dir.empty()) {
    lkf::make_dataset(root, count, height, width, scale, seed);
    std::printf("wrote %d synthetic scenes under %s (hr/, lr_x%d/, train.txt, test.txt)\n",
                count, root.c_str(), scale);
  } else {
    lkf::derive_dataset(root, hr_dir, scale, seed);
    std::printf("imported %s into %s (hr/, lr_x%d/, train.txt, test.txt)\n", hr_dir.c_str(),
                root.c_str(), scale);
  }
  return 0;
}

int run_eval(const std::string& data_root, const std::string& ckpt_path,
             const std::string& split, const std::string& csv_path) {
  lkf::Checkpoint ckpt = lkf::load_checkpoint(ckpt_path);
  const std::vector<lkf::SrPair> pairs =
      lkf::load_split(data_root, ckpt.config.scale, split);
  const lkf::EvalSummary model = lkf::evaluate(ckpt.config, ckpt.params, pairs);
  const lkf::EvalSummary base = lkf::bicubic_baseline(pairs);

  std::printf("%-24s %12s %10s\n", "image", "PSNR (dB)", "SSIM");
  for (const lkf::EvalRow& row : model.rows) {
    std::printf("%-24s %12.4f %10.6f\n", row.name.c_str(), row.psnr_db, row.ssim_val);
  }
  std::printf("%-24s %12.4f %10.6f   (%zu images, x%d, split=%s)\n", "mean", model.mean_psnr,
              model.mean_ssim, pairs.size(), ckpt.config.scale, split.c_str());
  std::printf("%-24s %12.4f %10.6f\n", "bicubic baseline", base.mean_psnr, base.mean_ssim);

  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("eval: cannot write '" + csv_path + "'");
    csv << "image,psnr_db,ssim\n";
    for (const lkf::EvalRow& row : model.rows) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s,%.6f,%.8f\n", row.name.c_str(), row.psnr_db,
                    row.ssim_val);
      csv << buf;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "mean,%.6f,%.8f\n", model.mean_psnr, model.mean_ssim);
    csv << buf;
  }
  return 0;
}

int run_sr(const std::string& input, const std::string& ckpt_path, const std::string& output) {
  lkf::Checkpoint ckpt = lkf::load_checkpoint(ckpt_path);
  const lkf::ImageU8 lr = lkf::load_pgm(input);
  const lkf::ImageU8 sr = lkf::super_resolve(ckpt.config, ckpt.params, lr);
  lkf::save_pgm(output, sr);
  std::printf("%s (%dx%d) -> %s (%dx%d), x%d\n", input.c_str(), lr.width, lr.height,
              output.c_str(), sr.width, sr.height, ckpt.config.scale);
  return 0;
}

int run_analyze(const lkf::LkformerConfig& cfg, int height, int width,
                const std::string& csv_path) {
  const lkf::CostReport report = lkf::analyze(cfg, height, width);
  std::fputs(report.format_text().c_str(), stdout);
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("analyze: cannot write '" + csv_path + "'");
    csv << report.format_csv();
  }
  return 0;
}

int run_gradcheck(const lkf::LkformerConfig& cfg, double h, double tolerance) {
  const auto reports = lkf::gradcheck_battery(cfg, h, tolerance);
  bool all_pass = true;
  for (const auto& [name, report] : reports) {
    std::printf("== %s ==\n%s\n", name.c_str(), report.format().c_str());
    all_pass &= report.pass;
  }
  std::printf("gradcheck: %zu layers, %s\n", reports.size(), all_pass ? "all PASS" : "FAILURES");
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LKFormer infrared image super-resolution toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  // make-data
  auto* mk = app.add_subcommand("make-data", "Generate or import an LR/HR dataset");
  std::string mk_root, mk_hr_dir;
  int mk_count = 200, mk_height = 64, mk_width = 64, mk_scale = 2;
  std::uint64_t mk_seed = 0;
  mk->add_option("--root", mk_root, "Dataset root to create")->required();
  mk->add_option("--hr-dir", mk_hr_dir, "Existing HR directory to import (else synthesize)");
  mk->add_option("--count", mk_count, "Synthetic scene count");
  mk->add_option("--height", mk_height, "Synthetic scene height");
  mk->add_option("--width", mk_width, "Synthetic scene width");
  mk->add_option("--scale", mk_scale, "Downscaling factor (2 or 4)");
  mk->add_option("--seed", mk_seed, "Generation and split seed");
  add_config_layer(mk);
  mk->callback([&] {
    rc = run_make_data(mk_root, mk_hr_dir, mk_count, mk_height, mk_width, mk_scale, mk_seed);
  });

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a prepared dataset");
  ModelFlags tr_model;
  tr_model.attach(tr);
  lkf::TrainConfig tr_cfg;
  std::string tr_data, tr_out = "runs/default";
  tr->add_option("--data", tr_data, "Dataset root (from make-data)")->required();
  tr->add_option("--out", tr_out, "Output directory for log.csv and checkpoints");
  tr->add_option("--lr", tr_cfg.lr, "Adam learning rate");
  tr->add_option("--batch", tr_cfg.batch_size, "Batch size");
  tr->add_option("--patch", tr_cfg.patch_size, "LR patch size");
  tr->add_option("--steps", tr_cfg.total_steps, "Total optimizer steps");
  tr->add_option("--seed", tr_cfg.seed, "Run seed");
  tr->add_option("--checkpoint-interval", tr_cfg.checkpoint_interval, "Steps between snapshots");
  tr->add_option("--log-interval", tr_cfg.log_interval, "Steps between log/validation rows");
  tr->add_option("--init", tr_cfg.init_checkpoint, "Checkpoint to resume from");
  tr->add_flag("!--no-augment", tr_cfg.augment, "Disable flip/rotation augmentation");
  add_config_layer(tr);
  tr->callback([&] {
    const lkf::TrainResult result = lkf::train(tr_model.cfg, tr_cfg, tr_data, tr_out);
    std::printf("trained %d steps; final val PSNR %.4f dB\ncheckpoint: %s\nlog: %s\n",
                result.steps, result.final_val_psnr, result.checkpoint_path.c_str(),
                result.log_path.c_str());
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (PSNR/SSIM per image and mean)");
  std::string ev_data, ev_ckpt, ev_split = "test", ev_csv;
  ev->add_option("--data", ev_data, "Dataset root")->required();
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--split", ev_split, "train, test or all");
  ev->add_option("--csv", ev_csv, "Also write per-image rows to this CSV");
  add_config_layer(ev);
  ev->callback([&] { rc = run_eval(ev_data, ev_ckpt, ev_split, ev_csv); });

  // sr
  auto* sr = app.add_subcommand("sr", "Super-resolve one PGM image");
  std::string sr_in, sr_ckpt, sr_out;
  sr->add_option("--input", sr_in, "LR input image (.pgm)")->required();
  sr->add_option("--checkpoint", sr_ckpt, "Checkpoint file")->required();
  sr->add_option("--output", sr_out, "SR output image (.pgm)")->required();
  add_config_layer(sr);
  sr->callback([&] { rc = run_sr(sr_in, sr_ckpt, sr_out); });

  // analyze
  auto* an = app.add_subcommand("analyze",
                                "Parameter count, FLOPs and attention-complexity report");
  ModelFlags an_model;
  an_model.attach(an);
  int an_height = 64, an_width = 64;
  std::string an_csv;
  an->add_option("--height", an_height, "Input height for FLOPs and omega");
  an->add_option("--width", an_width, "Input width for FLOPs and omega");
  an->add_option("--csv", an_csv, "Also write the report as CSV");
  add_config_layer(an);
  an->callback([&] { rc = run_analyze(an_model.cfg, an_height, an_width, an_csv); });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck",
                                "Finite-difference check of every layer and the full model");
  ModelFlags gc_model;
  gc_model.cfg.channels = 8;
  gc_model.cfg.rtb_count = 1;
  gc_model.cfg.tl_count = 1;
  gc_model.attach(gc);
  double gc_h = 1e-5, gc_tol = 1e-4;
  gc->add_option("--step", gc_h, "Central-difference step h");
  gc->add_option("--tolerance", gc_tol, "Max relative error to pass");
  add_config_layer(gc);
  gc->callback([&] { rc = run_gradcheck(gc_model.cfg, gc_h, gc_tol); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return rc;
}
