// Command-line front door: dataset synthesis, training, evaluation,
// baseline runs, ablations, and the timing harness. All outputs are
// machine-readable; plots come from the CSVs.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "ihn/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"iterative homography estimation toolkit"};
  app.require_subcommand(1);

  int default_jobs = 1;
  if (const char* env = std::getenv("IHN_NUM_JOBS")) {
    const int v = std::atoi(env);
    if (v > 0) default_jobs = v;
  }

  ihn::cli::SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic warp-pair archive");
  synth_cmd->add_option("--variant", synth.variant, "static | moving | crossmodal");
  synth_cmd->add_option("--count", synth.count, "number of pairs");
  synth_cmd->add_option("--size", synth.size, "crop side in pixels");
  synth_cmd->add_option("--rho", synth.rho, "corner perturbation range [-rho, rho]");
  synth_cmd->add_option("--patch-frac", synth.patch_frac, "moving-patch area fraction");
  synth_cmd->add_option("--noise-sigma", synth.noise_sigma, "crossmodal noise sigma");
  synth_cmd->add_option("--seed", synth.seed, "run seed");
  synth_cmd->add_option("--base-dir", synth.base_dir, "directory of PGM/PNG base images");
  synth_cmd->add_option("--out", synth.out, "output archive directory")->required();

  ihn::cli::TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train an estimator on an archive");
  train_cmd->add_option("--data", train.data, "training archive")->required();
  train_cmd->add_option("--out", train.out, "output prefix (.ckpt/.cfg/_loss.csv)")->required();
  train_cmd->add_option("--scales", train.scales, "1 or 2");
  train_cmd->add_flag("--mov", train.mov, "moving-objects aggregator with inlier mask");
  train_cmd->add_option("--iters", train.iters, "iterations K per scale");
  train_cmd->add_option("--steps", train.steps, "optimizer steps");
  train_cmd->add_option("--batch", train.batch, "batch size (gradient accumulation)");
  train_cmd->add_option("--lr", train.lr, "maximum learning rate (one-cycle)");
  train_cmd->add_option("--wd", train.weight_decay, "decoupled weight decay");
  train_cmd->add_option("--seed", train.seed, "run seed");
  train_cmd->add_option("--radius", train.radius, "correlation search radius");
  train_cmd->add_option("--n1", train.gma_width1, "aggregator width, scale 1");
  train_cmd->add_option("--n2", train.gma_width2, "aggregator width, scale 2");
  train_cmd->add_option("--d-feat", train.d_feat, "feature projection width");
  train_cmd->add_option("--widths", train.widths, "extractor widths (stem + per unit)");
  train_cmd->add_option("--alpha", train.alpha, "loss decay");
  train_cmd->add_option("--param-mode", train.param_mode, "displacement | homography");
  train_cmd->add_option("--gn-groups", train.gn_groups, "group-norm group count");
  train_cmd->add_flag("--no-flow", train.no_flow, "drop the flow input");
  train_cmd->add_flag("--no-pool", train.no_pool, "drop the pooled correlation slice");
  train_cmd->add_flag("--no-detach", train.no_detach, "chain gradients across iterations");
  train_cmd->add_flag("--quiet", train.quiet, "suppress progress lines");

  ihn::cli::EvalArgs eval;
  eval.jobs = default_jobs;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate an estimator over an archive");
  eval_cmd->add_option("--data", eval.data, "evaluation archive")->required();
  eval_cmd->add_option("--ckpt", eval.ckpt, "checkpoint prefix from train");
  eval_cmd->add_option("--method", eval.method, "ihn | iclk | oracle");
  eval_cmd->add_option("--iters", eval.iters, "inference iterations (0 = trained K)");
  eval_cmd->add_option("--report", eval.report, "write the report CSV here");
  eval_cmd->add_flag("--traces", eval.traces, "also write per-iteration ACE traces");
  eval_cmd->add_option("--jobs", eval.jobs, "worker threads (default $IHN_NUM_JOBS)");
  eval_cmd->add_option("--iclk-pyramid", eval.iclk_pyramid, "pyramid levels for --method iclk");
  eval_cmd->add_option("--iclk-max-iter", eval.iclk_max_iter, "iteration cap for --method iclk");

  ihn::cli::BenchTimeArgs bench;
  auto* bench_cmd = app.add_subcommand("bench-time", "per-pair latency of every estimator");
  bench_cmd->add_option("--count", bench.count, "timed pairs");
  bench_cmd->add_option("--warmup", bench.warmup, "untimed warmup pairs");
  bench_cmd->add_option("--size", bench.size, "pair side in pixels");
  bench_cmd->add_option("--rho", bench.rho, "perturbation range for the timing pairs");
  bench_cmd->add_option("--seed", bench.seed, "run seed");
  bench_cmd->add_option("--ckpt", bench.ckpt, "optional trained model for the 1-scale row");

  ihn::cli::AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "paired train+eval differing in one setting");
  ablate_cmd->add_option("--study", ablate.study, "pooling | flow | param | iters | scales")
      ->required();
  ablate_cmd->add_option("--data", ablate.train_data, "training archive");
  ablate_cmd->add_option("--val", ablate.val_data, "validation archive")->required();
  ablate_cmd->add_option("--steps", ablate.steps, "training steps per arm");
  ablate_cmd->add_option("--batch", ablate.batch, "batch size");
  ablate_cmd->add_option("--seed", ablate.seed, "run seed");
  ablate_cmd->add_option("--iters", ablate.iters, "training K");
  ablate_cmd->add_option("--ckpt", ablate.ckpt, "iters study: reuse this trained model");

  ihn::cli::IclkArgs iclk;
  auto* iclk_cmd = app.add_subcommand("iclk", "run the inverse-compositional baseline");
  iclk_cmd->add_option("--data", iclk.data, "archive")->required();
  iclk_cmd->add_option("--index", iclk.index, "single pair index (-1 = all)");
  iclk_cmd->add_option("--max-iter", iclk.max_iter, "iteration cap");
  iclk_cmd->add_option("--tol", iclk.tol, "increment stop tolerance");
  iclk_cmd->add_option("--pyramid", iclk.pyramid, "coarse-to-fine levels");
  iclk_cmd->add_option("--report", iclk.report, "write the report CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : ihn::cli::kBadFlags;
  }

  if (synth_cmd->parsed()) return ihn::cli::cmd_synth(synth, std::cout, std::cerr);
  if (train_cmd->parsed()) return ihn::cli::cmd_train(train, std::cout, std::cerr);
  if (eval_cmd->parsed()) return ihn::cli::cmd_eval(eval, std::cout, std::cerr);
  if (bench_cmd->parsed()) return ihn::cli::cmd_bench_time(bench, std::cout, std::cerr);
  if (ablate_cmd->parsed()) return ihn::cli::cmd_ablate(ablate, std::cout, std::cerr);
  if (iclk_cmd->parsed()) return ihn::cli::cmd_iclk(iclk, std::cout, std::cerr);
  return ihn::cli::kBadFlags;
}
