#pragma once

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ihn/bench.hpp"
#include "ihn/checkpoint.hpp"
#include "ihn/datagen.hpp"
#include "ihn/ihe.hpp"

namespace ihn::cli {

// Exit-code contract: 0 success, 2 invalid flags, 3 I/O failure,
// 4 non-finite training loss, 5 checkpoint/config mismatch.
enum ExitCode {
  kOk = 0,
  kBadFlags = 2,
  kIoFailure = 3,
  kNonFiniteLoss = 4,
  kCheckpointMismatch = 5,
};

// --------------------------------- synth ------------------------------------

struct SynthArgs {
  std::string variant = "static";
  long count = 100;
  int size = 128;
  double rho = 32.0;
  double patch_frac = 0.12;
  double noise_sigma = 0.02;
  uint64_t seed = 0;
  std::string out;
  std::string base_dir;  // optional: user images instead of procedural noise
};

inline int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err) {
  try {
    if (args.out.empty() || args.count < 0 || args.size < 8 || args.rho < 0) {
      err << "synth: invalid flags\n";
      return kBadFlags;
    }
    std::vector<Tensor32> bases;
    if (!args.base_dir.empty()) {
      std::vector<std::filesystem::path> files;
      for (const auto& e : std::filesystem::directory_iterator(args.base_dir)) {
        const auto ext = e.path().extension().string();
        if (ext == ".pgm" || ext == ".png") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) bases.push_back(image_to_tensor<float>(read_image(f.string())));
      if (bases.empty()) throw MissingFile("no .pgm/.png images in " + args.base_dir);
    }

    SynthConfig cfg;
    cfg.variant = args.variant;
    cfg.size = args.size;
    cfg.rho = args.rho;
    cfg.patch_frac = args.patch_frac;
    cfg.noise_sigma = args.noise_sigma;

    ArchiveWriter writer(args.out);
    for (long i = 0; i < args.count; ++i) {
      WarpPair pair;
      if (bases.empty()) {
        pair = synth_pair(cfg, args.seed, static_cast<uint64_t>(i));
      } else {
        const uint64_t pair_seed = mix_seed(args.seed, static_cast<uint64_t>(i));
        SplitMix64 rng(mix_seed(pair_seed, 0));
        const Tensor32& base = bases[i % bases.size()];
        if (cfg.variant == "static") {
          pair = synth_static(base, cfg.size, cfg.rho, rng);
        } else if (cfg.variant == "moving") {
          const Tensor32 patch =
              value_noise_texture(cfg.size, cfg.size, mix_seed(pair_seed, 2), 4, 8);
          pair = synth_moving(base, patch, cfg.size, cfg.rho, cfg.patch_frac, rng);
        } else if (cfg.variant == "crossmodal") {
          pair = synth_crossmodal(base, cfg.size, cfg.rho, cfg.noise_sigma, rng);
        } else {
          err << "synth: unknown variant " << cfg.variant << "\n";
          return kBadFlags;
        }
        pair.seed = pair_seed;
      }
      writer.add(pair);
    }
    writer.close();
    out << args.out << "/manifest.jsonl\n";
    out << "checksum " << std::hex << std::setw(16) << std::setfill('0')
        << archive_checksum(args.out) << std::dec << "\n";
    return kOk;
  } catch (const Error& e) {
    err << "synth: " << e.what() << "\n";
    return kIoFailure;
  }
}

// --------------------------------- train ------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;  // prefix: writes <out>.ckpt, <out>.cfg, <out>_loss.csv
  int scales = 1;
  bool mov = false;
  int iters = 6;
  long steps = 5000;
  int batch = 16;
  double lr = 2.5e-4;
  double weight_decay = 1e-5;
  uint64_t seed = 0;
  int radius = 4;
  int gma_width1 = 128;
  int gma_width2 = 80;
  int d_feat = 64;
  std::vector<int> widths = {32, 48, 64};
  double alpha = 0.85;
  std::string param_mode = "displacement";
  int gn_groups = 8;
  bool no_flow = false;
  bool no_pool = false;
  bool no_detach = false;
  bool quiet = false;
};

inline std::vector<WarpPair> load_all_pairs(const Archive& archive) {
  std::vector<WarpPair> pairs;
  pairs.reserve(archive.size());
  for (size_t i = 0; i < archive.size(); ++i) pairs.push_back(archive.load(i));
  return pairs;
}

inline IhnConfig model_config_from_train_args(const TrainArgs& args, int image_size) {
  IhnConfig cfg;
  cfg.image_size = image_size;
  cfg.iters = args.iters;
  cfg.radius = args.radius;
  cfg.gma_width1 = args.gma_width1;
  cfg.gma_width2 = args.gma_width2;
  cfg.scales = args.scales;
  cfg.mov = args.mov;
  cfg.loss_alpha = args.alpha;
  cfg.param_mode = args.param_mode;
  cfg.use_flow = !args.no_flow;
  cfg.use_pooled_slice = !args.no_pool;
  cfg.detach_between_iters = !args.no_detach;
  cfg.gn_groups = args.gn_groups;
  cfg.fnet.gn_groups = args.gn_groups;
  cfg.fnet.d_feat = args.d_feat;
  cfg.fnet.widths = args.widths;
  return cfg;
}

inline int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  try {
    if (args.data.empty() || args.out.empty() || args.steps < 1 || args.batch < 1) {
      err << "train: invalid flags\n";
      return kBadFlags;
    }
    const Archive archive = Archive::open(args.data);
    if (archive.size() == 0) throw CorruptManifest("train: empty archive " + args.data);
    const auto pairs = load_all_pairs(archive);
    const int image_size = pairs[0].source.dim(1);

    const IhnConfig cfg = model_config_from_train_args(args, image_size);
    TrainConfig tc;
    tc.steps = args.steps;
    tc.batch = args.batch;
    tc.lr_max = args.lr;
    tc.weight_decay = args.weight_decay;
    tc.seed = args.seed;

    IhnModel model(cfg, mix_seed(args.seed, 1));
    const TrainResult result = train_model(model, pairs, tc, args.quiet ? nullptr : &out);

    save_checkpoint(args.out + ".ckpt", model.params());
    {
      std::ofstream f(args.out + ".cfg", std::ios::trunc);
      if (!f) throw IoError("cannot write config: " + args.out + ".cfg");
      f << serialize_run_config(cfg, tc);
    }
    write_loss_csv(args.out + "_loss.csv", result);
    out << "checkpoint " << args.out << ".ckpt\n";
    return kOk;
  } catch (const NonFiniteLoss& e) {
    err << "train: " << e.what() << "\n";
    return kNonFiniteLoss;
  } catch (const Error& e) {
    err << "train: " << e.what() << "\n";
    return kIoFailure;
  }
}

// ---------------------------------- eval ------------------------------------

struct EvalArgs {
  std::string data;
  std::string ckpt;            // prefix written by train (without .ckpt)
  std::string method = "ihn";  // ihn | iclk | oracle
  int iters = 0;               // 0 keeps the trained K
  std::string report;
  bool traces = false;
  int jobs = 1;
  int iclk_pyramid = 1;
  int iclk_max_iter = 50;
};

struct LoadedModel {
  IhnConfig cfg;
  std::unique_ptr<IhnModel> model;
  uint64_t fingerprint = 0;
};

inline LoadedModel load_model(const std::string& prefix) {
  std::ifstream cf(prefix + ".cfg");
  if (!cf) throw MissingFile("run config not found: " + prefix + ".cfg");
  std::string cfg_text((std::istreambuf_iterator<char>(cf)), std::istreambuf_iterator<char>());
  LoadedModel lm;
  lm.cfg = config_from_key_values(parse_key_values(cfg_text));
  lm.model = std::make_unique<IhnModel>(lm.cfg, 0);
  load_checkpoint(prefix + ".ckpt", lm.model->params());
  lm.fingerprint = fnv1a(cfg_text);
  return lm;
}

inline int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  LoadedModel lm;
  try {
    if (args.data.empty() || (args.method == "ihn" && args.ckpt.empty())) {
      err << "eval: invalid flags (need --data plus --ckpt or --method)\n";
      return kBadFlags;
    }
    if (args.method == "ihn") lm = load_model(args.ckpt);
  } catch (const MissingFile& e) {
    err << "eval: " << e.what() << "\n";
    return kIoFailure;
  } catch (const CorruptManifest& e) {
    // parameter names/shapes do not match the config-built model
    err << "eval: checkpoint/config mismatch: " << e.what() << "\n";
    return kCheckpointMismatch;
  } catch (const Error& e) {
    err << "eval: " << e.what() << "\n";
    return kIoFailure;
  }

  try {
    const Archive archive = Archive::open(args.data);
    EvalOptions opts;
    opts.method = args.method;
    opts.iters_override = args.iters;
    opts.jobs = args.jobs;
    opts.traces = args.traces || !args.report.empty();
    opts.iclk.pyramid_levels = args.iclk_pyramid;
    opts.iclk.max_iter = args.iclk_max_iter;

    BenchReport report = evaluate_archive(lm.model.get(), archive, opts);
    report.fingerprint = args.method == "ihn" ? lm.fingerprint : fnv1a(args.method);
    if (!args.report.empty()) {
      write_report_csv(args.report, report);
      if (args.traces) write_traces_csv(args.report + ".traces.csv", report);
    }
    out.precision(10);
    out << "pairs " << report.pairs.size() << "\n";
    out << "mace_px " << report.mace << "\n";
    for (size_t t = 0; t < kAceThresholds.size(); ++t)
      out << "frac_le_" << kAceThresholds[t] << " " << report.fraction_below[t] << "\n";
    return kOk;
  } catch (const Error& e) {
    err << "eval: " << e.what() << "\n";
    return kIoFailure;
  }
}

// ------------------------------- bench-time ---------------------------------

struct BenchTimeArgs {
  long count = 20;
  long warmup = 3;
  int size = 128;
  double rho = 8.0;
  uint64_t seed = 0;
  std::string ckpt;  // optional trained 1-scale model; others run random-init
};

inline int cmd_bench_time(const BenchTimeArgs& args, std::ostream& out, std::ostream& err) {
  try {
    if (args.count < 0 || args.warmup < 0 || args.size < 16) {
      err << "bench-time: invalid flags\n";
      return kBadFlags;
    }
    TimingReport timing;
    out << "method,median_ms,p95_ms\n";
    if (args.count == 0) {
      out << "ratio_iclk_over_ihn n/a (empty run)\n";
      return kOk;
    }

    SynthConfig scfg;
    scfg.size = args.size;
    scfg.rho = args.rho;
    std::vector<WarpPair> pairs;
    for (long i = 0; i < args.count + args.warmup; ++i)
      pairs.push_back(synth_pair(scfg, args.seed, static_cast<uint64_t>(i)));

    auto time_method = [&](const std::string& name, auto&& fn) {
      std::vector<double> ms;
      for (size_t i = 0; i < pairs.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn(pairs[i]);
        const double elapsed =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        if (i >= static_cast<size_t>(args.warmup)) ms.push_back(elapsed);
      }
      TimingRow row{name, percentile(ms, 0.5), percentile(ms, 0.95)};
      timing.rows.push_back(row);
      out << name << "," << row.median_ms << "," << row.p95_ms << "\n";
      return row.median_ms;
    };

    // sequential-pair mode: one session per method, reused across pairs
    auto make_model = [&](int scales, bool mov) {
      IhnConfig cfg;
      cfg.image_size = args.size;
      cfg.scales = scales;
      cfg.mov = mov;
      return std::make_unique<IhnModel>(cfg, 99);
    };
    std::unique_ptr<IhnModel> m1;
    if (!args.ckpt.empty()) {
      auto lm = load_model(args.ckpt);
      m1 = std::move(lm.model);
    } else {
      m1 = make_model(1, false);
    }
    const auto m2 = make_model(2, false);
    const auto m2m = make_model(2, true);

    timing.ihn_ms = time_method("ihn_1scale", [&](const WarpPair& p) {
      m1->estimate(p.source, p.target);
    });
    time_method("ihn_2scale", [&](const WarpPair& p) { m2->estimate(p.source, p.target); });
    time_method("ihn_2scale_mov", [&](const WarpPair& p) { m2m->estimate(p.source, p.target); });
    timing.iclk_ms = time_method("iclk", [&](const WarpPair& p) {
      IclkOptions io;
      io.throw_on_divergence = false;
      iclk_estimate(detail::to_double(p.source), detail::to_double(p.target),
                    Homography::identity(), io);
    });

    out.precision(4);
    out << "ratio_iclk_over_ihn " << timing.iclk_ms / std::max(1e-9, timing.ihn_ms) << "\n";
    out << "reference_ratio " << TimingReport::kReferenceIclkMs / TimingReport::kReferenceIhnMs
        << " (" << TimingReport::kReferenceIclkMs << " ms vs " << TimingReport::kReferenceIhnMs
        << " ms, published table; context only, not asserted)\n";
    return kOk;
  } catch (const Error& e) {
    err << "bench-time: " << e.what() << "\n";
    return kIoFailure;
  }
}

// --------------------------------- ablate -----------------------------------

struct AblateArgs {
  std::string study;  // pooling | flow | param | iters | scales
  std::string train_data;
  std::string val_data;
  long steps = 600;
  int batch = 4;
  uint64_t seed = 0;
  std::string ckpt;  // iters study: reuse an already-trained model
  int iters = 6;
  bool quiet = true;
};

inline int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const bool known_study = args.study == "pooling" || args.study == "flow" ||
                             args.study == "param" || args.study == "iters" ||
                             args.study == "scales";
    if (!known_study) {
      err << "ablate: unknown study " << args.study << "\n";
      return kBadFlags;
    }
    if (args.val_data.empty() || (args.train_data.empty() && args.ckpt.empty())) {
      err << "ablate: invalid flags\n";
      return kBadFlags;
    }
    const Archive val = Archive::open(args.val_data);

    auto eval_model = [&](IhnModel& model, int iters_override) {
      EvalOptions opts;
      opts.iters_override = iters_override;
      return evaluate_archive(&model, val, opts).mace;
    };

    auto train_arm = [&](auto mutate) -> std::pair<bool, double> {
      const Archive archive = Archive::open(args.train_data);
      const auto pairs = load_all_pairs(archive);
      TrainArgs ta;
      ta.steps = args.steps;
      ta.batch = args.batch;
      ta.seed = args.seed;
      ta.iters = args.iters;
      IhnConfig cfg = model_config_from_train_args(ta, pairs[0].source.dim(1));
      mutate(cfg);
      IhnModel model(cfg, mix_seed(args.seed, 1));
      TrainConfig tc;
      tc.steps = args.steps;
      tc.batch = args.batch;
      tc.seed = args.seed;
      try {
        train_model(model, pairs, tc, args.quiet ? nullptr : &out);
        return {true, eval_model(model, 0)};
      } catch (const NonFiniteLoss&) {
      } catch (const DegenerateCorners&) {
      } catch (const ProjectiveBlowup&) {
      }
      // a diverging arm is reported, not failed
      return {false, std::numeric_limits<double>::infinity()};
    };

    out << "study," << args.study << "\n";
    out << "setting,mace_px\n";
    out.precision(8);
    if (args.study == "pooling") {
      out << "pooling," << train_arm([](IhnConfig&) {}).second << "\n";
      out << "no_pooling," << train_arm([](IhnConfig& c) { c.use_pooled_slice = false; }).second
          << "\n";
    } else if (args.study == "flow") {
      out << "flow," << train_arm([](IhnConfig&) {}).second << "\n";
      out << "no_flow," << train_arm([](IhnConfig& c) { c.use_flow = false; }).second << "\n";
    } else if (args.study == "param") {
      out << "displacement," << train_arm([](IhnConfig&) {}).second << "\n";
      // the direct-entry parameterization is permitted to diverge; it is
      // reported, not failed
      const auto [ok, mace] = train_arm([](IhnConfig& c) { c.param_mode = "homography"; });
      out << "homography," << (ok && std::isfinite(mace) ? std::to_string(mace) : "inf") << "\n";
    } else if (args.study == "scales") {
      out << "1scale," << train_arm([](IhnConfig&) {}).second << "\n";
      out << "2scale," << train_arm([](IhnConfig& c) { c.scales = 2; }).second << "\n";
    } else if (args.study == "iters") {
      std::unique_ptr<IhnModel> model;
      if (!args.ckpt.empty()) {
        auto lm = load_model(args.ckpt);
        model = std::move(lm.model);
      } else {
        const Archive archive = Archive::open(args.train_data);
        const auto pairs = load_all_pairs(archive);
        TrainArgs ta;
        ta.steps = args.steps;
        ta.batch = args.batch;
        ta.seed = args.seed;
        ta.iters = args.iters;
        model = std::make_unique<IhnModel>(
            model_config_from_train_args(ta, pairs[0].source.dim(1)), mix_seed(args.seed, 1));
        TrainConfig tc;
        tc.steps = args.steps;
        tc.batch = args.batch;
        tc.seed = args.seed;
        train_model(*model, pairs, tc, args.quiet ? nullptr : &out);
      }
      for (int k : {1, 6, 12, 100})
        out << "iters_" << k << "," << eval_model(*model, k) << "\n";
    } else {
      err << "ablate: unknown study " << args.study << "\n";
      return kBadFlags;
    }
    return kOk;
  } catch (const NonFiniteLoss& e) {
    err << "ablate: " << e.what() << "\n";
    return kNonFiniteLoss;
  } catch (const Error& e) {
    err << "ablate: " << e.what() << "\n";
    return kIoFailure;
  }
}

// ---------------------------------- iclk ------------------------------------

struct IclkArgs {
  std::string data;
  long index = -1;  // -1: all pairs
  int max_iter = 50;
  double tol = 1e-4;
  int pyramid = 1;
  std::string report;
};

inline int cmd_iclk(const IclkArgs& args, std::ostream& out, std::ostream& err) {
  try {
    if (args.data.empty()) {
      err << "iclk: invalid flags\n";
      return kBadFlags;
    }
    const Archive archive = Archive::open(args.data);
    EvalOptions opts;
    opts.method = "iclk";
    opts.traces = true;
    opts.iclk.max_iter = args.max_iter;
    opts.iclk.tol = args.tol;
    opts.iclk.pyramid_levels = args.pyramid;

    BenchReport report;
    if (args.index >= 0) {
      if (static_cast<size_t>(args.index) >= archive.size())
        throw MissingFile("iclk: pair index out of range");
      // single-pair run with the full per-iteration trace
      const WarpPair pair = archive.load(static_cast<size_t>(args.index));
      IclkOptions io = opts.iclk;
      io.throw_on_divergence = false;
      const IclkResult res =
          iclk_estimate(detail::to_double(pair.source), detail::to_double(pair.target),
                        Homography::identity(), io, &pair.d_gt);
      out << "iteration,ace_px\n";
      out.precision(10);
      for (size_t k = 0; k < res.ace_trace.size(); ++k)
        out << k << "," << res.ace_trace[k] << "\n";
      out << "converged " << res.converged << " diverged " << res.diverged << "\n";
      return kOk;
    }
    report = evaluate_archive(nullptr, archive, opts);
    report.fingerprint = fnv1a(std::string("iclk"));
    if (!args.report.empty()) {
      write_report_csv(args.report, report);
      write_traces_csv(args.report + ".traces.csv", report);
    }
    out.precision(10);
    out << "pairs " << report.pairs.size() << "\n";
    out << "mace_px " << report.mace << "\n";
    return kOk;
  } catch (const Error& e) {
    err << "iclk: " << e.what() << "\n";
    return kIoFailure;
  }
}

}  // namespace ihn::cli
