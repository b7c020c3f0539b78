#include "ihn/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ihn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::ostringstream g_err_sink;

cli::SynthArgs tiny_synth(const std::string& out, uint64_t seed = 3, long count = 8) {
  cli::SynthArgs args;
  args.count = count;
  args.size = 32;
  args.rho = 6;
  args.seed = seed;
  args.out = out;
  return args;
}

cli::TrainArgs tiny_train(const std::string& data, const std::string& out) {
  cli::TrainArgs args;
  args.data = data;
  args.out = out;
  args.steps = 4;
  args.batch = 2;
  args.iters = 2;
  args.radius = 2;
  args.gma_width1 = 16;
  args.gma_width2 = 16;
  args.d_feat = 16;
  args.widths = {8, 12, 16};
  args.gn_groups = 4;
  args.quiet = true;
  return args;
}

size_t count_rows(const std::string& csv, const std::string& prefix) {
  std::istringstream is(csv);
  std::string line;
  size_t n = 0;
  while (std::getline(is, line)) n += line.rfind(prefix, 0) == 0;
  return n;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(CmdSynth, ZeroRhoGivesIdenticalPairs) {
  const fs::path dir = temp_dir("ihn_cli_synth0");
  cli::SynthArgs args = tiny_synth((dir / "arch").string());
  args.rho = 0;
  args.count = 10;
  std::ostringstream out;
  ASSERT_EQ(cli::cmd_synth(args, out, g_err_sink), 0);
  const Archive archive = Archive::open((dir / "arch").string());
  ASSERT_EQ(archive.size(), 10u);
  for (size_t i = 0; i < archive.size(); ++i) {
    const WarpPair pair = archive.load(i);
    EXPECT_EQ(pair.d_gt.max_abs(), 0.0);
    for (size_t j = 0; j < pair.source.numel(); ++j)
      ASSERT_EQ(pair.source.data()[j], pair.target.data()[j]);
  }
  fs::remove_all(dir);
}

TEST(CmdSynth, SeedReproducesChecksum) {
  const fs::path dir = temp_dir("ihn_cli_synthseed");
  std::ostringstream out1, out2;
  ASSERT_EQ(cli::cmd_synth(tiny_synth((dir / "a").string(), 7), out1, g_err_sink), 0);
  ASSERT_EQ(cli::cmd_synth(tiny_synth((dir / "b").string(), 7), out2, g_err_sink), 0);
  // the printed checksum line must match between the two runs
  const std::string c1 = out1.str().substr(out1.str().find("checksum"));
  const std::string c2 = out2.str().substr(out2.str().find("checksum"));
  EXPECT_EQ(c1, c2);
  EXPECT_EQ(archive_checksum((dir / "a").string()), archive_checksum((dir / "b").string()));
  fs::remove_all(dir);
}

TEST(CmdSynth, OffsetsRespectRho) {
  const fs::path dir = temp_dir("ihn_cli_synthrho");
  cli::SynthArgs args = tiny_synth((dir / "arch").string(), 11, 20);
  args.rho = 6;
  std::ostringstream out;
  ASSERT_EQ(cli::cmd_synth(args, out, g_err_sink), 0);
  const Archive archive = Archive::open((dir / "arch").string());
  for (size_t i = 0; i < archive.size(); ++i)
    EXPECT_LE(archive.record(i).d_gt.max_abs(), 6.0);
  fs::remove_all(dir);
}

TEST(CmdSynth, InvalidFlagsExitTwo) {
  std::ostringstream out, err;
  cli::SynthArgs args;  // missing --out
  EXPECT_EQ(cli::cmd_synth(args, out, err), cli::kBadFlags);
}

TEST(CmdTrain, DefaultsMirrorReportedValues) {
  const cli::TrainArgs args;
  EXPECT_EQ(args.iters, 6);
  EXPECT_EQ(args.batch, 16);
  EXPECT_DOUBLE_EQ(args.lr, 2.5e-4);
  EXPECT_EQ(args.gma_width1, 128);
  EXPECT_EQ(args.gma_width2, 80);
  EXPECT_EQ(args.radius, 4);
  EXPECT_DOUBLE_EQ(args.alpha, 0.85);
}

TEST(CmdTrain, ZeroLearningRateKeepsInitialization) {
  const fs::path dir = temp_dir("ihn_cli_train0");
  std::ostringstream out;
  ASSERT_EQ(cli::cmd_synth(tiny_synth((dir / "data").string()), out, g_err_sink), 0);

  cli::TrainArgs targs = tiny_train((dir / "data").string(), (dir / "model").string());
  targs.steps = 1;
  targs.lr = 0.0;
  targs.weight_decay = 0.0;
  ASSERT_EQ(cli::cmd_train(targs, out, g_err_sink), 0);

  // rebuild the same initialization and compare checkpoint bytes
  const IhnConfig cfg = cli::model_config_from_train_args(targs, 32);
  IhnModel fresh(cfg, mix_seed(targs.seed, 1));
  EXPECT_EQ(slurp(dir / "model.ckpt"), serialize_checkpoint(fresh.params()));
  fs::remove_all(dir);
}

TEST(CmdEval, OracleIsExactZeroAndRowsMatch) {
  const fs::path dir = temp_dir("ihn_cli_evaloracle");
  std::ostringstream out;
  ASSERT_EQ(cli::cmd_synth(tiny_synth((dir / "data").string(), 5, 12), out, g_err_sink), 0);

  cli::EvalArgs eargs;
  eargs.data = (dir / "data").string();
  eargs.method = "oracle";
  eargs.report = (dir / "report.csv").string();
  std::ostringstream eout;
  ASSERT_EQ(cli::cmd_eval(eargs, eout, g_err_sink), 0);
  EXPECT_NE(eout.str().find("mace_px 0\n"), std::string::npos);

  const std::string csv = slurp(dir / "report.csv");
  // versioned schema line first, then header, then 12 pair rows + 1 summary
  EXPECT_EQ(csv.rfind("# ihn-bench-csv v1\n", 0), 0u);
  EXPECT_EQ(count_rows(csv, "pair,"), 12u);
  EXPECT_EQ(count_rows(csv, "summary,"), 1u);
  fs::remove_all(dir);
}

TEST(CmdEval, FractionCurveIsNondecreasing) {
  const fs::path dir = temp_dir("ihn_cli_evalfrac");
  std::ostringstream out;
  ASSERT_EQ(cli::cmd_synth(tiny_synth((dir / "data").string(), 6, 10), out, g_err_sink), 0);
  cli::EvalArgs eargs;
  eargs.data = (dir / "data").string();
  eargs.method = "iclk";
  std::ostringstream eout;
  ASSERT_EQ(cli::cmd_eval(eargs, eout, g_err_sink), 0);
  // parse the frac_le_* lines in order
  std::istringstream is(eout.str());
  std::string line;
  double prev = -1;
  int seen = 0;
  while (std::getline(is, line)) {
    if (line.rfind("frac_le_", 0) == 0) {
      const double v = std::stod(line.substr(line.find(' ')));
      EXPECT_GE(v, prev);
      prev = v;
      ++seen;
    }
  }
  EXPECT_EQ(seen, 8);
  fs::remove_all(dir);
}

TEST(CmdEval, CheckpointConfigMismatchExitsFive) {
  const fs::path dir = temp_dir("ihn_cli_evalmismatch");
  std::ostringstream out;
  ASSERT_EQ(cli::cmd_synth(tiny_synth((dir / "data").string()), out, g_err_sink), 0);

  cli::TrainArgs ta = tiny_train((dir / "data").string(), (dir / "model_a").string());
  ASSERT_EQ(cli::cmd_train(ta, out, g_err_sink), 0);
  cli::TrainArgs tb = tiny_train((dir / "data").string(), (dir / "model_b").string());
  tb.gma_width1 = 8;  // different architecture
  ASSERT_EQ(cli::cmd_train(tb, out, g_err_sink), 0);

  // b's config with a's checkpoint: parameter shapes no longer line up
  fs::copy_file(dir / "model_b.cfg", dir / "model_a.cfg", fs::copy_options::overwrite_existing);
  cli::EvalArgs eargs;
  eargs.data = (dir / "data").string();
  eargs.ckpt = (dir / "model_a").string();
  std::ostringstream eout, eerr;
  EXPECT_EQ(cli::cmd_eval(eargs, eout, eerr), cli::kCheckpointMismatch);
  fs::remove_all(dir);
}

TEST(CmdEval, JobsProduceIdenticalReports) {
  const fs::path dir = temp_dir("ihn_cli_evaljobs");
  std::ostringstream out;
  ASSERT_EQ(cli::cmd_synth(tiny_synth((dir / "data").string(), 8, 9), out, g_err_sink), 0);

  auto run = [&](int jobs, const std::string& name) {
    cli::EvalArgs eargs;
    eargs.data = (dir / "data").string();
    eargs.method = "iclk";
    eargs.jobs = jobs;
    eargs.report = (dir / name).string();
    std::ostringstream eout;
    EXPECT_EQ(cli::cmd_eval(eargs, eout, g_err_sink), 0);
    // strip the timing column before comparing
    std::istringstream is(slurp(dir / name));
    std::ostringstream cleaned;
    std::string line;
    while (std::getline(is, line)) {
      if (line.rfind("pair,", 0) == 0) {
        int commas = 0;
        size_t start = 0, end = line.size();
        for (size_t i = 0; i < line.size(); ++i)
          if (line[i] == ',') {
            ++commas;
            if (commas == 5) start = i + 1;
            if (commas == 6) {
              end = i;
              break;
            }
          }
        line = line.substr(0, start) + line.substr(end);
      }
      cleaned << line << "\n";
    }
    return cleaned.str();
  };
  EXPECT_EQ(run(1, "r1.csv"), run(3, "r3.csv"));
  fs::remove_all(dir);
}

TEST(CmdBenchTime, EmptyRunExitsZero) {
  cli::BenchTimeArgs args;
  args.count = 0;
  std::ostringstream out;
  EXPECT_EQ(cli::cmd_bench_time(args, out, g_err_sink), 0);
  EXPECT_NE(out.str().find("n/a"), std::string::npos);
}

TEST(CmdAblate, ItersStudyReusesCheckpoint) {
  const fs::path dir = temp_dir("ihn_cli_ablate");
  std::ostringstream out;
  ASSERT_EQ(cli::cmd_synth(tiny_synth((dir / "data").string(), 4, 6), out, g_err_sink), 0);
  cli::TrainArgs ta = tiny_train((dir / "data").string(), (dir / "model").string());
  ASSERT_EQ(cli::cmd_train(ta, out, g_err_sink), 0);

  cli::AblateArgs aargs;
  aargs.study = "iters";
  aargs.val_data = (dir / "data").string();
  aargs.ckpt = (dir / "model").string();
  std::ostringstream aout;
  ASSERT_EQ(cli::cmd_ablate(aargs, aout, g_err_sink), 0);
  for (const char* row : {"iters_1,", "iters_6,", "iters_12,", "iters_100,"})
    EXPECT_NE(aout.str().find(row), std::string::npos) << aout.str();
  fs::remove_all(dir);
}

// Both arms of the flow ablation train to a finite MACE; the directional
// gap itself is not resolvable at this scale.
TEST(CmdAblate, FlowStudyTrainsBothArmsFinite) {
  const fs::path dir = temp_dir("ihn_cli_ablateflow");
  std::ostringstream out;
  ASSERT_EQ(cli::cmd_synth(tiny_synth((dir / "data").string(), 12, 6), out, g_err_sink), 0);

  cli::AblateArgs aargs;
  aargs.study = "flow";
  aargs.train_data = (dir / "data").string();
  aargs.val_data = (dir / "data").string();
  aargs.steps = 6;
  aargs.batch = 1;
  aargs.iters = 2;
  std::ostringstream aout;
  ASSERT_EQ(cli::cmd_ablate(aargs, aout, g_err_sink), 0);
  std::istringstream is(aout.str());
  std::string line;
  int finite_rows = 0;
  while (std::getline(is, line)) {
    const size_t comma = line.rfind(',');
    if (line.rfind("flow,", 0) == 0 || line.rfind("no_flow,", 0) == 0)
      finite_rows += std::isfinite(std::stod(line.substr(comma + 1)));
  }
  EXPECT_EQ(finite_rows, 2) << aout.str();
  fs::remove_all(dir);
}

TEST(CmdAblate, UnknownStudyExitsTwo) {
  cli::AblateArgs aargs;
  aargs.study = "nonsense";
  aargs.val_data = "x";
  aargs.train_data = "y";
  std::ostringstream aout, aerr;
  EXPECT_EQ(cli::cmd_ablate(aargs, aout, aerr), cli::kBadFlags);
}

TEST(CmdIclk, SinglePairTraceOutput) {
  const fs::path dir = temp_dir("ihn_cli_iclk");
  std::ostringstream out;
  ASSERT_EQ(cli::cmd_synth(tiny_synth((dir / "data").string(), 2, 3), out, g_err_sink), 0);
  cli::IclkArgs iargs;
  iargs.data = (dir / "data").string();
  iargs.index = 1;
  std::ostringstream iout;
  ASSERT_EQ(cli::cmd_iclk(iargs, iout, g_err_sink), 0);
  EXPECT_EQ(iout.str().rfind("iteration,ace_px\n", 0), 0u);
  EXPECT_GE(count_rows(iout.str(), "0,"), 1u);
  fs::remove_all(dir);
}

TEST(CmdIclk, MissingArchiveExitsThree) {
  cli::IclkArgs iargs;
  iargs.data = "/nonexistent/archive";
  std::ostringstream iout, ierr;
  EXPECT_EQ(cli::cmd_iclk(iargs, iout, ierr), cli::kIoFailure);
}

#ifdef IHN_CLI_PATH
TEST(CliBinary, ParseErrorExitsTwo) {
  const std::string cmd = std::string(IHN_CLI_PATH) + " definitely-not-a-subcommand > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), cli::kBadFlags);
}

TEST(CliBinary, HelpExitsZero) {
  const std::string cmd = std::string(IHN_CLI_PATH) + " --help > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
}
#endif
