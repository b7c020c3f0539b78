#pragma once

#include <array>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ihn/datagen.hpp"
#include "ihn/iclk.hpp"
#include "ihn/ihe.hpp"

namespace ihn {

// Fraction-below-threshold curve thresholds, in pixels.
constexpr std::array<double, 8> kAceThresholds = {0.05, 0.1, 0.5, 1.0, 3.0, 5.0, 10.0, 20.0};

struct PairResult {
  size_t index = 0;
  uint64_t seed = 0;
  std::string variant;
  double ace = 0;
  double wall_ms = 0;
  std::vector<double> trace;  // per-iteration ACE when requested
};

struct BenchReport {
  std::vector<PairResult> pairs;
  double mace = 0;
  std::array<double, kAceThresholds.size()> fraction_below{};
  uint64_t fingerprint = 0;

  void finalize() {
    double sum = 0;
    fraction_below.fill(0);
    for (const auto& p : pairs) {
      sum += p.ace;
      for (size_t t = 0; t < kAceThresholds.size(); ++t)
        fraction_below[t] += p.ace <= kAceThresholds[t] ? 1.0 : 0.0;
    }
    const double n = std::max<size_t>(1, pairs.size());
    mace = sum / n;
    for (auto& f : fraction_below) f /= n;
  }
};

struct EvalOptions {
  std::string method = "ihn";  // ihn | iclk | oracle
  int iters_override = 0;
  int jobs = 1;
  bool traces = false;
  IclkOptions iclk;
};

namespace detail {

inline TensorT<double> to_double(const Tensor32& t) {
  TensorT<double> out(t.shape());
  for (size_t i = 0; i < t.numel(); ++i) out.data()[i] = t.data()[i];
  return out;
}

}  // namespace detail

// Runs the chosen estimator over every archive pair. Workers hold no
// mutable shared state (inference is pure given frozen weights), and the
// report rows are assembled by pair index, so the output is order-stable
// for any job count.
inline BenchReport evaluate_archive(const IhnModel* model, const Archive& archive,
                                    const EvalOptions& opts) {
  BenchReport report;
  report.pairs.resize(archive.size());

  auto run_pair = [&](size_t i) {
    const WarpPair pair = archive.load(i);
    PairResult& r = report.pairs[i];
    r.index = i;
    r.seed = pair.seed;
    r.variant = pair.variant;
    const auto t0 = std::chrono::steady_clock::now();
    if (opts.method == "oracle") {
      r.ace = average_corner_error(pair.d_gt, pair.d_gt);
    } else if (opts.method == "iclk") {
      IclkOptions io = opts.iclk;
      io.throw_on_divergence = false;
      const IclkResult res = iclk_estimate(detail::to_double(pair.source),
                                           detail::to_double(pair.target),
                                           Homography::identity(), io, &pair.d_gt);
      r.ace = res.ace_trace.empty()
                  ? average_corner_error(homography_to_corners(
                                             res.h, FrameSize{pair.source.dim(1), pair.source.dim(2)}),
                                         pair.d_gt)
                  : res.ace_trace.back();
      if (opts.traces) r.trace = res.ace_trace;
    } else if (opts.method == "ihn") {
      if (!model) throw Error("eval: ihn method requires a checkpoint");
      const auto est = model->estimate(pair.source, pair.target, opts.iters_override, &pair.d_gt);
      r.ace = average_corner_error(est.d, pair.d_gt);
      if (opts.traces) r.trace = est.ace_trace;
    } else {
      throw Error("eval: unknown method " + opts.method);
    }
    r.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };

  const int jobs = std::max(1, opts.jobs);
  if (jobs == 1) {
    for (size_t i = 0; i < archive.size(); ++i) run_pair(i);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(jobs);
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w]() {
        try {
          for (size_t i = static_cast<size_t>(w); i < archive.size(); i += jobs) run_pair(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  report.finalize();
  return report;
}

// --------------------------------- CSV --------------------------------------
// RFC-4180 rows; the versioned schema line always comes first. Pair rows
// leave the summary columns empty and vice versa. wall_ms is timing data
// and is excluded from reproducibility comparisons.

inline std::string report_to_csv(const BenchReport& report) {
  std::ostringstream os;
  os << "# ihn-bench-csv v1\n";
  os << "kind,index,seed,variant,ace_px,wall_ms,mace_px";
  for (double t : kAceThresholds) {
    std::ostringstream th;
    th << t;
    os << ",frac_le_" << th.str();
  }
  os << ",fingerprint\n";
  os.precision(17);
  for (const auto& p : report.pairs) {
    os << "pair," << p.index << "," << p.seed << "," << p.variant << "," << p.ace << ","
       << p.wall_ms << ",";
    for (size_t t = 0; t < kAceThresholds.size(); ++t) os << ",";
    os << "\n";
  }
  os << "summary,,,,,," << report.mace;
  for (double f : report.fraction_below) os << "," << f;
  os << "," << std::hex << std::setw(16) << std::setfill('0') << report.fingerprint << "\n";
  return os.str();
}

inline void write_report_csv(const std::string& path, const BenchReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write report: " + path);
  f << report_to_csv(report);
  if (!f) throw IoError("short write on report: " + path);
}

inline void write_traces_csv(const std::string& path, const BenchReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write traces: " + path);
  f << "# ihn-trace-csv v1\n";
  f << "index,iteration,ace_px\n";
  f.precision(17);
  for (const auto& p : report.pairs)
    for (size_t k = 0; k < p.trace.size(); ++k)
      f << p.index << "," << k << "," << p.trace[k] << "\n";
}

inline void write_loss_csv(const std::string& path, const TrainResult& result) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write loss curve: " + path);
  f << "# ihn-loss-csv v1\n";
  f << "step,lr,loss\n";
  f.precision(17);
  for (size_t i = 0; i < result.loss_curve.size(); ++i)
    f << i << "," << result.lr_curve[i] << "," << result.loss_curve[i] << "\n";
}

// ------------------------------ timing harness ------------------------------

struct TimingRow {
  std::string name;
  double median_ms = 0;
  double p95_ms = 0;
};

struct TimingReport {
  std::vector<TimingRow> rows;
  double ihn_ms = 0;   // 1-scale median
  double iclk_ms = 0;  // baseline median
  // Reference ratio reported alongside measurements for context only:
  // 253.7 ms / 30.6 ms from the published timing table.
  static constexpr double kReferenceIclkMs = 253.7;
  static constexpr double kReferenceIhnMs = 30.6;
};

inline double percentile(std::vector<double> xs, double p) {
  if (xs.empty()) return 0;
  std::sort(xs.begin(), xs.end());
  const double pos = p * (xs.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - lo) * (xs[hi] - xs[lo]);
}

}  // namespace ihn
