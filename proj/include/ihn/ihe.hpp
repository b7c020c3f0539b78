#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ihn/checkpoint.hpp"
#include "ihn/correlation.hpp"
#include "ihn/datagen.hpp"
#include "ihn/features.hpp"
#include "ihn/geometry.hpp"
#include "ihn/gma.hpp"
#include "ihn/optim.hpp"

namespace ihn {

struct IhnConfig {
  int image_size = 128;
  int iters = 6;         // K, per scale
  int radius = 4;        // correlation search radius
  int gma_width1 = 128;  // N at scale 1
  int gma_width2 = 80;   // N at the extra scale
  int scales = 1;        // 1 or 2
  bool mov = false;
  double loss_alpha = 0.85;
  bool detach_between_iters = true;
  bool use_pooled_slice = true;          // off: "no pooling" ablation
  bool use_flow = true;                  // off: "no flow" ablation
  std::string param_mode = "displacement";  // or "homography"
  int gn_groups = 8;
  FeatureExtractorConfig fnet;

  int slice_channels() const {
    const int win = (2 * radius + 1) * (2 * radius + 1);
    return win * (use_pooled_slice ? 2 : 1) + (use_flow ? 2 : 0);
  }
};

// ------------------------- displacement <-> cube ----------------------------
// Cube layout [2,2,2]: (component du/dv, corner row, corner col).

template <typename T>
TensorT<T> cube_from_displacement(const CornerDisplacement& d) {
  TensorT<T> t({2, 2, 2});
  for (int row = 0; row < 2; ++row)
    for (int col = 0; col < 2; ++col) {
      t.data()[row * 2 + col] = static_cast<T>(d.at(row, col).x());
      t.data()[4 + row * 2 + col] = static_cast<T>(d.at(row, col).y());
    }
  return t;
}

template <typename T>
CornerDisplacement displacement_from_cube(const TensorT<T>& t) {
  if (t.numel() != 8) throw ShapeMismatch("displacement cube must hold 8 values");
  CornerDisplacement d;
  for (int row = 0; row < 2; ++row)
    for (int col = 0; col < 2; ++col) {
      d.at(row, col).x() = static_cast<double>(t.data()[row * 2 + col]);
      d.at(row, col).y() = static_cast<double>(t.data()[4 + row * 2 + col]);
    }
  return d;
}

// Homography-entry parameterization (the ablation arm): 8 residual entries
// with h33 fixed to 1, stored in the same cube layout.
inline Homography homography_from_entry_cube(const std::array<double, 8>& p) {
  Eigen::Matrix3d m;
  m << 1 + p[0], p[1], p[2], p[3], 1 + p[4], p[5], p[6], p[7], 1;
  return Homography::from_matrix(m);
}

inline std::array<double, 8> entry_cube_from_homography(const Homography& h) {
  const Eigen::Matrix3d& m = h.matrix();
  return {m(0, 0) - 1, m(0, 1), m(0, 2), m(1, 0), m(1, 1) - 1, m(1, 2), m(2, 0), m(2, 1)};
}

// --------------------------------- loss -------------------------------------

// Weighted sum over iterations of the mean absolute displacement error:
// sum_k alpha^(K-1-k) * mean|D^(k+1) - D_gt|.
template <typename T>
TensorT<T> iteration_loss(Tape<T>* tape, const std::vector<TensorT<T>>& d_iterates,
                          const TensorT<T>& d_gt, double alpha) {
  if (d_iterates.empty()) throw ShapeMismatch("iteration_loss: empty trace");
  const int k_total = static_cast<int>(d_iterates.size());
  TensorT<T> total = TensorT<T>::scalar(0);
  for (int k = 0; k < k_total; ++k) {
    const T weight = static_cast<T>(std::pow(alpha, k_total - 1 - k));
    TensorT<T> term = mean_all(tape, abs_elem(tape, sub(tape, d_iterates[k], d_gt)));
    total = add(tape, total, scale(tape, term, weight));
  }
  return total;
}

// ------------------------------- the model ----------------------------------

struct IterationRecord {
  CornerDisplacement d;  // image-pixel units, after this iteration's update
  Homography h;          // the homography the iteration projected with
  double ace = -1;       // vs ground truth, when supplied
};

template <typename T>
struct ScaleTrace {
  std::vector<IterationRecord> records;
  std::vector<TensorT<T>> d_tensors;     // graph-side iterates for the loss
  std::vector<TensorT<T>> masks;         // mov only
};

template <typename T>
struct IhnEstimate {
  Homography h;            // source -> target, image pixels
  CornerDisplacement d;
  std::vector<double> ace_trace;   // per iteration, both scales concatenated
  std::vector<TensorT<T>> masks;
};

template <typename T>
class IhnModelT {
 public:
  explicit IhnModelT(IhnConfig cfg, uint64_t init_seed = 0) : cfg_(std::move(cfg)) {
    if (cfg_.scales != 1 && cfg_.scales != 2) throw Error("config: scales must be 1 or 2");
    if (cfg_.iters < 1 || cfg_.radius < 1) throw Error("config: iters and radius must be >= 1");
    if (cfg_.param_mode != "displacement" && cfg_.param_mode != "homography")
      throw Error("config: unknown param_mode " + cfg_.param_mode);
    cfg_.fnet.two_scale = cfg_.scales == 2;

    SplitMix64 rng(mix_seed(init_seed, 0xF00D));
    fnet_ = FeatureExtractor<T>(cfg_.fnet, params_, rng, "fnet");

    const int feat1 = cfg_.image_size / 4;
    if (cfg_.mov) {
      gma_mov1_ = GmaMov<T>(cfg_.slice_channels(), cfg_.gma_width1, feat1, cfg_.gn_groups,
                            params_, rng, "gma1");
    } else {
      gma1_ = Gma<T>(cfg_.slice_channels(), cfg_.gma_width1, feat1, cfg_.gn_groups, params_, rng,
                     "gma1");
    }
    if (cfg_.scales == 2) {
      const int feat2 = cfg_.image_size / 2;
      if (cfg_.mov) {
        gma_mov2_ = GmaMov<T>(cfg_.slice_channels(), cfg_.gma_width2, feat2, cfg_.gn_groups,
                              params_, rng, "gma2");
      } else {
        gma2_ = Gma<T>(cfg_.slice_channels(), cfg_.gma_width2, feat2, cfg_.gn_groups, params_,
                       rng, "gma2");
      }
    }
  }

  const IhnConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const FeatureExtractor<T>& fnet() const { return fnet_; }
  const Gma<T>& gma(int scale_idx) const { return scale_idx == 0 ? gma1_ : gma2_; }
  GmaMov<T>& gma_mov(int scale_idx) { return scale_idx == 0 ? gma_mov1_ : gma_mov2_; }

  // One recurrent scale over a built correlation. feat_scale converts image
  // coordinates to feature coordinates (1/4 or 1/2). The displacement state
  // lives in image pixels throughout.
  ScaleTrace<T> run_scale(Tape<T>* tape, const Correlation<T>& corr, int scale_idx,
                          double feat_scale, FrameSize frame, int iters,
                          const CornerDisplacement* gt = nullptr,
                          const Homography* outer = nullptr) const {
    ScaleTrace<T> trace;
    const CoordGrid grid_id = CoordGrid::identity(corr.height(), corr.width());

    CornerDisplacement d_cur;  // D^0 = 0
    std::array<double, 8> p_cur{};  // homography-mode state
    TensorT<T> d_chain;  // graph-side accumulator when detachment is off

    for (int k = 0; k < iters; ++k) {
      Homography h_img;
      try {
        h_img = cfg_.param_mode == "homography" ? homography_from_entry_cube(p_cur)
                                                : corners_to_homography(d_cur, frame);
      } catch (const Error& e) {
        throw DegenerateCorners("iteration " + std::to_string(k) + ": " + e.what());
      }
      CoordGrid projected;
      try {
        projected = project_grid(rescale_homography(h_img, feat_scale), grid_id);
      } catch (const Error& e) {
        throw ProjectiveBlowup("iteration " + std::to_string(k) + ": " + e.what());
      }

      auto [slice, slice_pooled] = corr.sample(tape, projected, cfg_.radius);
      std::vector<TensorT<T>> parts{slice};
      if (cfg_.use_pooled_slice) parts.push_back(slice_pooled);
      if (cfg_.use_flow) {
        TensorT<T> flow({2, corr.height(), corr.width()});
        const size_t hw = grid_id.size();
        for (size_t i = 0; i < hw; ++i) {
          flow.data()[i] = static_cast<T>((projected.u[i] - grid_id.u[i]) / feat_scale);
          flow.data()[hw + i] = static_cast<T>((projected.v[i] - grid_id.v[i]) / feat_scale);
        }
        parts.push_back(flow);
      }
      TensorT<T> input = parts.size() == 1 ? parts[0] : concat_channels(tape, parts);

      TensorT<T> cube;
      if (cfg_.mov) {
        auto [c, m] = (scale_idx == 0 ? gma_mov1_ : gma_mov2_).forward(tape, input);
        cube = c;
        trace.masks.push_back(m);
      } else {
        cube = (scale_idx == 0 ? gma1_ : gma2_).forward(tape, input);
      }

      // The state advances by the predicted residual. With detachment on,
      // the base is a constant for the tape and gradients reach each
      // iteration's residual through its own loss term only.
      TensorT<T> base;
      if (cfg_.detach_between_iters || k == 0) {
        base = cfg_.param_mode == "homography"
                   ? TensorT<T>::from({2, 2, 2}, {static_cast<T>(p_cur[0]), static_cast<T>(p_cur[1]),
                                                  static_cast<T>(p_cur[2]), static_cast<T>(p_cur[3]),
                                                  static_cast<T>(p_cur[4]), static_cast<T>(p_cur[5]),
                                                  static_cast<T>(p_cur[6]), static_cast<T>(p_cur[7])})
                   : cube_from_displacement<T>(d_cur);
      } else {
        base = d_chain;
      }
      TensorT<T> d_next = add(tape, base, cube);
      d_chain = d_next;
      trace.d_tensors.push_back(d_next);

      IterationRecord rec;
      rec.h = h_img;
      if (cfg_.param_mode == "homography") {
        for (int i = 0; i < 8; ++i) p_cur[i] = static_cast<double>(d_next.data()[i]);
        try {
          rec.d = homography_to_corners(homography_from_entry_cube(p_cur), frame);
        } catch (const Error& e) {
          throw DegenerateCorners("iteration " + std::to_string(k) + ": " + e.what());
        }
      } else {
        rec.d = displacement_from_cube(d_next);
        d_cur = rec.d;
      }
      if (gt) {
        CornerDisplacement d_eval = rec.d;
        if (outer) {
          // evaluate the composed estimate when running as the second scale
          const Homography h_total =
              compose(*outer, cfg_.param_mode == "homography"
                                  ? homography_from_entry_cube(p_cur)
                                  : corners_to_homography(rec.d, frame));
          d_eval = homography_to_corners(h_total, frame);
        }
        rec.ace = average_corner_error(d_eval, *gt);
      }
      trace.records.push_back(std::move(rec));
    }
    return trace;
  }

  // Inference on an image pair. iters_override = 0 keeps the configured K.
  IhnEstimate<T> estimate(const TensorT<T>& i_s, const TensorT<T>& i_t, int iters_override = 0,
                          const CornerDisplacement* gt = nullptr) const {
    const int iters = iters_override > 0 ? iters_override : cfg_.iters;
    const FrameSize frame{cfg_.image_size, cfg_.image_size};
    check_pair_shape(i_s, i_t);

    const auto pyr_s = fnet_.extract(nullptr, i_s);
    const auto pyr_t = fnet_.extract(nullptr, i_t);
    const auto corr1 = Correlation<T>::build(nullptr, pyr_s.f_quarter, pyr_t.f_quarter);
    const ScaleTrace<T> t1 = run_scale(nullptr, corr1, 0, 0.25, frame, iters, gt);

    IhnEstimate<T> out;
    out.masks = t1.masks;
    for (const auto& r : t1.records)
      if (r.ace >= 0) out.ace_trace.push_back(r.ace);

    Homography h1 = final_homography(t1, frame);
    if (cfg_.scales == 1) {
      out.h = h1;
      out.d = cfg_.param_mode == "homography" ? homography_to_corners(h1, frame)
                                              : t1.records.back().d;
      return out;
    }

    const TensorT<T> i_t_warped = warp_bilinear(i_t, h1, Padding::kZeros);
    const auto pyr_tw = fnet_.extract(nullptr, i_t_warped);
    const auto corr2 = Correlation<T>::build(nullptr, pyr_s.f_half, pyr_tw.f_half);
    const ScaleTrace<T> t2 = run_scale(nullptr, corr2, 1, 0.5, frame, iters, gt, &h1);
    for (const auto& r : t2.records)
      if (r.ace >= 0) out.ace_trace.push_back(r.ace);
    for (const auto& m : t2.masks) out.masks.push_back(m);

    out.h = compose(h1, final_homography(t2, frame));
    out.d = homography_to_corners(out.h, frame);
    return out;
  }

  struct ForwardLoss {
    TensorT<T> loss;
    std::vector<ScaleTrace<T>> traces;
    std::vector<CornerDisplacement> gt_per_scale;
  };

  // Training-time forward pass building the weighted iteration objective
  // (per scale, summed across scales).
  ForwardLoss training_forward(Tape<T>* tape, const WarpPair& pair) const {
    const FrameSize frame{cfg_.image_size, cfg_.image_size};
    check_pair_shape(pair.source, pair.target);

    ForwardLoss out;
    const auto pyr_s = fnet_.extract(tape, pair.source);
    const auto pyr_t = fnet_.extract(tape, pair.target);
    const auto corr1 = Correlation<T>::build(tape, pyr_s.f_quarter, pyr_t.f_quarter);
    ScaleTrace<T> t1 = run_scale(tape, corr1, 0, 0.25, frame, cfg_.iters, &pair.d_gt);

    TensorT<T> loss = iteration_loss(tape, t1.d_tensors, scale_target(pair.d_gt, frame), cfg_.loss_alpha);
    const Homography h1 = final_homography(t1, frame);
    out.gt_per_scale.push_back(pair.d_gt);
    out.traces.push_back(std::move(t1));

    if (cfg_.scales == 2) {
      const TensorT<T> i_t_warped = warp_bilinear(pair.target, h1, Padding::kZeros);
      const auto pyr_tw = fnet_.extract(tape, i_t_warped);
      const auto corr2 = Correlation<T>::build(tape, pyr_s.f_half, pyr_tw.f_half);

      // the second scale learns the residual left by the first
      const Homography h_gt = corners_to_homography(pair.d_gt, frame);
      const Homography h_res = compose(h1.inverse(), h_gt);
      const CornerDisplacement d_gt2 = homography_to_corners(h_res, frame);

      ScaleTrace<T> t2 = run_scale(tape, corr2, 1, 0.5, frame, cfg_.iters, &d_gt2);
      loss = add(tape, loss,
                 iteration_loss(tape, t2.d_tensors, scale_target(d_gt2, frame), cfg_.loss_alpha));
      out.gt_per_scale.push_back(d_gt2);
      out.traces.push_back(std::move(t2));
    }
    out.loss = loss;
    return out;
  }

  // Numeric loss recomputation from a stored trace (consistency checks).
  double loss_from_trace(const ScaleTrace<T>& trace, const CornerDisplacement& d_gt) const {
    const int k_total = static_cast<int>(trace.records.size());
    double total = 0;
    for (int k = 0; k < k_total; ++k) {
      double mean_abs = 0;
      for (int i = 0; i < 4; ++i) {
        mean_abs += std::abs(trace.records[k].d.d[i].x() - d_gt.d[i].x());
        mean_abs += std::abs(trace.records[k].d.d[i].y() - d_gt.d[i].y());
      }
      mean_abs /= 8.0;
      total += std::pow(cfg_.loss_alpha, k_total - 1 - k) * mean_abs;
    }
    return total;
  }

 private:
  TensorT<T> scale_target(const CornerDisplacement& d_gt, FrameSize frame) const {
    if (cfg_.param_mode == "homography") {
      const auto p = entry_cube_from_homography(corners_to_homography(d_gt, frame));
      std::vector<T> vals(8);
      for (int i = 0; i < 8; ++i) vals[i] = static_cast<T>(p[i]);
      return TensorT<T>::from({2, 2, 2}, std::move(vals));
    }
    return cube_from_displacement<T>(d_gt);
  }

  Homography final_homography(const ScaleTrace<T>& trace, FrameSize frame) const {
    if (cfg_.param_mode == "homography") {
      std::array<double, 8> p;
      const auto& t = trace.d_tensors.back();
      for (int i = 0; i < 8; ++i) p[i] = static_cast<double>(t.data()[i]);
      return homography_from_entry_cube(p);
    }
    return corners_to_homography(trace.records.back().d, frame);
  }

  void check_pair_shape(const TensorT<T>& i_s, const TensorT<T>& i_t) const {
    if (i_s.ndim() != 3 || i_s.dim(0) != 1 || i_s.dim(1) != cfg_.image_size ||
        i_s.dim(2) != cfg_.image_size || i_s.shape() != i_t.shape())
      throw ShapeMismatch("model expects [1," + std::to_string(cfg_.image_size) + "," +
                          std::to_string(cfg_.image_size) + "] image pairs");
  }

  IhnConfig cfg_;
  ParamStore<T> params_;
  FeatureExtractor<T> fnet_;
  Gma<T> gma1_, gma2_;
  GmaMov<T> gma_mov1_, gma_mov2_;
};

using IhnModel = IhnModelT<float>;

// ------------------------------ run config ----------------------------------
// UTF-8 key=value file capturing every config and hyperparameter field,
// emitted alongside each checkpoint so a run can be rebuilt exactly.

struct TrainConfig {
  long steps = 5000;
  int batch = 16;
  double lr_max = 2.5e-4;
  double weight_decay = 1e-5;
  double warmup_frac = 0.05;
  uint64_t seed = 0;
};

inline std::string serialize_run_config(const IhnConfig& cfg, const TrainConfig& tc) {
  std::ostringstream os;
  os.precision(17);
  os << "image_size=" << cfg.image_size << "\n";
  os << "iters=" << cfg.iters << "\n";
  os << "radius=" << cfg.radius << "\n";
  os << "gma_width1=" << cfg.gma_width1 << "\n";
  os << "gma_width2=" << cfg.gma_width2 << "\n";
  os << "scales=" << cfg.scales << "\n";
  os << "mov=" << (cfg.mov ? 1 : 0) << "\n";
  os << "loss_alpha=" << cfg.loss_alpha << "\n";
  os << "detach_between_iters=" << (cfg.detach_between_iters ? 1 : 0) << "\n";
  os << "use_pooled_slice=" << (cfg.use_pooled_slice ? 1 : 0) << "\n";
  os << "use_flow=" << (cfg.use_flow ? 1 : 0) << "\n";
  os << "param_mode=" << cfg.param_mode << "\n";
  os << "gn_groups=" << cfg.gn_groups << "\n";
  os << "fnet_q=" << cfg.fnet.q << "\n";
  os << "fnet_gn_groups=" << cfg.fnet.gn_groups << "\n";
  os << "fnet_d_feat=" << cfg.fnet.d_feat << "\n";
  os << "fnet_stem_kernel=" << cfg.fnet.stem_kernel << "\n";
  os << "fnet_widths=";
  for (size_t i = 0; i < cfg.fnet.widths.size(); ++i)
    os << (i ? "," : "") << cfg.fnet.widths[i];
  os << "\n";
  os << "train_steps=" << tc.steps << "\n";
  os << "train_batch=" << tc.batch << "\n";
  os << "train_lr_max=" << tc.lr_max << "\n";
  os << "train_weight_decay=" << tc.weight_decay << "\n";
  os << "train_warmup_frac=" << tc.warmup_frac << "\n";
  os << "train_seed=" << tc.seed << "\n";
  return os.str();
}

inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw CorruptManifest("run config: missing '=' in: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline IhnConfig config_from_key_values(const std::map<std::string, std::string>& kv) {
  IhnConfig cfg;
  auto geti = [&](const char* k, int dflt) {
    auto it = kv.find(k);
    return it == kv.end() ? dflt : std::stoi(it->second);
  };
  auto getd = [&](const char* k, double dflt) {
    auto it = kv.find(k);
    return it == kv.end() ? dflt : std::stod(it->second);
  };
  cfg.image_size = geti("image_size", cfg.image_size);
  cfg.iters = geti("iters", cfg.iters);
  cfg.radius = geti("radius", cfg.radius);
  cfg.gma_width1 = geti("gma_width1", cfg.gma_width1);
  cfg.gma_width2 = geti("gma_width2", cfg.gma_width2);
  cfg.scales = geti("scales", cfg.scales);
  cfg.mov = geti("mov", 0) != 0;
  cfg.loss_alpha = getd("loss_alpha", cfg.loss_alpha);
  cfg.detach_between_iters = geti("detach_between_iters", 1) != 0;
  cfg.use_pooled_slice = geti("use_pooled_slice", 1) != 0;
  cfg.use_flow = geti("use_flow", 1) != 0;
  if (kv.count("param_mode")) cfg.param_mode = kv.at("param_mode");
  cfg.gn_groups = geti("gn_groups", cfg.gn_groups);
  cfg.fnet.q = geti("fnet_q", cfg.fnet.q);
  cfg.fnet.gn_groups = geti("fnet_gn_groups", cfg.fnet.gn_groups);
  cfg.fnet.d_feat = geti("fnet_d_feat", cfg.fnet.d_feat);
  cfg.fnet.stem_kernel = geti("fnet_stem_kernel", cfg.fnet.stem_kernel);
  if (kv.count("fnet_widths")) {
    cfg.fnet.widths.clear();
    std::istringstream ws(kv.at("fnet_widths"));
    std::string tok;
    while (std::getline(ws, tok, ',')) cfg.fnet.widths.push_back(std::stoi(tok));
  }
  return cfg;
}

inline IhnConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingFile("run config not found: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return config_from_key_values(parse_key_values(text));
}

// --------------------------------- training ---------------------------------

struct TrainResult {
  std::vector<double> loss_curve;  // per step, batch-mean loss
  std::vector<double> lr_curve;
};

// Deterministic step loop: per-epoch Fisher-Yates shuffle from the run seed,
// gradient accumulation over the batch, AdamW with the one-cycle schedule.
inline TrainResult train_model(IhnModel& model, const std::vector<WarpPair>& data,
                               const TrainConfig& tc, std::ostream* progress = nullptr) {
  if (data.empty()) throw Error("train: empty dataset");
  Tape<float> tape;
  AdamW<float>::Options opts;
  opts.weight_decay = tc.weight_decay;
  AdamW<float> optimizer(model.params(), opts);
  OneCycleSchedule schedule{tc.lr_max, tc.steps, tc.warmup_frac};

  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // triggers a shuffle at step 0
  uint64_t epoch = 0;

  TrainResult result;
  result.loss_curve.reserve(static_cast<size_t>(tc.steps));
  for (long step = 0; step < tc.steps; ++step) {
    model.params().zero_grad();
    double batch_loss = 0;
    for (int b = 0; b < tc.batch; ++b) {
      if (cursor >= order.size()) {
        SplitMix64 shuffle_rng(mix_seed(tc.seed, 0xE90C ^ epoch));
        for (size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        cursor = 0;
        ++epoch;
      }
      const WarpPair& pair = data[order[cursor++]];
      auto fwd = model.training_forward(&tape, pair);
      const double sample_loss = static_cast<double>(fwd.loss.item());
      if (!std::isfinite(sample_loss))
        throw NonFiniteLoss("train: non-finite loss at step " + std::to_string(step));
      batch_loss += sample_loss;
      tape.backward(scale(&tape, fwd.loss, 1.0f / static_cast<float>(tc.batch)));
      tape.clear();
    }
    const double lr = schedule.lr_at(step);
    optimizer.step(lr);
    result.loss_curve.push_back(batch_loss / tc.batch);
    result.lr_curve.push_back(lr);
    if (progress && (step % 50 == 0 || step + 1 == tc.steps))
      (*progress) << "step " << step << " loss " << result.loss_curve.back() << " lr " << lr
                  << "\n"
                  << std::flush;
  }
  return result;
}

}  // namespace ihn
