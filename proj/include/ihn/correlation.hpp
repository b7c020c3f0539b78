#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "ihn/geometry.hpp"
#include "ihn/nn_ops.hpp"
#include "ihn/tensor.hpp"

namespace ihn {

// Pairwise feature correlation: full[x_s][x_t] = max(0, <f_s(x_s), f_t(x_t)>)
// with an eagerly pooled stride-2 companion over the target dims. Sampling
// gathers a (2r+1)^2 window around projected coordinates from both volumes;
// the pooled window is gathered at halved coordinates, doubling the
// perception range at the same window size.
template <typename T>
class Correlation {
 public:
  struct Options {
    size_t max_entries = size_t(1) << 26;  // full-volume element budget
    bool on_demand = false;                // recompute dots per sample; inference only
  };

  static Correlation build(Tape<T>* tape, TensorT<T> f_s, TensorT<T> f_t, Options opts = {}) {
    if (f_s.ndim() != 3 || f_s.shape() != f_t.shape())
      throw ShapeMismatch("correlation: feature maps must share [D,H,W]");
    Correlation c;
    c.height_ = f_s.dim(1);
    c.width_ = f_s.dim(2);
    c.depth_ = f_s.dim(0);
    c.on_demand_ = opts.on_demand;
    const size_t hw = static_cast<size_t>(c.height_) * c.width_;

    if (opts.on_demand) {
      if (tape) throw Error("on-demand correlation supports inference only (no tape)");
      c.f_s_ = f_s;
      c.f_t_ = f_t;
      return c;
    }
    if (hw * hw > opts.max_entries)
      throw MemoryBudgetExceeded(
          "correlation volume exceeds the configured budget; enable on-demand mode");

    // [HW, D] x [D, HW] -> [HW, HW], clamped, then viewed as [H,W,H,W]
    TensorT<T> fs_rows =
        transpose2d(tape, reshape(tape, f_s, {c.depth_, static_cast<int>(hw)}));
    TensorT<T> ft_cols = reshape(tape, f_t, {c.depth_, static_cast<int>(hw)});
    TensorT<T> corr = relu(tape, matmul(tape, fs_rows, ft_cols));
    c.full_ = reshape(tape, corr, {c.height_, c.width_, c.height_, c.width_});

    // stride-2 average pooling over the last two dims
    TensorT<T> planes = reshape(tape, c.full_,
                                {static_cast<int>(hw), c.height_, c.width_});
    TensorT<T> pooled = avg_pool2(tape, planes);
    c.pooled_h_ = pooled.dim(1);
    c.pooled_w_ = pooled.dim(2);
    c.pooled_ = reshape(tape, pooled, {c.height_, c.width_, c.pooled_h_, c.pooled_w_});
    return c;
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool on_demand() const { return on_demand_; }

  const TensorT<T>& full() const {
    if (on_demand_) throw Error("on-demand correlation has no materialized volume");
    return full_;
  }
  const TensorT<T>& pooled() const {
    if (on_demand_) throw Error("on-demand correlation has no materialized volume");
    return pooled_;
  }

  // Gathers the (2r+1)^2 window around coords from the full volume and the
  // same-size window around coords/2 from the pooled volume. Channel
  // c = (oy+r)*(2r+1) + (ox+r). Out-of-volume taps read as zero.
  std::pair<TensorT<T>, TensorT<T>> sample(Tape<T>* tape, const CoordGrid& coords, int r) const {
    if (coords.height != height_ || coords.width != width_)
      throw ShapeMismatch("correlation sample: coords shape != source grid");
    if (on_demand_) {
      if (tape) throw Error("on-demand correlation supports inference only (no tape)");
      return {sample_on_demand(coords, r, false), sample_on_demand(coords, r, true)};
    }
    return {sample_volume(tape, full_, height_, width_, coords, r, 1.0),
            sample_volume(tape, pooled_, pooled_h_, pooled_w_, coords, r, 0.5)};
  }

 private:
  // Bilinear window gather from a [H,W,vh,vw] volume; coords scaled by
  // `coord_scale` before the window offsets are applied.
  static TensorT<T> sample_volume(Tape<T>* tape, TensorT<T> vol, int vh, int vw,
                                  const CoordGrid& coords, int r, double coord_scale) {
    const int h = coords.height, w = coords.width;
    const int win = 2 * r + 1;
    const int channels = win * win;
    const size_t hw = static_cast<size_t>(h) * w;
    const size_t vplane = static_cast<size_t>(vh) * vw;
    TensorT<T> out({channels, h, w});

    // 4 taps per (cell, channel); index -1 marks out-of-volume
    auto taps = std::make_shared<std::vector<int>>(hw * channels * 4);
    auto wts = std::make_shared<std::vector<T>>(hw * channels * 4);

    for (size_t q = 0; q < hw; ++q) {
      const double cu = coords.u[q] * coord_scale;
      const double cv = coords.v[q] * coord_scale;
      const T* plane = vol.data() + q * vplane;
      for (int oy = -r; oy <= r; ++oy) {
        for (int ox = -r; ox <= r; ++ox) {
          const int ch = (oy + r) * win + (ox + r);
          const double u = cu + ox, v = cv + oy;
          const double fu = std::floor(u), fv = std::floor(v);
          const int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
          const T au = static_cast<T>(u - fu), av = static_cast<T>(v - fv);
          const T uw[2] = {T(1) - au, au};
          const T vw_[2] = {T(1) - av, av};
          const size_t tap_base = (q * channels + ch) * 4;
          T acc = 0;
          for (int t = 0; t < 4; ++t) {
            const int uu = u0 + (t & 1), vv = v0 + (t >> 1);
            const bool inside = uu >= 0 && uu < vw && vv >= 0 && vv < vh;
            const int idx = inside ? vv * vw + uu : -1;
            const T wt = uw[t & 1] * vw_[t >> 1];
            (*taps)[tap_base + t] = idx;
            (*wts)[tap_base + t] = wt;
            if (idx >= 0) acc += wt * plane[idx];
          }
          out.data()[static_cast<size_t>(ch) * hw + q] = acc;
        }
      }
    }

    out.set_requires_grad(vol.requires_grad());
    if (tape && out.requires_grad()) {
      tape->record([vol, out, taps, wts, hw, channels, vplane]() mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad_view();
        auto& gv = vol.grad();
        for (size_t q = 0; q < hw; ++q) {
          T* gplane = gv.data() + q * vplane;
          for (int ch = 0; ch < channels; ++ch) {
            const T gval = g[static_cast<size_t>(ch) * hw + q];
            if (gval == T(0)) continue;
            const size_t tap_base = (q * channels + ch) * 4;
            for (int t = 0; t < 4; ++t) {
              const int idx = (*taps)[tap_base + t];
              if (idx >= 0) gplane[idx] += gval * (*wts)[tap_base + t];
            }
          }
        }
      });
    }
    return out;
  }

  // Recomputes window dots directly from the feature maps (no volume). The
  // pooled window averages the four parent dots post-ReLU, exactly matching
  // the eager pooled volume.
  TensorT<T> sample_on_demand(const CoordGrid& coords, int r, bool pooled) const {
    const int h = height_, w = width_;
    const int win = 2 * r + 1;
    const int channels = win * win;
    const size_t hw = static_cast<size_t>(h) * w;
    TensorT<T> out({channels, h, w});

    auto dot_relu = [&](size_t q, double tu, double tv) -> double {
      // bilinear over target positions of the ReLU-ed dot products
      const double fu = std::floor(tu), fv = std::floor(tv);
      const int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
      const double au = tu - fu, av = tv - fv;
      double acc = 0;
      for (int t = 0; t < 4; ++t) {
        const int uu = u0 + (t & 1), vv = v0 + (t >> 1);
        if (uu < 0 || uu >= w || vv < 0 || vv >= h) continue;
        const double wt = (t & 1 ? au : 1 - au) * (t >> 1 ? av : 1 - av);
        if (wt == 0) continue;
        double dot = 0;
        const size_t ti = static_cast<size_t>(vv) * w + uu;
        for (int d = 0; d < depth_; ++d)
          dot += static_cast<double>(f_s_.data()[static_cast<size_t>(d) * hw + q]) *
                 static_cast<double>(f_t_.data()[static_cast<size_t>(d) * hw + ti]);
        acc += wt * std::max(0.0, dot);
      }
      return acc;
    };

    auto pooled_value = [&](size_t q, double pu, double pv) -> double {
      // value of the pooled volume at real coords (pu, pv) via bilinear over
      // pooled cells, each pooled cell being the mean of its 4 parents
      const int ph = (h + 1) / 2, pw = (w + 1) / 2;
      const double fu = std::floor(pu), fv = std::floor(pv);
      const int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
      const double au = pu - fu, av = pv - fv;
      double acc = 0;
      for (int t = 0; t < 4; ++t) {
        const int uu = u0 + (t & 1), vv = v0 + (t >> 1);
        if (uu < 0 || uu >= pw || vv < 0 || vv >= ph) continue;
        const double wt = (t & 1 ? au : 1 - au) * (t >> 1 ? av : 1 - av);
        if (wt == 0) continue;
        double cell = 0;
        for (int s = 0; s < 4; ++s) {
          const int y = std::min(2 * vv + (s >> 1), h - 1);
          const int x = std::min(2 * uu + (s & 1), w - 1);
          cell += dot_relu(q, x, y);
        }
        acc += wt * cell * 0.25;
      }
      return acc;
    };

    for (size_t q = 0; q < hw; ++q) {
      const double scale = pooled ? 0.5 : 1.0;
      const double cu = coords.u[q] * scale;
      const double cv = coords.v[q] * scale;
      for (int oy = -r; oy <= r; ++oy) {
        for (int ox = -r; ox <= r; ++ox) {
          const int ch = (oy + r) * win + (ox + r);
          const double v = pooled ? pooled_value(q, cu + ox, cv + oy) : dot_relu(q, cu + ox, cv + oy);
          out.data()[static_cast<size_t>(ch) * hw + q] = static_cast<T>(v);
        }
      }
    }
    return out;
  }

  int height_ = 0, width_ = 0, depth_ = 0;
  int pooled_h_ = 0, pooled_w_ = 0;
  bool on_demand_ = false;
  TensorT<T> full_;    // [H,W,H,W]
  TensorT<T> pooled_;  // [H,W,H/2,W/2]
  TensorT<T> f_s_, f_t_;  // retained in on-demand mode
};

}  // namespace ihn
