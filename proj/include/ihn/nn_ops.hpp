#pragma once

#include <Eigen/Core>
#include <memory>
#include <vector>

#include "ihn/geometry.hpp"
#include "ihn/tensor.hpp"

namespace ihn {

namespace detail {

// Expands [Cin,H,W] into a (Cin*k*k) x (Hout*Wout) matrix whose row layout
// matches the [Cout, Cin*k*k] weight view, so the convolution is one GEMM.
template <typename T>
void im2col(const T* x, int cin, int h, int w, int k, int stride, int pad, int hout, int wout,
            T* col) {
  const size_t ncol = static_cast<size_t>(hout) * wout;
  for (int c = 0; c < cin; ++c) {
    const T* plane = x + static_cast<size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<size_t>(c) * k * k + ky * k + kx) * ncol;
        for (int oy = 0; oy < hout; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(row + static_cast<size_t>(oy) * wout, row + static_cast<size_t>(oy + 1) * wout,
                      T(0));
            continue;
          }
          const T* src = plane + static_cast<size_t>(iy) * w;
          T* dst = row + static_cast<size_t>(oy) * wout;
          for (int ox = 0; ox < wout; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix < 0 || ix >= w) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int cin, int h, int w, int k, int stride, int pad, int hout,
                int wout, T* dx) {
  const size_t ncol = static_cast<size_t>(hout) * wout;
  for (int c = 0; c < cin; ++c) {
    T* plane = dx + static_cast<size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<size_t>(c) * k * k + ky * k + kx) * ncol;
        for (int oy = 0; oy < hout; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = plane + static_cast<size_t>(iy) * w;
          const T* src = row + static_cast<size_t>(oy) * wout;
          for (int ox = 0; ox < wout; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation convolution of x[Cin,H,W] with w[Cout,Cin,k,k] plus bias.
template <typename T>
TensorT<T> conv2d(Tape<T>* tape, TensorT<T> x, TensorT<T> w, TensorT<T> b,
                  int stride = 1, int pad = -1) {
  if (x.ndim() != 3 || w.ndim() != 4) throw ShapeMismatch("conv2d: expects x[C,H,W], w[O,C,k,k]");
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k) throw ShapeMismatch("conv2d: weight/input channel mismatch");
  if (b.numel() != static_cast<size_t>(cout)) throw ShapeMismatch("conv2d: bias length != Cout");
  if (pad < 0) pad = k / 2;
  const int hout = (h + 2 * pad - k) / stride + 1;
  const int wout = (wd + 2 * pad - k) / stride + 1;
  if (hout <= 0 || wout <= 0) throw ShapeMismatch("conv2d: empty output");

  const int krows = cin * k * k;
  const size_t ncol = static_cast<size_t>(hout) * wout;
  auto col = std::make_shared<AlignedVec<T>>(static_cast<size_t>(krows) * ncol);
  detail::im2col(x.data(), cin, h, wd, k, stride, pad, hout, wout, col->data());

  TensorT<T> out({cout, hout, wout});
  {
    detail::ConstMatMap<T> mw(w.data(), cout, krows);
    detail::ConstMatMap<T> mc(col->data(), krows, static_cast<Eigen::Index>(ncol));
    detail::MatMap<T> mo(out.data(), cout, static_cast<Eigen::Index>(ncol));
    mo.noalias() = mw * mc;
    for (int oc = 0; oc < cout; ++oc) mo.row(oc).array() += b.data()[oc];
  }
  detail::debug_check_finite(out, "conv2d");

  out.set_requires_grad(x.requires_grad() || w.requires_grad() || b.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([x, w, b, out, col, cin, h, wd, k, stride, pad, hout, wout, cout, krows,
                  ncol]() mutable {
      if (!out.has_grad()) return;
      detail::ConstMatMap<T> g(out.grad_view().data(), cout, static_cast<Eigen::Index>(ncol));
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (int oc = 0; oc < cout; ++oc) gb[oc] += g.row(oc).sum();
      }
      if (w.requires_grad()) {
        detail::ConstMatMap<T> mc(col->data(), krows, static_cast<Eigen::Index>(ncol));
        detail::MatMap<T>(w.grad().data(), cout, krows).noalias() += g * mc.transpose();
      }
      if (x.requires_grad()) {
        detail::ConstMatMap<T> mw(w.data(), cout, krows);
        AlignedVec<T> dcol(static_cast<size_t>(krows) * ncol);
        detail::MatMap<T>(dcol.data(), krows, static_cast<Eigen::Index>(ncol)).noalias() =
            mw.transpose() * g;
        detail::col2im_add(dcol.data(), cin, h, wd, k, stride, pad, hout, wout, x.grad().data());
      }
    });
  }
  return out;
}

namespace detail {

enum class PoolKind { kMax, kAvg };

// 2x2 stride-2 pooling; odd inputs are replicate-padded on the right/bottom
// (window indices clamp to the last row/column).
template <typename T>
TensorT<T> pool2(Tape<T>* tape, TensorT<T> x, PoolKind kind) {
  if (x.ndim() != 3) throw ShapeMismatch("pool2: expects [C,H,W]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = (h + 1) / 2, wo = (w + 1) / 2;
  TensorT<T> out({c, ho, wo});
  auto argmax = kind == PoolKind::kMax
                    ? std::make_shared<std::vector<int>>(static_cast<size_t>(c) * ho * wo)
                    : nullptr;
  for (int ch = 0; ch < c; ++ch) {
    const T* plane = x.data() + static_cast<size_t>(ch) * h * w;
    T* op = out.data() + static_cast<size_t>(ch) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const int y0 = 2 * oy, x0 = 2 * ox;
        const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
        const int idx[4] = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
        if (kind == PoolKind::kMax) {
          int best = idx[0];
          T bv = plane[idx[0]];
          for (int t = 1; t < 4; ++t)
            if (plane[idx[t]] > bv) {
              bv = plane[idx[t]];
              best = idx[t];
            }
          op[oy * wo + ox] = bv;
          (*argmax)[static_cast<size_t>(ch) * ho * wo + oy * wo + ox] = best;
        } else {
          op[oy * wo + ox] =
              (plane[idx[0]] + plane[idx[1]] + plane[idx[2]] + plane[idx[3]]) * T(0.25);
        }
      }
    }
  }
  out.set_requires_grad(x.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([x, out, argmax, kind, c, h, w, ho, wo]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      auto& gx = x.grad();
      for (int ch = 0; ch < c; ++ch) {
        const size_t ob = static_cast<size_t>(ch) * ho * wo;
        const size_t ib = static_cast<size_t>(ch) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            const T gv = g[ob + oy * wo + ox];
            if (kind == PoolKind::kMax) {
              gx[ib + (*argmax)[ob + oy * wo + ox]] += gv;
            } else {
              const int y0 = 2 * oy, x0 = 2 * ox;
              const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
              gx[ib + y0 * w + x0] += gv * T(0.25);
              gx[ib + y0 * w + x1] += gv * T(0.25);
              gx[ib + y1 * w + x0] += gv * T(0.25);
              gx[ib + y1 * w + x1] += gv * T(0.25);
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
TensorT<T> max_pool2(Tape<T>* tape, TensorT<T> x) {
  return detail::pool2(tape, x, detail::PoolKind::kMax);
}

template <typename T>
TensorT<T> avg_pool2(Tape<T>* tape, TensorT<T> x) {
  return detail::pool2(tape, x, detail::PoolKind::kAvg);
}

// Group normalization over [C,H,W]; per-channel affine, eps = 1e-5.
template <typename T>
TensorT<T> group_norm(Tape<T>* tape, TensorT<T> x, int groups, TensorT<T> gamma,
                      TensorT<T> beta) {
  if (x.ndim() != 3) throw ShapeMismatch("group_norm: expects [C,H,W]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (c % groups != 0) throw ShapeMismatch("group_norm: channels not divisible by groups");
  if (gamma.numel() != static_cast<size_t>(c) || beta.numel() != static_cast<size_t>(c))
    throw ShapeMismatch("group_norm: affine size != channels");
  const T eps = T(1e-5);
  const int cg = c / groups;
  const size_t plane = static_cast<size_t>(h) * w;
  const size_t gsize = static_cast<size_t>(cg) * plane;

  TensorT<T> out(x.shape());
  auto xhat = std::make_shared<AlignedVec<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(groups);

  for (int g = 0; g < groups; ++g) {
    const T* xs = x.data() + static_cast<size_t>(g) * gsize;
    T mean = 0;
    for (size_t i = 0; i < gsize; ++i) mean += xs[i];
    mean /= static_cast<T>(gsize);
    T var = 0;
    for (size_t i = 0; i < gsize; ++i) {
      const T d = xs[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(gsize);
    const T istd = T(1) / std::sqrt(var + eps);
    (*inv_std)[g] = istd;
    T* xh = xhat->data() + static_cast<size_t>(g) * gsize;
    for (size_t i = 0; i < gsize; ++i) xh[i] = (xs[i] - mean) * istd;
  }
  for (int ch = 0; ch < c; ++ch) {
    const T* xh = xhat->data() + static_cast<size_t>(ch) * plane;
    T* o = out.data() + static_cast<size_t>(ch) * plane;
    const T ga = gamma.data()[ch], be = beta.data()[ch];
    for (size_t i = 0; i < plane; ++i) o[i] = ga * xh[i] + be;
  }

  out.set_requires_grad(x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([x, gamma, beta, out, xhat, inv_std, groups, c, cg, plane, gsize]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      if (beta.requires_grad()) {
        auto& gb = beta.grad();
        for (int ch = 0; ch < c; ++ch) {
          T s = 0;
          const T* gp = g.data() + static_cast<size_t>(ch) * plane;
          for (size_t i = 0; i < plane; ++i) s += gp[i];
          gb[ch] += s;
        }
      }
      if (gamma.requires_grad()) {
        auto& gg = gamma.grad();
        for (int ch = 0; ch < c; ++ch) {
          T s = 0;
          const T* gp = g.data() + static_cast<size_t>(ch) * plane;
          const T* xh = xhat->data() + static_cast<size_t>(ch) * plane;
          for (size_t i = 0; i < plane; ++i) s += gp[i] * xh[i];
          gg[ch] += s;
        }
      }
      if (x.requires_grad()) {
        auto& gx = x.grad();
        AlignedVec<T> dxhat(gsize);
        for (int grp = 0; grp < groups; ++grp) {
          const size_t base = static_cast<size_t>(grp) * gsize;
          T mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (int cc = 0; cc < cg; ++cc) {
            const int ch = grp * cg + cc;
            const T ga = gamma.data()[ch];
            const T* gp = g.data() + static_cast<size_t>(ch) * plane;
            T* dst = dxhat.data() + static_cast<size_t>(cc) * plane;
            for (size_t i = 0; i < plane; ++i) dst[i] = gp[i] * ga;
          }
          const T* xh = xhat->data() + base;
          for (size_t i = 0; i < gsize; ++i) {
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
          }
          mean_dxhat /= static_cast<T>(gsize);
          mean_dxhat_xhat /= static_cast<T>(gsize);
          const T istd = (*inv_std)[grp];
          for (size_t i = 0; i < gsize; ++i)
            gx[base + i] += istd * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
      }
    });
  }
  return out;
}

// Nearest-neighbour x2 upsampling of [C,H,W].
template <typename T>
TensorT<T> upsample_nearest2(Tape<T>* tape, TensorT<T> x) {
  if (x.ndim() != 3) throw ShapeMismatch("upsample_nearest2: expects [C,H,W]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  TensorT<T> out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch) {
    const T* src = x.data() + static_cast<size_t>(ch) * h * w;
    T* dst = out.data() + static_cast<size_t>(ch) * 4 * h * w;
    for (int y = 0; y < 2 * h; ++y) {
      const T* row = src + static_cast<size_t>(y / 2) * w;
      T* orow = dst + static_cast<size_t>(y) * 2 * w;
      for (int xx = 0; xx < 2 * w; ++xx) orow[xx] = row[xx / 2];
    }
  }
  out.set_requires_grad(x.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([x, out, c, h, w]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      auto& gx = x.grad();
      for (int ch = 0; ch < c; ++ch) {
        const size_t ib = static_cast<size_t>(ch) * h * w;
        const size_t ob = static_cast<size_t>(ch) * 4 * h * w;
        for (int y = 0; y < 2 * h; ++y)
          for (int xx = 0; xx < 2 * w; ++xx)
            gx[ib + (y / 2) * w + xx / 2] += g[ob + static_cast<size_t>(y) * 2 * w + xx];
      }
    });
  }
  return out;
}

struct GridSampleOpts {
  Padding padding = Padding::kZeros;
  bool coord_grad = false;  // gradient w.r.t. coords is off by default
};

// Bilinear sampling of x[C,H,W] at absolute pixel coords[2,H',W']
// (channel 0 = u, channel 1 = v). Always differentiable w.r.t. x.
template <typename T>
TensorT<T> grid_sample_bilinear(Tape<T>* tape, TensorT<T> x, TensorT<T> coords,
                                GridSampleOpts opts = {}) {
  if (x.ndim() != 3 || coords.ndim() != 3 || coords.dim(0) != 2)
    throw ShapeMismatch("grid_sample: expects x[C,H,W], coords[2,H',W']");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = coords.dim(1), wo = coords.dim(2);
  const size_t nout = static_cast<size_t>(ho) * wo;
  const size_t plane = static_cast<size_t>(h) * w;
  TensorT<T> out({c, ho, wo});

  // Tap table shared between forward and backward: 4 indices + weights per
  // output position (index -1 marks an out-of-bounds tap under zeros padding).
  auto taps = std::make_shared<std::vector<int>>(nout * 4);
  auto wts = std::make_shared<std::vector<T>>(nout * 4);

  const T* cu = coords.data();
  const T* cv = coords.data() + nout;
  for (size_t i = 0; i < nout; ++i) {
    double u = static_cast<double>(cu[i]);
    double v = static_cast<double>(cv[i]);
    if (!std::isfinite(u) || !std::isfinite(v))
      throw ShapeMismatch("grid_sample: non-finite coordinate");
    if (opts.padding == Padding::kClamp) {
      u = std::min(std::max(u, 0.0), static_cast<double>(w - 1));
      v = std::min(std::max(v, 0.0), static_cast<double>(h - 1));
    }
    const double fu = std::floor(u), fv = std::floor(v);
    const int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
    const T au = static_cast<T>(u - fu), av = static_cast<T>(v - fv);
    const int us[2] = {u0, u0 + 1};
    const int vs[2] = {v0, v0 + 1};
    const T uw[2] = {T(1) - au, au};
    const T vw[2] = {T(1) - av, av};
    for (int t = 0; t < 4; ++t) {
      const int uu = us[t & 1], vv = vs[t >> 1];
      const bool inside = uu >= 0 && uu < w && vv >= 0 && vv < h;
      (*taps)[i * 4 + t] = inside ? vv * w + uu : -1;
      (*wts)[i * 4 + t] = uw[t & 1] * vw[t >> 1];
    }
  }

  for (int ch = 0; ch < c; ++ch) {
    const T* xp = x.data() + static_cast<size_t>(ch) * plane;
    T* op = out.data() + static_cast<size_t>(ch) * nout;
    for (size_t i = 0; i < nout; ++i) {
      T acc = 0;
      for (int t = 0; t < 4; ++t) {
        const int idx = (*taps)[i * 4 + t];
        if (idx >= 0) acc += (*wts)[i * 4 + t] * xp[idx];
      }
      op[i] = acc;
    }
  }

  const bool want_coord_grad = opts.coord_grad && coords.requires_grad();
  out.set_requires_grad(x.requires_grad() || want_coord_grad);
  if (tape && out.requires_grad()) {
    tape->record([x, coords, out, taps, wts, c, plane, nout, want_coord_grad]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (int ch = 0; ch < c; ++ch) {
          const size_t ob = static_cast<size_t>(ch) * nout;
          const size_t ib = static_cast<size_t>(ch) * plane;
          for (size_t i = 0; i < nout; ++i) {
            const T gv = g[ob + i];
            if (gv == T(0)) continue;
            for (int t = 0; t < 4; ++t) {
              const int idx = (*taps)[i * 4 + t];
              if (idx >= 0) gx[ib + idx] += gv * (*wts)[i * 4 + t];
            }
          }
        }
      }
      if (want_coord_grad) {
        // d out / du = (1-av)(x01-x00) + av(x11-x10); similarly for v.
        auto& gc = coords.grad();
        for (size_t i = 0; i < nout; ++i) {
          const T w00 = (*wts)[i * 4 + 0], w01 = (*wts)[i * 4 + 1];
          const T w10 = (*wts)[i * 4 + 2], w11 = (*wts)[i * 4 + 3];
          const T au = w01 + w11;  // reconstructed fractional parts
          const T av = w10 + w11;
          (void)w00;
          T du = 0, dv = 0;
          for (int ch = 0; ch < c; ++ch) {
            const size_t ib = static_cast<size_t>(ch) * plane;
            const T gv = g[static_cast<size_t>(ch) * nout + i];
            if (gv == T(0)) continue;
            auto tap = [&](int t) -> T {
              const int idx = (*taps)[i * 4 + t];
              return idx >= 0 ? x.data()[ib + idx] : T(0);
            };
            const T x00 = tap(0), x01 = tap(1), x10 = tap(2), x11 = tap(3);
            du += gv * ((T(1) - av) * (x01 - x00) + av * (x11 - x10));
            dv += gv * ((T(1) - au) * (x10 - x00) + au * (x11 - x01));
          }
          gc[i] += du;
          gc[nout + i] += dv;
        }
      }
    });
  }
  return out;
}

// Tensor-facing warp: dst(x) = img sampled at project(x, h). Geometry-level
// operation, not taped.
template <typename T>
TensorT<T> warp_bilinear(const TensorT<T>& img, const Homography& h, Padding padding) {
  if (img.ndim() != 3) throw ShapeMismatch("warp_bilinear: expects [C,H,W]");
  TensorT<T> out(img.shape());
  warp_bilinear_planes(img.data(), img.dim(0), img.dim(1), img.dim(2), h, padding, out.data());
  return out;
}

}  // namespace ihn
