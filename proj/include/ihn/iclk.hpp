#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

#include "ihn/geometry.hpp"
#include "ihn/nn_ops.hpp"
#include "ihn/tensor.hpp"

namespace ihn {

// Classical inverse-compositional Lucas-Kanade homography iterator over raw
// intensities. The template Jacobian and Gauss-Newton system are built once
// per template and stay fixed across iterations; each step solves the 8x8
// normal equations and composes the inverse increment.
//
// Parameterization: 8 additive offsets on the homography entries with h33
// fixed to 1, warp Jacobian evaluated at the identity. The system is
// assembled in centered, scaled coordinates (the same normalization idea as
// the DLT) so the eight columns share a common scale; increments are mapped
// back to pixel coordinates before composition. Without this the projective
// columns (~u^2) dwarf the translation columns and trace-scaled damping
// crushes the translation estimate.

struct IclkOptions {
  int max_iter = 50;
  double tol = 1e-4;          // stop when the normalized increment drops below
  double damping = 1e-10;     // Tikhonov factor, scaled by trace(JtJ)
  double cond_limit = 1e12;
  int pyramid_levels = 1;     // coarse-to-fine intensity pyramid
  bool throw_on_divergence = true;
};

class IclkWorkspace {
 public:
  explicit IclkWorkspace(const TensorT<double>& templ, double damping = 1e-10,
                         double cond_limit = 1e12)
      : cond_limit_(cond_limit) {
    if (templ.ndim() != 3 || templ.dim(0) != 1 || templ.dim(1) < 3 || templ.dim(2) < 3)
      throw ShapeMismatch("iclk: template must be [1,H,W], at least 3x3");
    height_ = templ.dim(1);
    width_ = templ.dim(2);
    template_ = templ.clone_values();
    grad_u_ = TensorT<double>({1, height_, width_});
    grad_v_ = TensorT<double>({1, height_, width_});

    const double* img = templ.data();
    const auto at = [&](int v, int u) {
      return img[static_cast<size_t>(std::clamp(v, 0, height_ - 1)) * width_ +
                 std::clamp(u, 0, width_ - 1)];
    };

    // normalization: pixel (u, v) -> ((u - cx)/s, (v - cy)/s)
    cx_ = 0.5 * (width_ - 1);
    cy_ = 0.5 * (height_ - 1);
    scale_ = 0.5 * (std::max(width_, height_) - 1);

    const size_t n = static_cast<size_t>(height_) * width_;
    jacobian_.resize(static_cast<Eigen::Index>(n), 8);
    for (int v = 0; v < height_; ++v) {
      for (int u = 0; u < width_; ++u) {
        const double gu = (at(v, u + 1) - at(v, u - 1)) /
                          ((u + 1 <= width_ - 1 ? 1 : 0) + (u - 1 >= 0 ? 1 : 0));
        const double gv = (at(v + 1, u) - at(v - 1, u)) /
                          ((v + 1 <= height_ - 1 ? 1 : 0) + (v - 1 >= 0 ? 1 : 0));
        grad_u_.data()[static_cast<size_t>(v) * width_ + u] = gu;
        grad_v_.data()[static_cast<size_t>(v) * width_ + u] = gv;
        const double un = (u - cx_) / scale_;
        const double vn = (v - cy_) / scale_;
        const double gun = gu * scale_;  // dT/d(normalized u)
        const double gvn = gv * scale_;
        Eigen::Matrix<double, 1, 8> row;
        row << gun * un, gun * vn, gun, gvn * un, gvn * vn, gvn,
            -un * (gun * un + gvn * vn), -vn * (gun * un + gvn * vn);
        jacobian_.row(static_cast<Eigen::Index>(v) * width_ + u) = row;
      }
    }
    jtj_ = jacobian_.transpose() * jacobian_;

    Eigen::Matrix<double, 8, 8> damped =
        jtj_ + damping * jtj_.trace() * Eigen::Matrix<double, 8, 8>::Identity();
    const Eigen::JacobiSVD<Eigen::Matrix<double, 8, 8>> svd(damped);
    const double smin = svd.singularValues()(7);
    condition_ = smin > 0 ? svd.singularValues()(0) / smin
                          : std::numeric_limits<double>::infinity();
    solver_.compute(damped);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  const Eigen::MatrixXd& jacobian() const { return jacobian_; }
  const Eigen::Matrix<double, 8, 8>& jtj() const { return jtj_; }
  double condition() const { return condition_; }
  const TensorT<double>& template_image() const { return template_; }
  const TensorT<double>& grad_u() const { return grad_u_; }
  const TensorT<double>& grad_v() const { return grad_v_; }

  // Parameter increment in the normalized frame. An optional per-pixel
  // validity mask zeroes residuals where the warp sampled outside the
  // source; the system matrix itself stays frozen (the inverse-compositional
  // property), but masked residuals keep the true warp a zero-residual
  // fixed point instead of letting padded border values bias it.
  Eigen::Matrix<double, 8, 1> solve_increment(const TensorT<double>& warped,
                                              const std::vector<uint8_t>* valid = nullptr) const {
    if (warped.dim(1) != height_ || warped.dim(2) != width_)
      throw ShapeMismatch("iclk step: warped image shape != template");
    if (!(condition_ < cond_limit_))
      throw RankDeficientHessian("iclk: JtJ condition " + std::to_string(condition_) +
                                 " exceeds limit");
    const size_t n = static_cast<size_t>(height_) * width_;
    Eigen::VectorXd r(static_cast<Eigen::Index>(n));
    for (size_t i = 0; i < n; ++i) {
      const double keep = valid && !(*valid)[i] ? 0.0 : 1.0;
      r(static_cast<Eigen::Index>(i)) = keep * (warped.data()[i] - template_.data()[i]);
    }
    return solver_.solve(jacobian_.transpose() * r);
  }

  // Lifts a normalized-frame increment to a pixel-frame homography.
  Homography lift_increment(const Eigen::Matrix<double, 8, 1>& p) const {
    Eigen::Matrix3d hn;
    hn << 1 + p(0), p(1), p(2), p(3), 1 + p(4), p(5), p(6), p(7), 1;
    Eigen::Matrix3d norm = Eigen::Matrix3d::Identity();
    norm(0, 0) = norm(1, 1) = 1.0 / scale_;
    norm(0, 2) = -cx_ / scale_;
    norm(1, 2) = -cy_ / scale_;
    const Eigen::Matrix3d m = norm.inverse() * hn * norm;
    return Homography::from_matrix(m);
  }

 private:
  int height_ = 0, width_ = 0;
  double cx_ = 0, cy_ = 0, scale_ = 1;
  TensorT<double> template_;
  TensorT<double> grad_u_, grad_v_;
  Eigen::MatrixXd jacobian_;  // (H*W) x 8, normalized coordinates
  Eigen::Matrix<double, 8, 8> jtj_;
  Eigen::LDLT<Eigen::Matrix<double, 8, 8>> solver_;
  double condition_ = 0;
  double cond_limit_ = 1e12;
};

// One Gauss-Newton increment as a pixel-frame homography. The caller applies
// the inverse-compositional update h <- compose(h, dh.inverse()).
inline Homography iclk_step(const IclkWorkspace& ws, const TensorT<double>& i_s_warped) {
  return ws.lift_increment(ws.solve_increment(i_s_warped));
}

struct IclkResult {
  Homography h;                   // source -> target
  std::vector<double> ace_trace;  // per iteration, when ground truth given
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
};

namespace detail {

inline IclkResult iclk_estimate_single(const TensorT<double>& i_s, const TensorT<double>& i_t,
                                       const Homography& h0, const IclkOptions& opts,
                                       const CornerDisplacement* d_gt) {
  const FrameSize frame{i_t.dim(1), i_t.dim(2)};
  const IclkWorkspace ws(i_t, opts.damping, opts.cond_limit);

  // Internally iterate the map that samples the source at template
  // coordinates; the public convention (source -> target) is its inverse.
  Homography h_ts = h0.inverse();
  IclkResult res;
  double ace_min = std::numeric_limits<double>::infinity();

  auto record_ace = [&]() {
    if (!d_gt) return;
    const double ace = average_corner_error(homography_to_corners(h_ts.inverse(), frame), *d_gt);
    res.ace_trace.push_back(ace);
    ace_min = std::min(ace_min, ace);
    if (ace > 10.0 * std::max(ace_min, 0.5)) {
      res.diverged = true;
      if (opts.throw_on_divergence)
        throw Diverged("iclk: ACE grew to " + std::to_string(ace) + " from minimum " +
                       std::to_string(ace_min));
    }
  };

  const int h = frame.height, w = frame.width;
  std::vector<uint8_t> valid(static_cast<size_t>(h) * w);
  for (int k = 0; k < opts.max_iter; ++k) {
    record_ace();
    if (res.diverged) break;
    const CoordGrid grid = project_grid(h_ts, CoordGrid::identity(h, w));
    TensorT<double> warped({1, h, w});
    for (size_t i = 0; i < grid.size(); ++i) {
      warped.data()[i] = bilinear_at(i_s.data(), h, w, grid.u[i], grid.v[i], Padding::kClamp);
      valid[i] = grid.u[i] >= 0 && grid.u[i] <= w - 1 && grid.v[i] >= 0 && grid.v[i] <= h - 1;
    }
    const Eigen::Matrix<double, 8, 1> dp = ws.solve_increment(warped, &valid);
    h_ts = compose(h_ts, ws.lift_increment(dp).inverse());
    res.iterations = k + 1;
    if (dp.norm() < opts.tol) {
      res.converged = true;
      break;
    }
  }
  record_ace();
  res.h = h_ts.inverse();
  return res;
}

}  // namespace detail

// Full estimator: optional coarse-to-fine pyramid, per-iteration ACE trace
// when ground truth is supplied, divergence detection on the ACE trace.
inline IclkResult iclk_estimate(const TensorT<double>& i_s, const TensorT<double>& i_t,
                                const Homography& h0, const IclkOptions& opts = {},
                                const CornerDisplacement* d_gt = nullptr) {
  if (i_s.shape() != i_t.shape()) throw ShapeMismatch("iclk: image shapes differ");
  if (opts.pyramid_levels <= 1) return detail::iclk_estimate_single(i_s, i_t, h0, opts, d_gt);

  std::vector<TensorT<double>> pyr_s{i_s}, pyr_t{i_t};
  for (int l = 1; l < opts.pyramid_levels; ++l) {
    pyr_s.push_back(avg_pool2<double>(nullptr, pyr_s.back()));
    pyr_t.push_back(avg_pool2<double>(nullptr, pyr_t.back()));
  }

  Homography h = rescale_homography(h0, 1.0 / static_cast<double>(1 << (opts.pyramid_levels - 1)));
  IclkResult res;
  for (int l = opts.pyramid_levels - 1; l >= 0; --l) {
    IclkOptions level_opts = opts;
    level_opts.pyramid_levels = 1;
    // divergence bookkeeping only applies at full resolution
    const CornerDisplacement* gt = l == 0 ? d_gt : nullptr;
    res = detail::iclk_estimate_single(pyr_s[l], pyr_t[l], h, level_opts, gt);
    h = res.h;
    if (l > 0) h = rescale_homography(h, 2.0);
  }
  return res;
}

}  // namespace ihn
