#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "ihn/common.hpp"

namespace ihn {

// Coordinate convention used across the whole library: origin at the
// top-left pixel center, u = column, v = row. The four corners of an
// (H, W) frame are (0,0), (W-1,0), (0,H-1), (W-1,H-1).

struct FrameSize {
  int height = 0;
  int width = 0;
};

inline std::array<Eigen::Vector2d, 4> frame_corners(FrameSize frame) {
  const double w = frame.width - 1.0;
  const double h = frame.height - 1.0;
  return {Eigen::Vector2d(0, 0), Eigen::Vector2d(w, 0), Eigen::Vector2d(0, h),
          Eigen::Vector2d(w, h)};
}

// Displacement of the 4 frame corners, in pixels of the reference frame.
// d(i, j) is the (du, dv) vector at corner row i, corner col j:
//   (0,0) top-left, (0,1) top-right, (1,0) bottom-left, (1,1) bottom-right.
// The flat corner order used everywhere (and by frame_corners) is
// TL, TR, BL, BR.
struct CornerDisplacement {
  std::array<Eigen::Vector2d, 4> d;  // TL, TR, BL, BR

  CornerDisplacement() {
    for (auto& v : d) v.setZero();
  }

  Eigen::Vector2d& at(int corner_row, int corner_col) {
    return d[corner_row * 2 + corner_col];
  }
  const Eigen::Vector2d& at(int corner_row, int corner_col) const {
    return d[corner_row * 2 + corner_col];
  }

  static CornerDisplacement zero() { return CornerDisplacement{}; }

  bool finite() const {
    for (const auto& v : d)
      if (!std::isfinite(v.x()) || !std::isfinite(v.y())) return false;
    return true;
  }

  double max_abs() const {
    double m = 0;
    for (const auto& v : d) m = std::max(m, v.template lpNorm<Eigen::Infinity>());
    return m;
  }
};

inline CornerDisplacement operator-(const CornerDisplacement& a, const CornerDisplacement& b) {
  CornerDisplacement r;
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}

// 3x3 projective transform normalized so m(2,2) == 1. Invertibility is a
// construction invariant: |det| must exceed 1e-12.
class Homography {
 public:
  static constexpr double kMinDet = 1e-12;
  static constexpr double kMinDenominator = 1e-9;

  Homography() : m_(Eigen::Matrix3d::Identity()) {}

  static Homography from_matrix(const Eigen::Matrix3d& m) {
    if (std::abs(m(2, 2)) < kMinDet)
      throw ProjectiveBlowup("homography normalization: |m33| < 1e-12");
    Eigen::Matrix3d n = m / m(2, 2);
    if (std::abs(n.determinant()) < kMinDet)
      throw DegenerateCorners("homography is singular (|det| < 1e-12)");
    Homography h;
    h.m_ = n;
    return h;
  }

  static Homography identity() { return Homography(); }

  static Homography translation(double tx, double ty) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 2) = tx;
    m(1, 2) = ty;
    return from_matrix(m);
  }

  const Eigen::Matrix3d& matrix() const { return m_; }

  Homography inverse() const { return from_matrix(m_.inverse().eval()); }

  // Projects a single point; throws ProjectiveBlowup when the point maps to
  // the plane at infinity.
  Eigen::Vector2d project(const Eigen::Vector2d& p) const {
    const double w = m_(2, 0) * p.x() + m_(2, 1) * p.y() + 1.0;
    if (std::abs(w) < kMinDenominator)
      throw ProjectiveBlowup("projective denominator |w| < 1e-9 at point (" +
                             std::to_string(p.x()) + ", " + std::to_string(p.y()) + ")");
    const double u = m_(0, 0) * p.x() + m_(0, 1) * p.y() + m_(0, 2);
    const double v = m_(1, 0) * p.x() + m_(1, 1) * p.y() + m_(1, 2);
    return {u / w, v / w};
  }

 private:
  Eigen::Matrix3d m_;
};

// Meshgrid of (u, v) coordinates: cell (i, j) holds (u = j, v = i) for the
// identity grid; projected grids hold arbitrary real coordinates.
struct CoordGrid {
  int height = 0;
  int width = 0;
  std::vector<double> u;  // row-major, height*width
  std::vector<double> v;

  static CoordGrid identity(int h, int w) {
    CoordGrid g;
    g.height = h;
    g.width = w;
    g.u.resize(static_cast<size_t>(h) * w);
    g.v.resize(static_cast<size_t>(h) * w);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        g.u[static_cast<size_t>(i) * w + j] = j;
        g.v[static_cast<size_t>(i) * w + j] = i;
      }
    return g;
  }

  size_t size() const { return u.size(); }
};

namespace detail {

// Hartley isotropic normalization: translate centroid to origin, scale mean
// distance to sqrt(2).
inline Eigen::Matrix3d hartley_normalization(const std::array<Eigen::Vector2d, 4>& pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= 4.0;
  double mean_dist = 0;
  for (const auto& p : pts) mean_dist += (p - c).norm();
  mean_dist /= 4.0;
  const double s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

}  // namespace detail

// Normalized DLT from the 4 corner correspondences of the frame. The solved
// H maps each frame corner to corner + displacement with residual < 1e-8 px.
inline Homography corners_to_homography(const CornerDisplacement& d, FrameSize frame) {
  const auto src = frame_corners(frame);
  std::array<Eigen::Vector2d, 4> dst;
  for (int i = 0; i < 4; ++i) dst[i] = src[i] + d.d[i];

  const Eigen::Matrix3d ts = detail::hartley_normalization(src);
  const Eigen::Matrix3d td = detail::hartley_normalization(dst);

  Eigen::Matrix<double, 8, 9> a;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector3d p = ts * src[i].homogeneous();
    const Eigen::Vector3d q = td * dst[i].homogeneous();
    const double x = p.x() / p.z(), y = p.y() / p.z();
    const double xp = q.x() / q.z(), yp = q.y() / q.z();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, x * xp, y * xp, xp;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, x * yp, y * yp, yp;
  }

  Eigen::JacobiSVD<Eigen::Matrix<double, 8, 9>> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(6) < 1e-9 * sv(0))
    throw DegenerateCorners("DLT system rank < 8 (collinear or coincident corners)");

  const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d m = td.inverse() * hn * ts;

  if (std::abs(m(2, 2)) < Homography::kMinDet || std::abs(m.determinant()) < Homography::kMinDet)
    throw DegenerateCorners("DLT produced a degenerate homography");
  Homography result = Homography::from_matrix(m);

  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector2d r = result.project(src[i]) - dst[i];
    if (r.norm() > 1e-8)
      throw DegenerateCorners("DLT corner residual exceeds 1e-8 px");
  }
  return result;
}

// Inverse of the 4-corner parameterization: displacement of each frame
// corner under h.
inline CornerDisplacement homography_to_corners(const Homography& h, FrameSize frame) {
  const auto src = frame_corners(frame);
  CornerDisplacement d;
  for (int i = 0; i < 4; ++i) d.d[i] = h.project(src[i]) - src[i];
  return d;
}

// Per-cell projective mapping of a coordinate grid. Reports the offending
// cell on a near-zero denominator.
inline CoordGrid project_grid(const Homography& h, const CoordGrid& x) {
  const Eigen::Matrix3d& m = h.matrix();
  CoordGrid out;
  out.height = x.height;
  out.width = x.width;
  out.u.resize(x.size());
  out.v.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double u = x.u[i], v = x.v[i];
    const double w = m(2, 0) * u + m(2, 1) * v + 1.0;
    if (std::abs(w) < Homography::kMinDenominator)
      throw ProjectiveBlowup("projective denominator |w| < 1e-9 at grid cell " +
                             std::to_string(i / x.width) + "," + std::to_string(i % x.width));
    out.u[i] = (m(0, 0) * u + m(0, 1) * v + m(0, 2)) / w;
    out.v[i] = (m(1, 0) * u + m(1, 1) * v + m(1, 2)) / w;
  }
  return out;
}

// Flow field induced by a projected grid: F = X' - X, du then dv.
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<double> du;
  std::vector<double> dv;
};

inline FlowField homography_flow(const CoordGrid& x_proj, const CoordGrid& x) {
  if (x_proj.height != x.height || x_proj.width != x.width)
    throw ShapeMismatch("homography_flow: grid shapes differ");
  FlowField f;
  f.height = x.height;
  f.width = x.width;
  f.du.resize(x.size());
  f.dv.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    f.du[i] = x_proj.u[i] - x.u[i];
    f.dv[i] = x_proj.v[i] - x.v[i];
  }
  return f;
}

// Matrix product renormalized to m33 = 1; projecting via the result equals
// projecting via inner then outer.
inline Homography compose(const Homography& h_outer, const Homography& h_inner) {
  const Eigen::Matrix3d p = h_outer.matrix() * h_inner.matrix();
  if (std::abs(p(2, 2)) < Homography::kMinDet)
    throw ProjectiveBlowup("compose: |m33| < 1e-12 after product");
  return Homography::from_matrix(p);
}

// Conjugation by S = diag(s, s, 1): expresses h in a coordinate frame scaled
// by s. project(rescale(h, s), s*x) == s * project(h, x).
inline Homography rescale_homography(const Homography& h, double s) {
  if (s == 1.0) return h;
  Eigen::Matrix3d sm = Eigen::Matrix3d::Identity();
  sm(0, 0) = sm(1, 1) = s;
  Eigen::Matrix3d si = Eigen::Matrix3d::Identity();
  si(0, 0) = si(1, 1) = 1.0 / s;
  return Homography::from_matrix((sm * h.matrix() * si).eval());
}

// Mean over the 4 corners of the Euclidean displacement-error norm.
inline double average_corner_error(const CornerDisplacement& d_est,
                                   const CornerDisplacement& d_gt) {
  double sum = 0;
  for (int i = 0; i < 4; ++i) sum += (d_est.d[i] - d_gt.d[i]).norm();
  return sum / 4.0;
}

enum class Padding { kZeros, kClamp };

// Bilinear sample of a single row-major plane at real coordinates (u, v).
template <typename T>
inline double bilinear_at(const T* plane, int h, int w, double u, double v, Padding pad) {
  if (pad == Padding::kClamp) {
    u = std::min(std::max(u, 0.0), static_cast<double>(w - 1));
    v = std::min(std::max(v, 0.0), static_cast<double>(h - 1));
  }
  const double fu = std::floor(u), fv = std::floor(v);
  const int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
  const double au = u - fu, av = v - fv;
  auto fetch = [&](int vv, int uu) -> double {
    if (uu < 0 || uu >= w || vv < 0 || vv >= h) return 0.0;  // zeros padding
    return static_cast<double>(plane[static_cast<size_t>(vv) * w + uu]);
  };
  return (1 - av) * ((1 - au) * fetch(v0, u0) + au * fetch(v0, u0 + 1)) +
         av * ((1 - au) * fetch(v0 + 1, u0) + au * fetch(v0 + 1, u0 + 1));
}

// Warp of a [C,H,W] buffer: dst(x) = src sampled at project(x, h).
template <typename T>
inline void warp_bilinear_planes(const T* src, int c, int h, int w, const Homography& hom,
                                 Padding pad, T* dst) {
  const CoordGrid grid = project_grid(hom, CoordGrid::identity(h, w));
  const size_t plane = static_cast<size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    const T* sp = src + ch * plane;
    T* dp = dst + ch * plane;
    for (size_t i = 0; i < plane; ++i)
      dp[i] = static_cast<T>(bilinear_at(sp, h, w, grid.u[i], grid.v[i], pad));
  }
}

}  // namespace ihn
