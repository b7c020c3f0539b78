#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "ihn/common.hpp"

namespace ihn {

// ---------------------------------------------------------------------------
// Dense n-d tensor with optional participation in a reverse-mode tape.
// A TensorT is a cheap handle (shared storage); value mutation after an op
// has consumed the tensor is outside the contract.
// ---------------------------------------------------------------------------

template <typename T>
class TensorT {
 public:
  using Buffer = AlignedVec<T>;

  struct Storage {
    std::vector<int> shape;
    Buffer val;
    Buffer grad;                 // lazily allocated, same length as val
    bool requires_grad = false;  // true for parameters and anything downstream
  };

  TensorT() : s_(std::make_shared<Storage>()) {}

  explicit TensorT(std::vector<int> shape) : s_(std::make_shared<Storage>()) {
    s_->shape = std::move(shape);
    s_->val.assign(count(s_->shape), T(0));
  }

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int> shape, T value) {
    TensorT t(std::move(shape));
    std::fill(t.s_->val.begin(), t.s_->val.end(), value);
    return t;
  }

  static TensorT from(std::vector<int> shape, const std::vector<T>& data) {
    if (count(shape) != data.size()) throw ShapeMismatch("TensorT::from: data length != shape");
    TensorT t;
    t.s_->shape = std::move(shape);
    t.s_->val.assign(data.begin(), data.end());
    return t;
  }

  static TensorT scalar(T value) { return full({1}, value); }

  const std::vector<int>& shape() const { return s_->shape; }
  int dim(int i) const { return s_->shape.at(i); }
  int ndim() const { return static_cast<int>(s_->shape.size()); }
  size_t numel() const { return s_->val.size(); }

  T* data() { return s_->val.data(); }
  const T* data() const { return s_->val.data(); }
  Buffer& values() { return s_->val; }
  const Buffer& values() const { return s_->val; }

  T item() const {
    if (numel() != 1) throw ShapeMismatch("item() on non-scalar tensor");
    return s_->val[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool b) { s_->requires_grad = b; }

  bool has_grad() const { return !s_->grad.empty(); }
  Buffer& grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->val.size(), T(0));
    return s_->grad;
  }
  const Buffer& grad_view() const { return s_->grad; }
  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }
  void drop_grad() { s_->grad.clear(); }

  // Same values, no grad lineage. Used to cut the tape between iterations.
  TensorT detach() const {
    TensorT t;
    t.s_->shape = s_->shape;
    t.s_->val = s_->val;
    return t;
  }

  TensorT clone_values() const { return detach(); }

  bool same_storage(const TensorT& o) const { return s_ == o.s_; }

  bool all_finite() const {
    for (const T& x : s_->val)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  static size_t count(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
  }

 private:
  std::shared_ptr<Storage> s_;
};

// ---------------------------------------------------------------------------
// Tape: ordered list of recorded nodes. Define-by-run order is already
// topological, so backward is a single reverse sweep that visits each node
// exactly once.
// ---------------------------------------------------------------------------

template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

  size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // Accumulates gradients of `loss` w.r.t. every tensor on the grad path.
  // Parameter gradients accumulate across calls until zero_grad.
  void backward(TensorT<T> loss) {
    if (loss.numel() != 1) throw ShapeMismatch("backward: loss must be scalar");
    if (!loss.requires_grad())
      throw NoGradPath("backward: loss does not depend on any parameter");
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

template <typename T>
inline void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape()) throw ShapeMismatch(std::string(op) + ": shapes differ");
}

template <typename T>
inline void debug_check_finite(const TensorT<T>& t, const char* op) {
#ifndef NDEBUG
  if (!t.all_finite()) throw NonFiniteLoss(std::string(op) + ": non-finite value produced");
#else
  (void)t;
  (void)op;
#endif
}

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

// --------------------------- elementwise ops ------------------------------

template <typename T>
TensorT<T> add(Tape<T>* tape, TensorT<T> a, TensorT<T> b) {
  detail::check_same_shape(a, b, "add");
  TensorT<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  out.set_requires_grad(a.requires_grad() || b.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> sub(Tape<T>* tape, TensorT<T> a, TensorT<T> b) {
  detail::check_same_shape(a, b, "sub");
  TensorT<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  out.set_requires_grad(a.requires_grad() || b.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

// Elementwise product. Also accepts a [1, H, W] first factor against a
// [C, H, W] second factor (per-position mask broadcast over channels).
template <typename T>
TensorT<T> mul(Tape<T>* tape, TensorT<T> a, TensorT<T> b) {
  const bool bcast = a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == 1 && b.dim(0) >= 1 &&
                     a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2) && a.shape() != b.shape();
  if (!bcast) detail::check_same_shape(a, b, "mul");

  TensorT<T> out(b.shape());
  const size_t plane = bcast ? static_cast<size_t>(a.dim(1)) * a.dim(2) : 0;
  const size_t n = out.numel();
  if (bcast) {
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i % plane] * b.data()[i];
  } else {
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  }
  out.set_requires_grad(a.requires_grad() || b.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([a, b, out, bcast, plane]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        if (bcast) {
          for (size_t i = 0; i < g.size(); ++i) ga[i % plane] += g[i] * b.data()[i];
        } else {
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
        }
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        if (bcast) {
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i % plane];
        } else {
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> scale(Tape<T>* tape, TensorT<T> a, T c) {
  TensorT<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  out.set_requires_grad(a.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([a, out, c]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

// x * a + b with scalar a, b.
template <typename T>
TensorT<T> affine_scalar(Tape<T>* tape, TensorT<T> x, T a, T b) {
  TensorT<T> out(x.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * a + b;
  out.set_requires_grad(x.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([x, out, a]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * a;
    });
  }
  return out;
}

template <typename T>
TensorT<T> abs_elem(Tape<T>* tape, TensorT<T> a) {
  TensorT<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = std::abs(a.data()[i]);
  out.set_requires_grad(a.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([a, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i)
        ga[i] += a.data()[i] > T(0) ? g[i] : (a.data()[i] < T(0) ? -g[i] : T(0));
    });
  }
  return out;
}

template <typename T>
TensorT<T> relu(Tape<T>* tape, TensorT<T> a) {
  TensorT<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  out.set_requires_grad(a.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([a, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += a.data()[i] > T(0) ? g[i] : T(0);
    });
  }
  return out;
}

template <typename T>
TensorT<T> sigmoid(Tape<T>* tape, TensorT<T> a) {
  TensorT<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = T(1) / (T(1) + std::exp(-a.data()[i]));
  out.set_requires_grad(a.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([a, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        const T y = out.data()[i];
        ga[i] += g[i] * y * (T(1) - y);
      }
    });
  }
  return out;
}

// ------------------------- shape manipulation -----------------------------

template <typename T>
TensorT<T> reshape(Tape<T>* tape, TensorT<T> a, std::vector<int> new_shape) {
  if (TensorT<T>::count(new_shape) != a.numel())
    throw ShapeMismatch("reshape: element count changes");
  TensorT<T> out(std::move(new_shape));
  std::memcpy(out.data(), a.data(), a.numel() * sizeof(T));
  out.set_requires_grad(a.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([a, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

// Concatenation along dim 0 of [C,H,W] tensors with equal trailing dims.
template <typename T>
TensorT<T> concat_channels(Tape<T>* tape, std::vector<TensorT<T>> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_channels: no inputs");
  const int h = parts[0].dim(1), w = parts[0].dim(2);
  int c_total = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (p.ndim() != 3 || p.dim(1) != h || p.dim(2) != w)
      throw ShapeMismatch("concat_channels: trailing dims differ");
    c_total += p.dim(0);
    needs = needs || p.requires_grad();
  }
  TensorT<T> out({c_total, h, w});
  size_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + off, p.data(), p.numel() * sizeof(T));
    off += p.numel();
  }
  out.set_requires_grad(needs);
  if (tape && needs) {
    tape->record([parts, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad_view();
      size_t off = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (size_t i = 0; i < p.numel(); ++i) gp[i] += g[off + i];
        }
        off += p.numel();
      }
    });
  }
  return out;
}

// ------------------------------ reductions --------------------------------

template <typename T>
TensorT<T> sum_all(Tape<T>* tape, TensorT<T> a) {
  T s = 0;
  for (size_t i = 0; i < a.numel(); ++i) s += a.data()[i];
  TensorT<T> out = TensorT<T>::scalar(s);
  out.set_requires_grad(a.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([a, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad_view()[0];
      auto& ga = a.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename T>
TensorT<T> mean_all(Tape<T>* tape, TensorT<T> a) {
  const T inv = T(1) / static_cast<T>(a.numel());
  T s = 0;
  for (size_t i = 0; i < a.numel(); ++i) s += a.data()[i];
  TensorT<T> out = TensorT<T>::scalar(s * inv);
  out.set_requires_grad(a.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([a, out, inv]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad_view()[0] * inv;
      auto& ga = a.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

// ------------------------------- matmul -----------------------------------

// [m,n] -> [n,m]
template <typename T>
TensorT<T> transpose2d(Tape<T>* tape, TensorT<T> a) {
  if (a.ndim() != 2) throw ShapeMismatch("transpose2d: expects [m,n]");
  const int m = a.dim(0), n = a.dim(1);
  TensorT<T> out({n, m});
  detail::MatMap<T>(out.data(), n, m) = detail::ConstMatMap<T>(a.data(), m, n).transpose();
  out.set_requires_grad(a.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([a, out, m, n]() mutable {
      if (!out.has_grad()) return;
      detail::MatMap<T>(a.grad().data(), m, n) +=
          detail::ConstMatMap<T>(out.grad_view().data(), n, m).transpose();
    });
  }
  return out;
}

// [m,k] x [k,n] -> [m,n]
template <typename T>
TensorT<T> matmul(Tape<T>* tape, TensorT<T> a, TensorT<T> b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeMismatch("matmul: incompatible shapes");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  TensorT<T> out({m, n});
  detail::ConstMatMap<T> ma(a.data(), m, k), mb(b.data(), k, n);
  detail::MatMap<T>(out.data(), m, n).noalias() = ma * mb;
  out.set_requires_grad(a.requires_grad() || b.requires_grad());
  if (tape && out.requires_grad()) {
    tape->record([a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      detail::ConstMatMap<T> g(out.grad_view().data(), m, n);
      detail::ConstMatMap<T> ma(a.data(), m, k), mb(b.data(), k, n);
      if (a.requires_grad()) detail::MatMap<T>(a.grad().data(), m, k).noalias() += g * mb.transpose();
      if (b.requires_grad()) detail::MatMap<T>(b.grad().data(), k, n).noalias() += ma.transpose() * g;
    });
  }
  return out;
}

}  // namespace ihn
