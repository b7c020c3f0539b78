#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ihn/common.hpp"
#include "ihn/tensor.hpp"

namespace ihn {

// Named trainable parameters in registration order. Registration order is
// the checkpoint order, so it must be deterministic.
template <typename T>
class ParamStore {
 public:
  TensorT<T> add(const std::string& name, TensorT<T> t) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back({name, t});
    return t;
  }

  TensorT<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return params_[it->second].tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  size_t size() const { return params_.size(); }
  const std::string& name(size_t i) const { return params_[i].name; }
  TensorT<T>& tensor(size_t i) { return params_[i].tensor; }
  const TensorT<T>& tensor(size_t i) const { return params_[i].tensor; }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  size_t total_elements() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

 private:
  struct Entry {
    std::string name;
    TensorT<T> tensor;
  };
  std::vector<Entry> params_;
  std::map<std::string, size_t> index_;
};

// Kaiming-uniform fan-in init for conv weights: U(-b, b), b = sqrt(6/fan_in).
template <typename T>
TensorT<T> kaiming_conv_init(std::vector<int> shape, SplitMix64& rng) {
  TensorT<T> t(shape);
  const int fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape.back();
  const double bound = std::sqrt(6.0 / std::max(1, fan_in));
  for (size_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

// One-cycle schedule: linear warmup over the first `warmup_frac` of steps,
// cosine decay to zero afterwards.
struct OneCycleSchedule {
  double max_lr = 2.5e-4;
  long total_steps = 1;
  double warmup_frac = 0.05;

  double lr_at(long step) const {
    const long warm = std::max<long>(1, static_cast<long>(total_steps * warmup_frac));
    if (step < warm) return max_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
    const double t =
        static_cast<double>(step - warm) / std::max<long>(1, total_steps - warm);
    return max_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, t)));
  }
};

// AdamW: decoupled weight decay, element-wise adaptive moments.
template <typename T>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  explicit AdamW(ParamStore<T>& params, Options opts = {}) : params_(&params), opts_(opts) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params.tensor(i).numel(), 0.0);
      v_[i].assign(params.tensor(i).numel(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, t_);
    const double bc2 = 1.0 - std::pow(opts_.beta2, t_);
    for (size_t i = 0; i < params_->size(); ++i) {
      TensorT<T>& p = params_->tensor(i);
      if (!p.has_grad()) continue;
      const auto& g = p.grad_view();
      auto& m = m_[i];
      auto& v = v_[i];
      T* w = p.data();
      for (size_t j = 0; j < g.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * gj;
        v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * gj * gj;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        double wj = static_cast<double>(w[j]);
        wj -= lr * opts_.weight_decay * wj;
        wj -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
        w[j] = static_cast<T>(wj);
      }
    }
  }

  long steps_taken() const { return t_; }

 private:
  ParamStore<T>* params_;
  Options opts_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace ihn
