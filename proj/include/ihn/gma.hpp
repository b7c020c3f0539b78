#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ihn/features.hpp"
#include "ihn/nn_ops.hpp"
#include "ihn/optim.hpp"
#include "ihn/tensor.hpp"

namespace ihn {

namespace detail {

inline int pow2_unit_count(int h, int w, const char* who) {
  if (h != w) throw NonPow2Spatial(std::string(who) + ": spatial dims must be square");
  int units = 0;
  int s = h;
  while (s > 2 && s % 2 == 0) {
    s /= 2;
    ++units;
  }
  if (s != 2) throw NonPow2Spatial(std::string(who) + ": spatial dim must be a power of two >= 4");
  return units;
}

}  // namespace detail

// Global motion aggregator: basic units (3x3 conv, group norm, ReLU,
// max-pool stride 2) applied until the map reaches 2x2, then a 1x1
// projection to the 2x2x2 residual displacement cube.
template <typename T>
class Gma {
 public:
  Gma() = default;

  Gma(int in_channels, int width, int spatial, int gn_groups, ParamStore<T>& params,
      SplitMix64& rng, const std::string& prefix)
      : spatial_(spatial) {
    const int units = detail::pow2_unit_count(spatial, spatial, "gma");
    for (int u = 0; u < units; ++u) {
      const int cin = u == 0 ? in_channels : width;
      units_.emplace_back(cin, width, 3, gn_groups, params, rng,
                          prefix + ".u" + std::to_string(u));
    }
    proj_ = detail::ConvLinear<T>(width, 2, 1, params, rng, prefix + ".proj");
  }

  int spatial() const { return spatial_; }

  TensorT<T> forward(Tape<T>* tape, TensorT<T> x) const {
    if (x.dim(1) != spatial_ || x.dim(2) != spatial_)
      throw ShapeMismatch("gma: input spatial dims differ from construction");
    for (const auto& unit : units_) x = max_pool2(tape, unit.forward(tape, x));
    return proj_.forward(tape, x);  // [2, 2, 2]
  }

 private:
  int spatial_ = 0;
  std::vector<detail::ConvBlock<T>> units_;
  detail::ConvLinear<T> proj_;
};

// Moving-objects variant. Local motion features L pass through the shared
// basic-unit stack twice: once to extract global context that a skip-
// connected decoder turns into a sigmoid inlier mask, and once more after
// the mask has reweighted L, to produce the displacement cube. Both stack
// invocations share one weight set.
template <typename T>
class GmaMov {
 public:
  GmaMov() = default;

  GmaMov(int in_channels, int width, int spatial, int gn_groups, ParamStore<T>& params,
         SplitMix64& rng, const std::string& prefix)
      : spatial_(spatial) {
    const int units = detail::pow2_unit_count(spatial, spatial, "gma_mov");
    lconv_ = detail::ConvBlock<T>(in_channels, width, 3, gn_groups, params, rng,
                                  prefix + ".lconv");
    for (int u = 0; u < units; ++u)
      stack_.emplace_back(width, width, 3, gn_groups, params, rng,
                          prefix + ".u" + std::to_string(u));
    for (int u = 0; u < units; ++u)
      decoder_.emplace_back(2 * width, width, 3, gn_groups, params, rng,
                            prefix + ".d" + std::to_string(u));
    mask_head_ = detail::ConvLinear<T>(width, 1, 1, params, rng, prefix + ".mask");
    proj_ = detail::ConvLinear<T>(width, 2, 1, params, rng, prefix + ".proj");
  }

  int spatial() const { return spatial_; }

  // Mask-head bias handle for diagnostics and the identity-mask contract.
  TensorT<T>& mask_bias() { return mask_head_.b; }

  std::pair<TensorT<T>, TensorT<T>> forward(Tape<T>* tape, TensorT<T> x) const {
    if (x.dim(1) != spatial_ || x.dim(2) != spatial_)
      throw ShapeMismatch("gma_mov: input spatial dims differ from construction");
    TensorT<T> local = lconv_.forward(tape, x);

    // encoder pass over L, keeping pre-pool activations for the skips
    std::vector<TensorT<T>> skips;
    TensorT<T> z = local;
    for (const auto& unit : stack_) {
      z = unit.forward(tape, z);
      skips.push_back(z);
      z = max_pool2(tape, z);
    }

    // decoder: nearest x2 upsampling with skip concatenation back to L's
    // resolution, then the sigmoid mask
    for (int u = static_cast<int>(decoder_.size()) - 1; u >= 0; --u) {
      z = upsample_nearest2(tape, z);
      z = concat_channels(tape, {z, skips[static_cast<size_t>(u)]});
      z = decoder_[static_cast<size_t>(u)].forward(tape, z);
    }
    TensorT<T> mask = sigmoid(tape, mask_head_.forward(tape, z));

    TensorT<T> cube = run_shared_stack(tape, mul(tape, mask, local));
    return {cube, mask};
  }

  // The displacement path alone, bypassing the mask (multiplicative
  // identity); used to pin down the shared-weights contract.
  TensorT<T> forward_unmasked(Tape<T>* tape, TensorT<T> x) const {
    return run_shared_stack(tape, lconv_.forward(tape, x));
  }

 private:
  TensorT<T> run_shared_stack(Tape<T>* tape, TensorT<T> z) const {
    for (const auto& unit : stack_) z = max_pool2(tape, unit.forward(tape, z));
    return proj_.forward(tape, z);
  }

  int spatial_ = 0;
  detail::ConvBlock<T> lconv_;
  std::vector<detail::ConvBlock<T>> stack_;
  std::vector<detail::ConvBlock<T>> decoder_;
  detail::ConvLinear<T> mask_head_;
  detail::ConvLinear<T> proj_;
};

}  // namespace ihn
