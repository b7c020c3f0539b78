#pragma once

#include <string>
#include <vector>

#include "ihn/nn_ops.hpp"
#include "ihn/optim.hpp"
#include "ihn/tensor.hpp"

namespace ihn {

struct FeatureExtractorConfig {
  int q = 2;           // pooling units; output resolution is 1/2^q
  int d_feat = 64;     // projection width (desk default; 256 for fidelity runs)
  int stem_kernel = 7;
  std::vector<int> widths = {32, 48, 64};  // stem width, then one per unit
  int gn_groups = 8;
  bool two_scale = false;  // also emit the 1/2-resolution head
};

template <typename T>
struct FeaturePyramidT {
  TensorT<T> f_quarter;  // [d_feat, H/2^q, W/2^q]
  TensorT<T> f_half;     // [d_feat, H/2, W/2]; empty unless two_scale
};

using FeaturePyramid = FeaturePyramidT<float>;

namespace detail {

// conv + group norm + ReLU with parameters registered under `prefix`.
template <typename T>
struct ConvBlock {
  TensorT<T> w, b, gamma, beta;
  int groups = 8;
  int stride = 1;

  ConvBlock() = default;
  ConvBlock(int cin, int cout, int k, int groups_, ParamStore<T>& params, SplitMix64& rng,
            const std::string& prefix, int stride_ = 1)
      : groups(groups_), stride(stride_) {
    w = params.add(prefix + ".w", kaiming_conv_init<T>({cout, cin, k, k}, rng));
    b = params.add(prefix + ".b", TensorT<T>::zeros({cout}));
    gamma = params.add(prefix + ".gn.gamma", TensorT<T>::full({cout}, T(1)));
    beta = params.add(prefix + ".gn.beta", TensorT<T>::zeros({cout}));
  }

  TensorT<T> forward(Tape<T>* tape, TensorT<T> x) const {
    return relu(tape, group_norm(tape, conv2d(tape, x, w, b, stride), groups, gamma, beta));
  }

  // conv + norm without the activation (residual trunk tail)
  TensorT<T> forward_linear(Tape<T>* tape, TensorT<T> x) const {
    return group_norm(tape, conv2d(tape, x, w, b, stride), groups, gamma, beta);
  }
};

// Plain convolution (projection heads).
template <typename T>
struct ConvLinear {
  TensorT<T> w, b;

  ConvLinear() = default;
  ConvLinear(int cin, int cout, int k, ParamStore<T>& params, SplitMix64& rng,
             const std::string& prefix) {
    w = params.add(prefix + ".w", kaiming_conv_init<T>({cout, cin, k, k}, rng));
    b = params.add(prefix + ".b", TensorT<T>::zeros({cout}));
  }

  TensorT<T> forward(Tape<T>* tape, TensorT<T> x) const { return conv2d(tape, x, w, b); }
};

// conv-GN-ReLU-conv-GN with identity (or 1x1-projected) skip, final ReLU.
template <typename T>
struct ResidualBlock {
  ConvBlock<T> c1;
  ConvBlock<T> c2;
  ConvLinear<T> skip;  // only when cin != cout
  bool projected = false;

  ResidualBlock() = default;
  ResidualBlock(int cin, int cout, int groups, ParamStore<T>& params, SplitMix64& rng,
                const std::string& prefix)
      : c1(cin, cout, 3, groups, params, rng, prefix + ".c1"),
        c2(cout, cout, 3, groups, params, rng, prefix + ".c2") {
    if (cin != cout) {
      skip = ConvLinear<T>(cin, cout, 1, params, rng, prefix + ".skip");
      projected = true;
    }
  }

  TensorT<T> forward(Tape<T>* tape, TensorT<T> x) const {
    TensorT<T> trunk = c2.forward_linear(tape, c1.forward(tape, x));
    TensorT<T> shortcut = projected ? skip.forward(tape, x) : x;
    return relu(tape, add(tape, trunk, shortcut));
  }
};

}  // namespace detail

// Siamese convolutional extractor: 7x7 stem, q units of
// (max-pool stride 2, two residual blocks), then a linear 1x1 projection.
// For the two-scale pyramid the 1/2-resolution branch reuses the first
// unit and applies its own projection head.
template <typename T>
class FeatureExtractor {
 public:
  FeatureExtractor() = default;

  FeatureExtractor(const FeatureExtractorConfig& cfg, ParamStore<T>& params, SplitMix64& rng,
                   const std::string& prefix = "fnet")
      : cfg_(cfg) {
    if (cfg.q < 1 || cfg.d_feat < 1) throw Error("feature extractor: q and d_feat must be >= 1");
    if (static_cast<int>(cfg.widths.size()) != cfg.q + 1)
      throw Error("feature extractor: widths must list stem plus one width per unit");
    stem_ = detail::ConvBlock<T>(1, cfg.widths[0], cfg.stem_kernel, cfg.gn_groups, params, rng,
                                 prefix + ".stem");
    for (int u = 0; u < cfg.q; ++u) {
      const int cin = cfg.widths[u], cout = cfg.widths[u + 1];
      const std::string up = prefix + ".u" + std::to_string(u + 1);
      blocks_.emplace_back(cin, cout, cfg.gn_groups, params, rng, up + ".b1");
      blocks_.emplace_back(cout, cout, cfg.gn_groups, params, rng, up + ".b2");
    }
    proj_ = detail::ConvLinear<T>(cfg.widths[cfg.q], cfg.d_feat, 1, params, rng, prefix + ".proj");
    if (cfg.two_scale)
      proj_half_ =
          detail::ConvLinear<T>(cfg.widths[1], cfg.d_feat, 1, params, rng, prefix + ".proj_half");
  }

  const FeatureExtractorConfig& config() const { return cfg_; }

  FeaturePyramidT<T> extract(Tape<T>* tape, TensorT<T> img) const {
    if (img.ndim() != 3 || img.dim(0) != 1) throw ShapeMismatch("extract: expects [1,H,W]");
    const int mod = 1 << cfg_.q;
    if (img.dim(1) % mod != 0 || img.dim(2) % mod != 0)
      throw ShapeMismatch("extract: spatial dims must be multiples of 2^q");

    // inputs arrive in [0,1]; the network sees [-1,1]
    TensorT<T> x = affine_scalar(tape, img, T(2), T(-1));
    x = stem_.forward(tape, x);

    FeaturePyramidT<T> pyr;
    for (int u = 0; u < cfg_.q; ++u) {
      x = max_pool2(tape, x);
      x = blocks_[2 * u].forward(tape, x);
      x = blocks_[2 * u + 1].forward(tape, x);
      if (u == 0 && cfg_.two_scale) pyr.f_half = proj_half_.forward(tape, x);
    }
    pyr.f_quarter = proj_.forward(tape, x);
    return pyr;
  }

 private:
  FeatureExtractorConfig cfg_;
  detail::ConvBlock<T> stem_;
  std::vector<detail::ResidualBlock<T>> blocks_;
  detail::ConvLinear<T> proj_;
  detail::ConvLinear<T> proj_half_;
};

}  // namespace ihn
