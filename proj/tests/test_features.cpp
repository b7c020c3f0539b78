#include "ihn/features.hpp"

#include <gtest/gtest.h>

#include "ihn/common.hpp"
#include "ihn/datagen.hpp"

using namespace ihn;

namespace {

FeatureExtractor<float> make_extractor(ParamStore<float>& params, bool two_scale,
                                        uint64_t seed = 1) {
  FeatureExtractorConfig cfg;
  cfg.two_scale = two_scale;
  SplitMix64 rng(seed);
  return FeatureExtractor<float>(cfg, params, rng);
}

}  // namespace

TEST(FeatureExtractor, QuarterShapeAt128) {
  ParamStore<float> params;
  const auto fnet = make_extractor(params, false);
  const Tensor32 img = value_noise_texture(128, 128, 2);
  const auto pyr = fnet.extract(nullptr, img);
  EXPECT_EQ(pyr.f_quarter.shape(), (std::vector<int>{64, 32, 32}));
  EXPECT_EQ(pyr.f_half.numel(), 0u);
}

TEST(FeatureExtractor, TwoScaleShapesAt64) {
  ParamStore<float> params;
  const auto fnet = make_extractor(params, true);
  const Tensor32 img = value_noise_texture(64, 64, 3);
  const auto pyr = fnet.extract(nullptr, img);
  EXPECT_EQ(pyr.f_quarter.shape(), (std::vector<int>{64, 16, 16}));
  EXPECT_EQ(pyr.f_half.shape(), (std::vector<int>{64, 32, 32}));
}

TEST(FeatureExtractor, SiameseSharedFunction) {
  ParamStore<float> params;
  const auto fnet = make_extractor(params, false);
  const Tensor32 img = value_noise_texture(64, 64, 4);
  const auto a = fnet.extract(nullptr, img);
  const auto b = fnet.extract(nullptr, img);
  for (size_t i = 0; i < a.f_quarter.numel(); ++i)
    EXPECT_EQ(a.f_quarter.data()[i], b.f_quarter.data()[i]);
}

TEST(FeatureExtractor, FiniteOutputsOnNormalizedInputs) {
  ParamStore<float> params;
  const auto fnet = make_extractor(params, true);
  for (uint64_t s = 0; s < 3; ++s) {
    const Tensor32 img = value_noise_texture(64, 64, 100 + s);
    const auto pyr = fnet.extract(nullptr, img);
    EXPECT_TRUE(pyr.f_quarter.all_finite());
    EXPECT_TRUE(pyr.f_half.all_finite());
  }
}

TEST(FeatureExtractor, BadInputShapesThrow) {
  ParamStore<float> params;
  const auto fnet = make_extractor(params, false);
  EXPECT_THROW(fnet.extract(nullptr, Tensor32({1, 62, 64})), ShapeMismatch);
  EXPECT_THROW(fnet.extract(nullptr, Tensor32({3, 64, 64})), ShapeMismatch);
}

// Receptive-field sanity. The group normalization inside every block makes
// each output cell weakly coupled to all pixels (the group statistics are
// image-wide), so bit-identity outside the conv/pool receptive field is not
// attainable with this architecture. What is guaranteed is locality of
// information flow: a pixel flip changes its containing cell by orders of
// magnitude more than a cell outside the conv receptive field, whose
// residual coupling goes only through the normalization means.
TEST(FeatureExtractor, ReceptiveFieldDominatesNormalizationCoupling) {
  ParamStore<float> params;
  const auto fnet = make_extractor(params, false);
  Tensor32 img = value_noise_texture(128, 128, 5);
  const auto before = fnet.extract(nullptr, img);

  img.data()[127 * 128 + 127] = 1.0f - img.data()[127 * 128 + 127];
  const auto after = fnet.extract(nullptr, img);

  const int hw = 32 * 32;
  double far_cell = 0, near_cell = 0;
  for (int c = 0; c < 64; ++c) {
    far_cell = std::max(far_cell,
                        std::abs(static_cast<double>(before.f_quarter.data()[c * hw]) -
                                 after.f_quarter.data()[c * hw]));
    near_cell = std::max(near_cell,
                         std::abs(static_cast<double>(before.f_quarter.data()[c * hw + hw - 1]) -
                                  after.f_quarter.data()[c * hw + hw - 1]));
  }
  EXPECT_GT(near_cell, 1e-3);
  EXPECT_LT(far_cell, 5e-3);
  EXPECT_LT(far_cell, 0.01 * near_cell);
}
