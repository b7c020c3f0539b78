#include "ihn/correlation.hpp"

#include <gtest/gtest.h>

#include "gradcheck_util.hpp"
#include "ihn/common.hpp"

using namespace ihn;
using ihn_test::random_tensor;
using Tensor64 = TensorT<double>;
using Corr64 = Correlation<double>;

namespace {

Tensor64 features_from(SplitMix64& rng, int d, int h, int w) {
  return random_tensor({d, h, w}, rng);
}

}  // namespace

TEST(CorrelationBuild, OneHotBasisGivesKroneckerVolume) {
  // 4 positions, 4 channels: feature at position i is basis vector e_i
  Tensor64 f({4, 2, 2});
  for (int i = 0; i < 4; ++i) f.data()[i * 4 + i] = 1.0;
  const Corr64 c = Corr64::build(nullptr, f, f);
  const auto& vol = c.full();
  ASSERT_EQ(vol.shape(), (std::vector<int>{2, 2, 2, 2}));
  for (int s = 0; s < 4; ++s)
    for (int t = 0; t < 4; ++t)
      EXPECT_DOUBLE_EQ(vol.data()[s * 4 + t], s == t ? 1.0 : 0.0);
}

TEST(CorrelationBuild, NegativeDotsClampToZero) {
  Tensor64 f_s = Tensor64::from({1, 1, 2}, {1.0, 1.0});
  Tensor64 f_t = Tensor64::from({1, 1, 2}, {-2.0, 3.0});
  const Corr64 c = Corr64::build(nullptr, f_s, f_t);
  // dot(f_s(x), f_t(0)) = -2 -> clamped
  EXPECT_DOUBLE_EQ(c.full().data()[0], 0.0);
  EXPECT_DOUBLE_EQ(c.full().data()[1], 3.0);
}

// Oracle: naive quadruple loop over all source/target position pairs.
TEST(CorrelationBuild, MatchesBruteForceQuadrupleLoop) {
  SplitMix64 rng(3);
  const int d = 8, h = 4, w = 4;
  Tensor64 f_s = features_from(rng, d, h, w);
  Tensor64 f_t = features_from(rng, d, h, w);
  const Corr64 c = Corr64::build(nullptr, f_s, f_t);
  for (int sy = 0; sy < h; ++sy)
    for (int sx = 0; sx < w; ++sx)
      for (int ty = 0; ty < h; ++ty)
        for (int tx = 0; tx < w; ++tx) {
          double dot = 0;
          for (int ch = 0; ch < d; ++ch)
            dot += f_s.data()[(ch * h + sy) * w + sx] * f_t.data()[(ch * h + ty) * w + tx];
          const double expect = std::max(0.0, dot);
          const double got = c.full().data()[((sy * w + sx) * h + ty) * w + tx];
          EXPECT_NEAR(got, expect, 1e-6);
        }
}

TEST(CorrelationBuild, PooledIsExactStride2Mean) {
  SplitMix64 rng(4);
  Tensor64 f_s = features_from(rng, 6, 4, 4);
  Tensor64 f_t = features_from(rng, 6, 4, 4);
  const Corr64 c = Corr64::build(nullptr, f_s, f_t);
  const auto& full = c.full();
  const auto& pooled = c.pooled();
  ASSERT_EQ(pooled.shape(), (std::vector<int>{4, 4, 2, 2}));
  for (int q = 0; q < 16; ++q)
    for (int py = 0; py < 2; ++py)
      for (int px = 0; px < 2; ++px) {
        const double a = full.data()[(q * 4 + 2 * py) * 4 + 2 * px];
        const double b = full.data()[(q * 4 + 2 * py) * 4 + 2 * px + 1];
        const double cc = full.data()[(q * 4 + 2 * py + 1) * 4 + 2 * px];
        const double dd = full.data()[(q * 4 + 2 * py + 1) * 4 + 2 * px + 1];
        EXPECT_EQ(pooled.data()[(q * 2 + py) * 2 + px], (a + b + cc + dd) * 0.25);
      }
}

TEST(CorrelationBuild, ShapeMismatchAndBudget) {
  SplitMix64 rng(5);
  Tensor64 a = features_from(rng, 4, 4, 4);
  Tensor64 b = features_from(rng, 4, 4, 5);
  EXPECT_THROW(Corr64::build(nullptr, a, b), ShapeMismatch);

  Tensor64 c1 = features_from(rng, 2, 8, 8);
  Corr64::Options opts;
  opts.max_entries = 1000;  // 8^4 = 4096 > 1000
  EXPECT_THROW(Corr64::build(nullptr, c1, c1, opts), MemoryBudgetExceeded);
}

TEST(CorrelationSample, IdentityCoordsCenterOnDiagonal) {
  SplitMix64 rng(6);
  const int h = 10, w = 10;
  Tensor64 f = features_from(rng, 8, h, w);
  const Corr64 c = Corr64::build(nullptr, f, f);
  const auto [s, sp] = c.sample(nullptr, CoordGrid::identity(h, w), 4);
  ASSERT_EQ(s.dim(0), 81);  // (2*4+1)^2
  ASSERT_EQ(sp.dim(0), 81);
  // center channel (oy=0, ox=0) picks the self-correlation diagonal
  const int center = 4 * 9 + 4;
  for (int q = 0; q < h * w; ++q) {
    const double self_corr = c.full().data()[static_cast<size_t>(q) * h * w + q];
    EXPECT_NEAR(s.data()[static_cast<size_t>(center) * h * w + q], self_corr, 1e-12);
  }
}

TEST(CorrelationSample, IntegerCoordsAreExactEntries) {
  SplitMix64 rng(7);
  const int h = 6, w = 6;
  Tensor64 f_s = features_from(rng, 4, h, w);
  Tensor64 f_t = features_from(rng, 4, h, w);
  const Corr64 c = Corr64::build(nullptr, f_s, f_t);
  CoordGrid coords = CoordGrid::identity(h, w);
  for (auto& u : coords.u) u = std::min(u + 2.0, 5.0);  // integer offsets
  const auto [s, sp] = c.sample(nullptr, coords, 2);
  const int win = 5;
  for (int q = 0; q < h * w; ++q) {
    for (int oy = -2; oy <= 2; ++oy)
      for (int ox = -2; ox <= 2; ++ox) {
        const int ch = (oy + 2) * win + (ox + 2);
        const int tu = static_cast<int>(coords.u[q]) + ox;
        const int tv = static_cast<int>(coords.v[q]) + oy;
        const double expect = (tu < 0 || tu >= w || tv < 0 || tv >= h)
                                  ? 0.0
                                  : c.full().data()[static_cast<size_t>(q) * h * w + tv * w + tu];
        EXPECT_DOUBLE_EQ(s.data()[static_cast<size_t>(ch) * h * w + q], expect);
      }
  }
}

// Oracle: manual bilinear average on a small volume.
TEST(CorrelationSample, HalfOffsetAveragesHorizontalNeighbours) {
  SplitMix64 rng(8);
  const int h = 4, w = 4;
  Tensor64 f_s = features_from(rng, 4, h, w);
  Tensor64 f_t = features_from(rng, 4, h, w);
  const Corr64 c = Corr64::build(nullptr, f_s, f_t);
  CoordGrid coords = CoordGrid::identity(h, w);
  for (auto& u : coords.u) u += 0.5;
  const auto [s, sp] = c.sample(nullptr, coords, 1);
  const int win = 3;
  for (int q = 0; q < h * w; ++q) {
    for (int oy = -1; oy <= 1; ++oy)
      for (int ox = -1; ox <= 1; ++ox) {
        const int ch = (oy + 1) * win + (ox + 1);
        const int v = q / w + oy;
        const int u_left = q % w + ox;  // coords.u = q%w + 0.5
        auto vol_at = [&](int vv, int uu) {
          return (uu < 0 || uu >= w || vv < 0 || vv >= h)
                     ? 0.0
                     : c.full().data()[static_cast<size_t>(q) * h * w + vv * w + uu];
        };
        const double expect = 0.5 * (vol_at(v, u_left) + vol_at(v, u_left + 1));
        EXPECT_NEAR(s.data()[static_cast<size_t>(ch) * h * w + q], expect, 1e-12);
      }
  }
}

TEST(CorrelationSample, SelfMatchingPeakDominates) {
  SplitMix64 rng(9);
  const int h = 12, w = 12;
  Tensor64 f = features_from(rng, 32, h, w);
  const Corr64 c = Corr64::build(nullptr, f, f);
  int peak_on_diagonal = 0;
  for (int q = 0; q < h * w; ++q) {
    const double* row = c.full().data() + static_cast<size_t>(q) * h * w;
    int best = 0;
    for (int t = 1; t < h * w; ++t)
      if (row[t] > row[best]) best = t;
    peak_on_diagonal += best == q;
  }
  EXPECT_GT(static_cast<double>(peak_on_diagonal) / (h * w), 0.95);
}

TEST(CorrelationOnDemand, MatchesEagerSlices) {
  SplitMix64 rng(10);
  const int h = 6, w = 6;
  Tensor64 f_s = features_from(rng, 8, h, w);
  Tensor64 f_t = features_from(rng, 8, h, w);
  const Corr64 eager = Corr64::build(nullptr, f_s, f_t);
  Corr64::Options opts;
  opts.on_demand = true;
  const Corr64 lazy = Corr64::build(nullptr, f_s, f_t, opts);

  CoordGrid coords = CoordGrid::identity(h, w);
  SplitMix64 jitter(11);
  for (auto& u : coords.u) u += jitter.uniform(-1.5, 1.5);
  for (auto& v : coords.v) v += jitter.uniform(-1.5, 1.5);

  const auto [es, ep] = eager.sample(nullptr, coords, 3);
  const auto [ls, lp] = lazy.sample(nullptr, coords, 3);
  ASSERT_EQ(es.shape(), ls.shape());
  ASSERT_EQ(ep.shape(), lp.shape());
  for (size_t i = 0; i < es.numel(); ++i) EXPECT_NEAR(es.data()[i], ls.data()[i], 1e-9);
  for (size_t i = 0; i < ep.numel(); ++i) EXPECT_NEAR(ep.data()[i], lp.data()[i], 1e-9);

  Tape<double> tape;
  EXPECT_THROW(Corr64::build(&tape, f_s, f_t, opts), Error);
}

// The correlation gradient flows into both feature maps; checked against
// central finite differences through build + sample.
TEST(CorrelationGrad, BuildAndSampleAgainstFiniteDifferences) {
  SplitMix64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    // positive features keep the dots clear of the ReLU kink so the central
    // difference does not straddle it
    std::vector<Tensor64> ins = {random_tensor({3, 4, 4}, rng, 0.2, 1.0),
                                 random_tensor({3, 4, 4}, rng, 0.2, 1.0)};
    CoordGrid coords = CoordGrid::identity(4, 4);
    SplitMix64 jitter(100 + trial);
    for (auto& u : coords.u) u += jitter.uniform(-0.8, 0.8) + 0.13;
    for (auto& v : coords.v) v += jitter.uniform(-0.8, 0.8) + 0.13;
    auto fn = [coords](Tape<double>* tp, std::vector<Tensor64>& in) {
      const Corr64 c = Corr64::build(tp, in[0], in[1]);
      auto [s, sp] = c.sample(tp, coords, 2);
      return ihn::add(tp, s, sp);
    };
    const auto res = ihn_test::grad_check(fn, ins, rng);
    EXPECT_LT(res.max_rel_err, 1e-4);
  }
}
