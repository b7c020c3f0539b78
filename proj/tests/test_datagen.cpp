#include "ihn/datagen.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "ihn/common.hpp"

using namespace ihn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

// Kolmogorov-Smirnov p-value against U(lo, hi), asymptotic series with the
// Stephens small-sample correction.
double ks_uniform_pvalue(std::vector<double> xs, double lo, double hi) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double cdf = (xs[i] - lo) / (hi - lo);
    d = std::max(d, std::abs(cdf - static_cast<double>(i + 1) / n));
    d = std::max(d, std::abs(cdf - static_cast<double>(i) / n));
  }
  const double lambda = d * (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n));
  double p = 0;
  for (int k = 1; k <= 100; ++k)
    p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::min(1.0, std::max(0.0, p));
}

}  // namespace

TEST(ValueNoise, DeterministicAndBounded) {
  const Tensor32 a = value_noise_texture(48, 64, 99);
  const Tensor32 b = value_noise_texture(48, 64, 99);
  const Tensor32 c = value_noise_texture(48, 64, 100);
  ASSERT_EQ(a.numel(), b.numel());
  for (size_t i = 0; i < a.numel(); ++i) {
    EXPECT_EQ(a.data()[i], b.data()[i]);
    EXPECT_GE(a.data()[i], 0.0f);
    EXPECT_LE(a.data()[i], 1.0f);
  }
  size_t differing = 0;
  for (size_t i = 0; i < a.numel(); ++i) differing += a.data()[i] != c.data()[i];
  EXPECT_GT(differing, a.numel() / 2);
}

TEST(SynthStatic, ZeroRhoGivesIdenticalPair) {
  const Tensor32 base = value_noise_texture(96, 96, 5);
  SplitMix64 rng(42);
  const WarpPair pair = synth_static(base, 64, 0.0, rng);
  EXPECT_EQ(pair.d_gt.max_abs(), 0.0);
  for (size_t i = 0; i < pair.source.numel(); ++i)
    EXPECT_EQ(pair.source.data()[i], pair.target.data()[i]);
}

TEST(SynthStatic, SeedReproducesBitIdenticalPair) {
  SynthConfig cfg;
  cfg.size = 64;
  cfg.rho = 16;
  const WarpPair a = synth_pair(cfg, 7, 3);
  const WarpPair b = synth_pair(cfg, 7, 3);
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_EQ((a.d_gt - b.d_gt).max_abs(), 0.0);
  for (size_t i = 0; i < a.source.numel(); ++i) {
    EXPECT_EQ(a.source.data()[i], b.source.data()[i]);
    EXPECT_EQ(a.target.data()[i], b.target.data()[i]);
  }
}

TEST(SynthStatic, OffsetsStayInRange) {
  SynthConfig cfg;
  cfg.size = 64;
  cfg.rho = 16;
  for (uint64_t i = 0; i < 50; ++i) {
    const WarpPair pair = synth_pair(cfg, 11, i);
    EXPECT_LE(pair.d_gt.max_abs(), 16.0);
  }
}

TEST(SynthStatic, TooSmallBaseThrows) {
  const Tensor32 base = value_noise_texture(80, 80, 1);
  SplitMix64 rng(1);
  EXPECT_THROW(synth_static(base, 64, 16.0, rng), ImageTooSmall);
}

// Ground-truth consistency: warping the source by H_gt^-1 reproduces the
// target's sampling geometry on the interior.
TEST(SynthStatic, WarpReproducesTargetInterior) {
  SynthConfig cfg;
  cfg.size = 64;
  cfg.rho = 12;
  for (uint64_t idx = 0; idx < 5; ++idx) {
    const WarpPair pair = synth_pair(cfg, 21, idx);
    const Homography h = corners_to_homography(pair.d_gt, FrameSize{cfg.size, cfg.size});
    const Homography h_inv = h.inverse();
    const CoordGrid grid = project_grid(h_inv, CoordGrid::identity(cfg.size, cfg.size));
    Tensor32 recon({1, cfg.size, cfg.size});
    warp_bilinear_planes(pair.source.data(), 1, cfg.size, cfg.size, h_inv, Padding::kZeros,
                         recon.data());
    size_t compared = 0;
    for (int y = 0; y < cfg.size; ++y) {
      for (int x = 0; x < cfg.size; ++x) {
        const size_t i = static_cast<size_t>(y) * cfg.size + x;
        // only compare where every bilinear tap lands inside the crop
        if (grid.u[i] < 1 || grid.u[i] > cfg.size - 2 || grid.v[i] < 1 ||
            grid.v[i] > cfg.size - 2)
          continue;
        EXPECT_NEAR(recon.data()[i], pair.target.data()[i], 1e-4);
        ++compared;
      }
    }
    EXPECT_GT(compared, static_cast<size_t>(cfg.size * cfg.size) / 4);
  }
}

// Independent oracle: exhaustive template matching on a grid of interior
// integer anchors, a trimmed least-squares projective fit (written here,
// sharing no code with the library's normalized DLT), and two
// warp-compensated subpixel refinement rounds. The fitted transform is
// then evaluated at the 4 corners.
namespace {

Eigen::Vector2d oracle_project(const Eigen::Matrix3d& m, const Eigen::Vector2d& p) {
  return (m * p.homogeneous()).hnormalized();
}

Eigen::Matrix3d oracle_fit_trimmed(std::vector<Eigen::Vector2d> src,
                                   std::vector<Eigen::Vector2d> dst, int rounds) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  for (int rd = 0; rd < rounds; ++rd) {
    const int n = static_cast<int>(src.size());
    Eigen::MatrixXd a(2 * n, 8);
    Eigen::VectorXd rhs(2 * n);
    for (int i = 0; i < n; ++i) {
      const double x = src[i].x(), y = src[i].y(), u = dst[i].x(), v = dst[i].y();
      a.row(2 * i) << x, y, 1, 0, 0, 0, -x * u, -y * u;
      a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -x * v, -y * v;
      rhs(2 * i) = u;
      rhs(2 * i + 1) = v;
    }
    const Eigen::Matrix<double, 8, 1> h = a.colPivHouseholderQr().solve(rhs);
    m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
    if (rd + 1 == rounds) break;
    std::vector<std::pair<double, int>> res(n);
    for (int i = 0; i < n; ++i) res[i] = {(oracle_project(m, src[i]) - dst[i]).norm(), i};
    std::sort(res.begin(), res.end());
    const int keep = std::max(6, static_cast<int>(n * 0.7));
    std::vector<Eigen::Vector2d> s2, d2;
    for (int i = 0; i < keep && i < n; ++i) {
      s2.push_back(src[res[i].second]);
      d2.push_back(dst[res[i].second]);
    }
    src = std::move(s2);
    dst = std::move(d2);
  }
  return m;
}

Eigen::Matrix3d oracle_estimate_homography(const Tensor32& i_s, const Tensor32& i_t, double rho) {
  const int size = i_s.dim(1);
  const int half = 6;
  std::vector<Eigen::Vector2d> anchors;
  for (int gy = 0; gy < 5; ++gy)
    for (int gx = 0; gx < 5; ++gx) anchors.push_back({14.0 + gx * 9.0, 14.0 + gy * 9.0});

  // integer exhaustive search per anchor
  std::vector<Eigen::Vector2d> asrc, adst;
  const int r = static_cast<int>(rho) + 3;
  for (const auto& anchor : anchors) {
    double best = 1e30;
    Eigen::Vector2d arg(0, 0);
    bool valid = false;
    for (int dv = -r; dv <= r; ++dv) {
      for (int du = -r; du <= r; ++du) {
        double ssd = 0;
        int used = 0;
        for (int py = -half; py <= half; ++py) {
          for (int px = -half; px <= half; ++px) {
            const int sx = static_cast<int>(anchor.x()) + px;
            const int sy = static_cast<int>(anchor.y()) + py;
            const int tu = sx + du, tv = sy + dv;
            if (tu < 0 || tu > size - 1 || tv < 0 || tv > size - 1) continue;
            const double diff = i_t.data()[static_cast<size_t>(tv) * size + tu] -
                                i_s.data()[static_cast<size_t>(sy) * size + sx];
            ssd += diff * diff;
            ++used;
          }
        }
        const int full = (2 * half + 1) * (2 * half + 1);
        if (used < static_cast<int>(0.8 * full)) continue;
        const double sc = ssd / used;
        if (sc < best) {
          best = sc;
          arg = Eigen::Vector2d(du, dv);
          valid = true;
        }
      }
    }
    if (valid) {
      asrc.push_back(anchor);
      adst.push_back(anchor + arg);
    }
  }
  Eigen::Matrix3d fit = oracle_fit_trimmed(asrc, adst, 3);

  // warp-compensated subpixel rounds: under the current fit the residual is
  // locally a pure translation, so exhaustive search is unbiased
  for (int round = 0; round < 2; ++round) {
    const double range = round == 0 ? 2.0 : 0.5;
    const double step = round == 0 ? 0.25 : 0.0625;
    std::vector<Eigen::Vector2d> s2, d2;
    for (size_t a = 0; a < asrc.size(); ++a) {
      double best = 1e30;
      Eigen::Vector2d arg(0, 0);
      bool any = false;
      for (double dv = -range; dv <= range + 1e-9; dv += step) {
        for (double du = -range; du <= range + 1e-9; du += step) {
          double ssd = 0;
          bool ok = true;
          for (int py = -half; py <= half && ok; ++py) {
            for (int px = -half; px <= half; ++px) {
              const double sx = asrc[a].x() + px, sy = asrc[a].y() + py;
              const Eigen::Vector2d tp = oracle_project(fit, {sx, sy});
              const double tu = tp.x() + du, tv = tp.y() + dv;
              if (tu < 0 || tu > size - 1 || tv < 0 || tv > size - 1) {
                ok = false;
                break;
              }
              const double tval = bilinear_at(i_t.data(), size, size, tu, tv, Padding::kZeros);
              const double sval =
                  i_s.data()[static_cast<size_t>(sy) * size + static_cast<size_t>(sx)];
              ssd += (tval - sval) * (tval - sval);
            }
          }
          if (ok && ssd < best) {
            best = ssd;
            arg = Eigen::Vector2d(du, dv);
            any = true;
          }
        }
      }
      if (any) {
        s2.push_back(asrc[a]);
        d2.push_back(oracle_project(fit, asrc[a]) + arg);
      }
    }
    if (s2.size() >= 8) fit = oracle_fit_trimmed(s2, d2, 3);
  }
  return fit;
}

}  // namespace

TEST(SynthStatic, CornerSearchOracleRecoversDisplacement) {
  const int size = 64;
  const double rho = 8.0;
  const auto corners = frame_corners(FrameSize{size, size});
  int total = 0, good = 0;
  for (uint64_t idx = 0; idx < 250; ++idx) {
    // sharp fine-grained texture so matching is well conditioned
    const int bside = size + 4 * static_cast<int>(rho) + 8;
    const Tensor32 base = value_noise_texture(bside, bside, mix_seed(1234, idx), 4, 8);
    SplitMix64 rng(mix_seed(4321, idx));
    const WarpPair pair = synth_static(base, size, rho, rng);

    const Eigen::Matrix3d fit = oracle_estimate_homography(pair.source, pair.target, rho);
    for (int c = 0; c < 4; ++c) {
      const Eigen::Vector2d est = oracle_project(fit, corners[c]) - corners[c];
      const double err = (est - pair.d_gt.d[c]).norm();
      ++total;
      good += err <= 0.5;
    }
  }
  EXPECT_EQ(total, 1000);
  EXPECT_GT(static_cast<double>(good) / total, 0.99)
      << "corner search matched " << good << "/" << total;
}

TEST(Uniformity, CornerOffsetsPassKsTest) {
  // the generator stream feeding the corner draws
  SplitMix64 rng(2026);
  std::vector<double> draws(100000);
  for (double& d : draws) d = rng.uniform(-16.0, 16.0);
  EXPECT_GT(ks_uniform_pvalue(std::move(draws), -16.0, 16.0), 0.01);

  // end-to-end: offsets surviving the synthesis path
  const Tensor32 base = value_noise_texture(136, 136, 3);
  SplitMix64 grng(77);
  std::vector<double> from_pairs;
  from_pairs.reserve(16000);
  for (int i = 0; i < 2000; ++i) {
    const WarpPair pair = synth_static(base, 64, 16.0, grng);
    for (int c = 0; c < 4; ++c) {
      from_pairs.push_back(pair.d_gt.d[c].x());
      from_pairs.push_back(pair.d_gt.d[c].y());
    }
  }
  EXPECT_GT(ks_uniform_pvalue(std::move(from_pairs), -16.0, 16.0), 0.01);
}

TEST(SynthMoving, ZeroPatchDegeneratesToStatic) {
  const Tensor32 base = value_noise_texture(112, 112, 9);
  const Tensor32 patch = value_noise_texture(64, 64, 10);
  SplitMix64 rng1(5), rng2(5);
  const WarpPair moving = synth_moving(base, patch, 64, 8.0, 0.0, rng1);
  const WarpPair plain = synth_static(base, 64, 8.0, rng2);
  for (size_t i = 0; i < moving.source.numel(); ++i) {
    EXPECT_EQ(moving.source.data()[i], plain.source.data()[i]);
    EXPECT_EQ(moving.target.data()[i], plain.target.data()[i]);
  }
  for (uint8_t m : moving.moving_mask.pixels) EXPECT_EQ(m, 0);
}

TEST(SynthMoving, PatchAreaMatchesRequestedFraction) {
  const Tensor32 base = value_noise_texture(112, 112, 11);
  const Tensor32 patch = value_noise_texture(64, 64, 12);
  SplitMix64 rng(6);
  const double frac = 0.12;
  const int size = 64;
  const WarpPair pair = synth_moving(base, patch, size, 8.0, frac, rng);
  size_t masked = 0;
  for (uint8_t m : pair.moving_mask.pixels) masked += m > 0;
  // mask covers source patch plus the preimage of the target patch
  const double side = std::lround(size * std::sqrt(frac));
  EXPECT_NEAR(side / size, std::sqrt(frac), 1.0 / size);
  EXPECT_GE(masked, static_cast<size_t>(side * side));
  EXPECT_LE(masked, static_cast<size_t>(2.5 * side * side));
}

TEST(SynthMoving, OversizedPatchThrows) {
  const Tensor32 base = value_noise_texture(112, 112, 13);
  const Tensor32 patch = value_noise_texture(64, 64, 14);
  SplitMix64 rng(7);
  EXPECT_THROW(synth_moving(base, patch, 64, 8.0, 0.3, rng), Error);
}

TEST(Crossmodal, TransferFormula) {
  // 0.8 inverted to 0.2, then gamma 0.5: sqrt(0.2) ~= 0.4472, before noise
  EXPECT_NEAR(crossmodal_transfer(0.8f), 0.44721f, 1e-4);
  EXPECT_NEAR(crossmodal_transfer(1.0f), 0.0f, 1e-6);
  EXPECT_NEAR(crossmodal_transfer(0.0f), 1.0f, 1e-6);
}

TEST(Crossmodal, TargetIsTransformedSourceGeometry) {
  SynthConfig cfg;
  cfg.variant = "crossmodal";
  cfg.size = 64;
  cfg.rho = 0;
  cfg.noise_sigma = 0.0;
  const WarpPair pair = synth_pair(cfg, 15, 0);
  for (size_t i = 0; i < pair.source.numel(); ++i)
    EXPECT_NEAR(pair.target.data()[i], crossmodal_transfer(pair.source.data()[i]), 1e-6);
}

TEST(ArchiveIo, RoundTripPreservesRecords) {
  const fs::path dir = temp_dir("ihn_archive_rt");
  SynthConfig cfg;
  cfg.size = 32;
  cfg.rho = 6;
  std::vector<WarpPair> pairs;
  {
    ArchiveWriter writer(dir.string());
    for (uint64_t i = 0; i < 100; ++i) {
      pairs.push_back(synth_pair(cfg, 31, i));
      writer.add(pairs.back());
    }
    writer.close();
  }

  // manifest line count == pair count
  std::ifstream mf(dir / "manifest.jsonl");
  size_t lines = 0;
  for (std::string line; std::getline(mf, line);) lines += !line.empty();
  EXPECT_EQ(lines, 100u);

  const Archive archive = Archive::open(dir.string());
  ASSERT_EQ(archive.size(), 100u);
  for (size_t i = 0; i < archive.size(); ++i) {
    // d_gt decimals round-trip losslessly
    for (int c = 0; c < 4; ++c) {
      EXPECT_EQ(archive.record(i).d_gt.d[c].x(), pairs[i].d_gt.d[c].x());
      EXPECT_EQ(archive.record(i).d_gt.d[c].y(), pairs[i].d_gt.d[c].y());
    }
    EXPECT_EQ(archive.record(i).seed, pairs[i].seed);
  }
  fs::remove_all(dir);
}

TEST(ArchiveIo, ShuffledReadPreservesAssociation) {
  const fs::path dir = temp_dir("ihn_archive_shuffle");
  SynthConfig cfg;
  cfg.size = 32;
  cfg.rho = 6;
  std::vector<uint64_t> source_sums(20);
  {
    ArchiveWriter writer(dir.string());
    for (uint64_t i = 0; i < 20; ++i) {
      const WarpPair pair = synth_pair(cfg, 77, i);
      const ImageU8 img = tensor_to_image(pair.source);
      source_sums[i] = fnv1a(img.pixels.data(), img.pixels.size());
      writer.add(pair);
    }
    writer.close();
  }
  const Archive archive = Archive::open(dir.string());
  std::vector<size_t> order(archive.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = (i * 7 + 3) % order.size();
  for (size_t i : order) {
    const WarpPair pair = archive.load(i);
    const ImageU8 img = tensor_to_image(pair.source);
    EXPECT_EQ(fnv1a(img.pixels.data(), img.pixels.size()), source_sums[i]);
    EXPECT_EQ(pair.d_gt.d[0].x(), archive.record(i).d_gt.d[0].x());
  }
  fs::remove_all(dir);
}

TEST(ArchiveIo, CorruptManifestAndMissingFiles) {
  const fs::path dir = temp_dir("ihn_archive_bad");
  SynthConfig cfg;
  cfg.size = 32;
  cfg.rho = 4;
  {
    ArchiveWriter writer(dir.string());
    writer.add(synth_pair(cfg, 1, 0));
    writer.close();
  }
  {
    std::ofstream mf(dir / "manifest.jsonl", std::ios::app);
    mf << "{not json at all\n";
  }
  EXPECT_THROW(Archive::open(dir.string()), CorruptManifest);

  // restore a clean manifest, then remove an image
  {
    const Archive good = [&] {
      std::ofstream mf(dir / "manifest.jsonl", std::ios::trunc);
      nlohmann::json rec;
      rec["index"] = 0;
      rec["variant"] = "static";
      rec["seed"] = 1;
      rec["source"] = "pair00000_s.pgm";
      rec["target"] = "pair00000_t.pgm";
      rec["d_gt"] = std::vector<double>(8, 0.0);
      mf << rec.dump() << "\n";
      mf.close();
      return Archive::open(dir.string());
    }();
    fs::remove(dir / "pair00000_t.pgm");
    EXPECT_THROW(good.load(0), MissingFile);
  }
  fs::remove_all(dir);
}

TEST(ArchiveIo, ChecksumIsDeterministic) {
  const fs::path dir1 = temp_dir("ihn_archive_ck1");
  const fs::path dir2 = temp_dir("ihn_archive_ck2");
  SynthConfig cfg;
  cfg.size = 32;
  cfg.rho = 6;
  for (const fs::path& dir : {dir1, dir2}) {
    ArchiveWriter writer(dir.string());
    for (uint64_t i = 0; i < 10; ++i) writer.add(synth_pair(cfg, 5, i));
    writer.close();
  }
  EXPECT_EQ(archive_checksum(dir1.string()), archive_checksum(dir2.string()));
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST(ImageIo, PgmAndPngRoundTrip) {
  const fs::path dir = temp_dir("ihn_imageio");
  fs::create_directories(dir);
  ImageU8 img;
  img.height = 13;
  img.width = 17;
  img.pixels.resize(13 * 17);
  SplitMix64 rng(33);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.below(256));

  write_pgm((dir / "a.pgm").string(), img);
  const ImageU8 back_pgm = read_pgm((dir / "a.pgm").string());
  ASSERT_EQ(back_pgm.width, img.width);
  ASSERT_EQ(back_pgm.height, img.height);
  EXPECT_EQ(back_pgm.pixels, img.pixels);

  write_png((dir / "a.png").string(), img);
  const ImageU8 back_png = read_png((dir / "a.png").string());
  ASSERT_EQ(back_png.width, img.width);
  ASSERT_EQ(back_png.height, img.height);
  EXPECT_EQ(back_png.pixels, img.pixels);
  fs::remove_all(dir);
}
