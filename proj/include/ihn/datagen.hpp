#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ihn/common.hpp"
#include "ihn/geometry.hpp"
#include "ihn/image_io.hpp"
#include "ihn/tensor.hpp"

namespace ihn {

using Tensor32 = TensorT<float>;

// One benchmark unit: a source crop, a target view sampled through the
// ground-truth homography, the displacement that generated it, and the seed
// that reproduces it.
struct WarpPair {
  Tensor32 source;  // [1, s, s], intensities in [0, 1]
  Tensor32 target;
  CornerDisplacement d_gt;  // source corners -> target positions, image px
  uint64_t seed = 0;
  std::string variant = "static";
  ImageU8 moving_mask;  // evaluation-only; empty unless variant == moving
};

// ------------------------- procedural textures -----------------------------

// Multi-octave value noise in [0, 1]: per octave, random lattice values
// hashed from (seed, octave, node), smoothstep-interpolated, halving
// amplitude and cell size per octave. Deterministic in (seed, shape).
inline Tensor32 value_noise_texture(int h, int w, uint64_t seed, int octaves = 4,
                                    int base_cell = 16) {
  Tensor32 img({1, h, w});
  auto node_value = [&](int oct, int nx, int ny) {
    SplitMix64 g(mix_seed(seed ^ (0x517CC1B727220A95ULL * (oct + 1)),
                          (static_cast<uint64_t>(static_cast<uint32_t>(nx)) << 32) |
                              static_cast<uint32_t>(ny)));
    return g.uniform();
  };
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  double amp = 1.0, total_amp = 0.0;
  for (int o = 0; o < octaves; ++o) {
    const int cell = std::max(2, base_cell >> o);
    for (int y = 0; y < h; ++y) {
      const int ny = y / cell;
      const double ty = smooth(static_cast<double>(y % cell) / cell);
      for (int x = 0; x < w; ++x) {
        const int nx = x / cell;
        const double tx = smooth(static_cast<double>(x % cell) / cell);
        const double v00 = node_value(o, nx, ny), v10 = node_value(o, nx + 1, ny);
        const double v01 = node_value(o, nx, ny + 1), v11 = node_value(o, nx + 1, ny + 1);
        const double v = (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
        img.data()[static_cast<size_t>(y) * w + x] += static_cast<float>(amp * v);
      }
    }
    total_amp += amp;
    amp *= 0.5;
  }
  float lo = img.data()[0], hi = img.data()[0];
  for (size_t i = 0; i < img.numel(); ++i) {
    lo = std::min(lo, img.data()[i]);
    hi = std::max(hi, img.data()[i]);
  }
  const float span = std::max(1e-6f, hi - lo);
  for (size_t i = 0; i < img.numel(); ++i) img.data()[i] = (img.data()[i] - lo) / span;
  (void)total_amp;
  return img;
}

// ------------------------------ synthesis ----------------------------------

namespace detail {

// The sampled region in the base image is the inverse image of the crop
// square; all four of its corners must stay inside the base and on one side
// of the line at infinity.
inline bool sample_quad_fits(const Homography& h_inv, int size, double ox, double oy, int bh,
                             int bw) {
  const auto corners = frame_corners(FrameSize{size, size});
  double first_w = 0;
  for (int i = 0; i < 4; ++i) {
    const auto& m = h_inv.matrix();
    const double w = m(2, 0) * corners[i].x() + m(2, 1) * corners[i].y() + 1.0;
    if (std::abs(w) < Homography::kMinDenominator) return false;
    if (i == 0)
      first_w = w;
    else if (w * first_w < 0)
      return false;
    const Eigen::Vector2d p = h_inv.project(corners[i]);
    const double u = p.x() + ox, v = p.y() + oy;
    if (u < 0.5 || u > bw - 1.5 || v < 0.5 || v > bh - 1.5) return false;
  }
  return true;
}

}  // namespace detail

// Corner-perturbation protocol: crop the source at a random interior
// position, draw 8 i.i.d. offsets in [-rho, rho] (order: TL.du, TL.dv,
// TR.du, TR.dv, BL.du, BL.dv, BR.du, BR.dv), build H from the displaced
// corners, and sample the target from the base through H at the same crop.
// The target is sampled from the base, not warped from the crop, so it has
// no border artifacts.
inline WarpPair synth_static(const Tensor32& base, int size, double rho, SplitMix64& rng) {
  const int bh = base.dim(1), bw = base.dim(2);
  const int need = size + 2 * static_cast<int>(std::ceil(rho));
  if (bh < need || bw < need)
    throw ImageTooSmall("base image must be at least (size + 2*rho) per side");

  const int margin = static_cast<int>(std::ceil(rho));
  for (int attempt = 0; attempt < 10; ++attempt) {
    // The displacement is drawn once per attempt; only the crop position is
    // retried when the sampling quad does not fit, so acceptance does not
    // bias the displacement distribution.
    CornerDisplacement d;
    for (int i = 0; i < 4; ++i) {
      d.d[i].x() = rng.uniform(-rho, rho);
      d.d[i].y() = rng.uniform(-rho, rho);
    }

    Homography h;
    try {
      h = corners_to_homography(d, FrameSize{size, size});
    } catch (const DegenerateCorners&) {
      continue;
    }
    const Homography h_inv = h.inverse();

    int ox = -1, oy = -1;
    for (int placement = 0; placement < 20; ++placement) {
      const int cx =
          margin + static_cast<int>(rng.below(static_cast<uint64_t>(bw - size - 2 * margin + 1)));
      const int cy =
          margin + static_cast<int>(rng.below(static_cast<uint64_t>(bh - size - 2 * margin + 1)));
      if (rho == 0 || detail::sample_quad_fits(h_inv, size, cx, cy, bh, bw)) {
        ox = cx;
        oy = cy;
        break;
      }
    }
    if (ox < 0) continue;

    WarpPair pair;
    pair.d_gt = d;
    pair.source = Tensor32({1, size, size});
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        pair.source.data()[static_cast<size_t>(y) * size + x] =
            base.data()[static_cast<size_t>(y + oy) * bw + (x + ox)];

    if (rho == 0) {  // exact identity; skip the resampling noise of the DLT
      pair.target = pair.source.clone_values();
      return pair;
    }
    pair.target = Tensor32({1, size, size});
    const CoordGrid grid = project_grid(h_inv, CoordGrid::identity(size, size));
    for (size_t i = 0; i < grid.size(); ++i)
      pair.target.data()[i] = static_cast<float>(
          bilinear_at(base.data(), bh, bw, grid.u[i] + ox, grid.v[i] + oy, Padding::kZeros));
    return pair;
  }
  throw DegenerateCorners("synth_static: no valid perturbation after 10 attempts");
}

// Moving-objects variant: a square patch is pasted at independently drawn
// positions in the source and the target, violating the global homography
// there. The returned mask marks, in the source frame, every pixel whose
// correspondence is broken by the patch (the pasted region itself plus the
// preimage of the target-side paste). The mask is for evaluation only and
// is never fed to training.
inline WarpPair synth_moving(const Tensor32& base, const Tensor32& patch_src, int size, double rho,
                             double patch_frac, SplitMix64& rng) {
  if (patch_frac > 0.25) throw Error("synth_moving: patch larger than 25% of the frame");
  WarpPair pair = synth_static(base, size, rho, rng);
  pair.variant = "moving";

  const int p = static_cast<int>(std::lround(size * std::sqrt(patch_frac)));
  const int ph = patch_src.dim(1), pw = patch_src.dim(2);
  if (ph < p || pw < p) throw ImageTooSmall("patch source smaller than patch");

  const int cx = static_cast<int>(rng.below(static_cast<uint64_t>(pw - p + 1)));
  const int cy = static_cast<int>(rng.below(static_cast<uint64_t>(ph - p + 1)));
  const int sx = static_cast<int>(rng.below(static_cast<uint64_t>(size - p + 1)));
  const int sy = static_cast<int>(rng.below(static_cast<uint64_t>(size - p + 1)));
  const int tx = static_cast<int>(rng.below(static_cast<uint64_t>(size - p + 1)));
  const int ty = static_cast<int>(rng.below(static_cast<uint64_t>(size - p + 1)));

  pair.moving_mask.height = size;
  pair.moving_mask.width = size;
  pair.moving_mask.pixels.assign(static_cast<size_t>(size) * size, 0);
  if (p == 0) return pair;  // degenerates to synth_static

  auto paste = [&](Tensor32& img, int px, int py) {
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x)
        img.data()[static_cast<size_t>(py + y) * size + (px + x)] =
            patch_src.data()[static_cast<size_t>(cy + y) * pw + (cx + x)];
  };
  paste(pair.source, sx, sy);
  paste(pair.target, tx, ty);

  const Homography h = corners_to_homography(pair.d_gt, FrameSize{size, size});
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      bool broken = x >= sx && x < sx + p && y >= sy && y < sy + p;
      if (!broken) {
        const Eigen::Vector2d q = h.project({static_cast<double>(x), static_cast<double>(y)});
        broken = q.x() >= tx - 0.5 && q.x() <= tx + p - 0.5 && q.y() >= ty - 0.5 &&
                 q.y() <= ty + p - 0.5;
      }
      if (broken) pair.moving_mask.pixels[static_cast<size_t>(y) * size + x] = 255;
    }
  }
  return pair;
}

// Fixed photometric transform applied to the target: intensity inversion,
// then gamma 0.5, then additive Gaussian noise. Structure survives while
// raw intensity matching fails.
inline float crossmodal_transfer(float v) {
  return std::sqrt(std::max(0.0f, 1.0f - v));
}

inline WarpPair synth_crossmodal(const Tensor32& base, int size, double rho, double noise_sigma,
                                 SplitMix64& rng) {
  WarpPair pair = synth_static(base, size, rho, rng);
  pair.variant = "crossmodal";
  for (size_t i = 0; i < pair.target.numel(); ++i) {
    double v = crossmodal_transfer(pair.target.data()[i]);
    v += noise_sigma * rng.gaussian();
    pair.target.data()[i] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
  }
  return pair;
}

// ------------------------- seeded pair generation ---------------------------

struct SynthConfig {
  std::string variant = "static";  // static | moving | crossmodal
  int size = 128;
  double rho = 32.0;
  double patch_frac = 0.12;
  double noise_sigma = 0.02;
  int base_extra = 8;  // base side = size + 4*ceil(rho) + base_extra
};

// Sub-seed channels: 0 geometry draws, 1 base texture, 2 patch texture.
inline WarpPair synth_pair(const SynthConfig& cfg, uint64_t run_seed, uint64_t index) {
  const uint64_t pair_seed = mix_seed(run_seed, index);
  // Margins of 2*rho keep placement retries rare even for extreme draws.
  const int bside = cfg.size + 4 * static_cast<int>(std::ceil(cfg.rho)) + cfg.base_extra;
  const Tensor32 base = value_noise_texture(bside, bside, mix_seed(pair_seed, 1));
  SplitMix64 rng(mix_seed(pair_seed, 0));

  WarpPair pair;
  if (cfg.variant == "static") {
    pair = synth_static(base, cfg.size, cfg.rho, rng);
  } else if (cfg.variant == "moving") {
    const Tensor32 patch = value_noise_texture(cfg.size, cfg.size, mix_seed(pair_seed, 2), 4, 8);
    pair = synth_moving(base, patch, cfg.size, cfg.rho, cfg.patch_frac, rng);
  } else if (cfg.variant == "crossmodal") {
    pair = synth_crossmodal(base, cfg.size, cfg.rho, cfg.noise_sigma, rng);
  } else {
    throw Error("unknown variant: " + cfg.variant);
  }
  pair.seed = pair_seed;
  return pair;
}

// ------------------------------ archive I/O ---------------------------------
//
// An archive is a directory of PGM images plus manifest.jsonl: one JSON
// object per line with file names, the 8 displacement decimals, the seed,
// and the variant. d_gt round-trips losslessly through the decimal strings.

namespace detail {

inline std::string pair_stem(uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pair%05llu", static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace detail

class ArchiveWriter {
 public:
  explicit ArchiveWriter(const std::string& dir) : dir_(dir) {
    std::filesystem::create_directories(dir_);
    manifest_.open(dir_ + "/manifest.jsonl", std::ios::trunc);
    if (!manifest_) throw IoError("cannot create manifest in " + dir);
  }

  void add(const WarpPair& pair) {
    const std::string stem = detail::pair_stem(count_);
    write_pgm(dir_ + "/" + stem + "_s.pgm", tensor_to_image(pair.source));
    write_pgm(dir_ + "/" + stem + "_t.pgm", tensor_to_image(pair.target));
    nlohmann::json rec;
    rec["index"] = count_;
    rec["variant"] = pair.variant;
    rec["seed"] = pair.seed;
    rec["source"] = stem + "_s.pgm";
    rec["target"] = stem + "_t.pgm";
    std::vector<double> d(8);
    for (int i = 0; i < 4; ++i) {
      d[2 * i] = pair.d_gt.d[i].x();
      d[2 * i + 1] = pair.d_gt.d[i].y();
    }
    rec["d_gt"] = d;
    if (!pair.moving_mask.pixels.empty()) {
      write_pgm(dir_ + "/" + stem + "_m.pgm", pair.moving_mask);
      rec["mask"] = stem + "_m.pgm";
    }
    manifest_ << rec.dump() << "\n";
    ++count_;
  }

  uint64_t count() const { return count_; }

  void close() {
    if (manifest_.is_open()) {
      manifest_.flush();
      if (!manifest_) throw IoError("manifest write failure in " + dir_);
      manifest_.close();
    }
  }

 private:
  std::string dir_;
  std::ofstream manifest_;
  uint64_t count_ = 0;
};

struct ArchiveRecord {
  uint64_t index = 0;
  std::string variant;
  uint64_t seed = 0;
  std::string source, target, mask;
  CornerDisplacement d_gt;
};

class Archive {
 public:
  static Archive open(const std::string& dir) {
    Archive a;
    a.dir_ = dir;
    std::ifstream f(dir + "/manifest.jsonl");
    if (!f) throw MissingFile("no manifest.jsonl in " + dir);
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw CorruptManifest(dir + "/manifest.jsonl line " + std::to_string(lineno) + ": " +
                              e.what());
      }
      ArchiveRecord r;
      try {
        r.index = rec.at("index").get<uint64_t>();
        r.variant = rec.at("variant").get<std::string>();
        r.seed = rec.at("seed").get<uint64_t>();
        r.source = rec.at("source").get<std::string>();
        r.target = rec.at("target").get<std::string>();
        const auto d = rec.at("d_gt").get<std::vector<double>>();
        if (d.size() != 8) throw CorruptManifest("d_gt must hold 8 decimals");
        for (int i = 0; i < 4; ++i) r.d_gt.d[i] = Eigen::Vector2d(d[2 * i], d[2 * i + 1]);
        if (rec.contains("mask")) r.mask = rec["mask"].get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw CorruptManifest(dir + "/manifest.jsonl line " + std::to_string(lineno) + ": " +
                              e.what());
      }
      a.records_.push_back(std::move(r));
    }
    return a;
  }

  size_t size() const { return records_.size(); }
  const ArchiveRecord& record(size_t i) const { return records_.at(i); }
  const std::string& dir() const { return dir_; }

  WarpPair load(size_t i) const {
    const ArchiveRecord& r = records_.at(i);
    WarpPair pair;
    pair.source = image_to_tensor<float>(read_image(dir_ + "/" + r.source));
    pair.target = image_to_tensor<float>(read_image(dir_ + "/" + r.target));
    pair.d_gt = r.d_gt;
    pair.seed = r.seed;
    pair.variant = r.variant;
    if (!r.mask.empty()) pair.moving_mask = read_image(dir_ + "/" + r.mask);
    return pair;
  }

 private:
  std::string dir_;
  std::vector<ArchiveRecord> records_;
};

// Checksum over the manifest bytes followed by every referenced image file,
// in manifest order.
inline uint64_t archive_checksum(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.jsonl", std::ios::binary);
  if (!mf) throw MissingFile("no manifest.jsonl in " + dir);
  std::string manifest((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
  uint64_t h = fnv1a(manifest);
  const Archive a = Archive::open(dir);
  for (size_t i = 0; i < a.size(); ++i) {
    for (const std::string* name : {&a.record(i).source, &a.record(i).target, &a.record(i).mask}) {
      if (name->empty()) continue;
      std::ifstream f(dir + "/" + *name, std::ios::binary);
      if (!f) throw MissingFile(dir + "/" + *name);
      std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      h = fnv1a(bytes, h);
    }
  }
  return h;
}

}  // namespace ihn
