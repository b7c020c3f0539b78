#pragma once

#include <cmath>
#include <cstdint>
#include <new>
#include <vector>
#include <stdexcept>
#include <string>

namespace ihn {

// ---------------------------------------------------------------------------
// Error hierarchy. Every checked failure in the library throws one of these.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define IHN_DEFINE_ERROR(name)                              \
  class name : public Error {                               \
   public:                                                  \
    explicit name(const std::string& msg) : Error(msg) {}   \
  }

IHN_DEFINE_ERROR(DegenerateCorners);
IHN_DEFINE_ERROR(ProjectiveBlowup);
IHN_DEFINE_ERROR(ShapeMismatch);
IHN_DEFINE_ERROR(RankDeficientHessian);
IHN_DEFINE_ERROR(Diverged);
IHN_DEFINE_ERROR(NoGradPath);
IHN_DEFINE_ERROR(NonFiniteLoss);
IHN_DEFINE_ERROR(MemoryBudgetExceeded);
IHN_DEFINE_ERROR(NonPow2Spatial);
IHN_DEFINE_ERROR(ImageTooSmall);
IHN_DEFINE_ERROR(CorruptManifest);
IHN_DEFINE_ERROR(MissingFile);
IHN_DEFINE_ERROR(IoError);

#undef IHN_DEFINE_ERROR

// ---------------------------------------------------------------------------
// SplitMix64 RNG. Integer-state generator with a documented bit-exact
// algorithm so that seeded runs reproduce across platforms and languages.
//
//   state' = state + 0x9E3779B97F4A7C15
//   z = state'; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   output = z ^ (z >> 31)
//
// uniform() maps the top 53 bits to a double in [0, 1).
// ---------------------------------------------------------------------------

class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed = 0) : state_(seed) {}

  uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n)
  uint64_t below(uint64_t n) { return n ? next() % n : 0; }

  // Standard normal via Box-Muller on two uniforms.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

// Stateless mix of two 64-bit words; used to derive per-item seeds from a
// run seed and an index without correlations between neighbours.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  SplitMix64 g(a ^ (b * 0x9E3779B97F4A7C15ULL) ^ 0xD1B54A32D192ED03ULL);
  g.next();
  return g.next();
}

// 64-byte-aligned allocator for numeric buffers. Fixing the alignment of
// every tensor buffer keeps vectorized loop peeling identical across
// allocations, which in turn keeps floating-point results bit-identical
// between runs.
template <typename T, size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}

  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, size_t) { ::operator delete(p, std::align_val_t(Align)); }

  template <typename U>
  bool operator==(const AlignedAllocator<U, Align>&) const {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAllocator<U, Align>&) const {
    return false;
  }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAllocator<T, 64>>;

// FNV-1a over a byte range; used for archive checksums and config
// fingerprints.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xCBF29CE484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace ihn
