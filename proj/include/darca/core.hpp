#pragma once

// Dense 3-D scalar grids on axis-aligned geometry, the label-map counterpart,
// deterministic seeding utilities, and interpolated sampling in physical
// (mm) coordinates. Voxels are stored x-fastest:
// index = x + dims[0] * (y + dims[1] * z).

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace darca {

struct GridGeometry {
  std::array<int, 3> dims{0, 0, 0};          // voxels per axis
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel, > 0
  std::array<double, 3> origin{0.0, 0.0, 0.0};   // mm, center of voxel (0,0,0)

  bool operator==(const GridGeometry&) const = default;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(z));
  }

  std::array<double, 3> voxel_to_physical(double x, double y, double z) const {
    return {origin[0] + x * spacing[0], origin[1] + y * spacing[1],
            origin[2] + z * spacing[2]};
  }

  std::array<double, 3> physical_to_voxel(const std::array<double, 3>& p) const {
    return {(p[0] - origin[0]) / spacing[0], (p[1] - origin[1]) / spacing[1],
            (p[2] - origin[2]) / spacing[2]};
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] <= 0) throw std::invalid_argument("grid dims must be positive");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw std::invalid_argument("grid spacing must be positive");
      if (!std::isfinite(origin[a]))
        throw std::invalid_argument("grid origin must be finite");
    }
  }
};

struct Volume {
  GridGeometry geom;
  std::vector<float> voxels;  // x-fastest

  Volume() = default;
  Volume(const GridGeometry& g, float fill = 0.0f)
      : geom(g), voxels(g.voxel_count(), fill) {}

  float at(int x, int y, int z) const { return voxels[geom.index(x, y, z)]; }
  float& at(int x, int y, int z) { return voxels[geom.index(x, y, z)]; }

  void validate() const {
    geom.validate();
    if (voxels.size() != geom.voxel_count())
      throw std::invalid_argument("volume voxel count does not match dims");
    for (float v : voxels)
      if (!std::isfinite(v)) throw std::invalid_argument("volume contains NaN/Inf");
  }
};

struct LabelMap {
  GridGeometry geom;
  std::vector<std::uint8_t> voxels;  // 0 is background

  LabelMap() = default;
  LabelMap(const GridGeometry& g, std::uint8_t fill = 0)
      : geom(g), voxels(g.voxel_count(), fill) {}

  std::uint8_t at(int x, int y, int z) const { return voxels[geom.index(x, y, z)]; }
  std::uint8_t& at(int x, int y, int z) { return voxels[geom.index(x, y, z)]; }

  // Sorted distinct labels present in the voxel data.
  std::vector<std::uint8_t> label_set() const {
    std::set<std::uint8_t> s(voxels.begin(), voxels.end());
    return std::vector<std::uint8_t>(s.begin(), s.end());
  }

  void validate() const {
    geom.validate();
    if (voxels.size() != geom.voxel_count())
      throw std::invalid_argument("label map voxel count does not match dims");
  }
};

// ----- deterministic RNG -----
//
// splitmix64 (Steele, Lea & Flood). Chosen as the project-wide PRNG because
// the algorithm is fully specified in a few lines, so seeded runs reproduce
// across toolchains and implementations.

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double next_gaussian() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Uniform index in [0, n). Modulo bias is < n / 2^64, negligible here.
  std::size_t next_index(std::size_t n) {
    return static_cast<std::size_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

 private:
  std::uint64_t state_;
};

// Stable per-item seed derivation: mixing base with (index + 1) keeps streams
// independent so inserting an item never perturbs the others.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  SplitMix64 rng(base ^ ((index + 1) * 0x9E3779B97F4A7C15ull));
  return rng.next_u64();
}

// ----- sampling in physical coordinates -----
//
// Out-of-bounds samples contribute 0. Continuous voxel coordinates are
// snapped to the lattice when within 1e-9 of it, so lattice-aligned sampling
// (identity resample, whole-voxel translations) reproduces grid values
// exactly despite floating-point division.

namespace detail {

inline void split_coord(double c, int dim, int& i0, double& f) {
  double fl = std::floor(c);
  i0 = static_cast<int>(fl);
  f = c - fl;
  constexpr double snap = 1e-9;
  if (f < snap) {
    f = 0.0;
  } else if (f > 1.0 - snap) {
    i0 += 1;
    f = 0.0;
  }
  (void)dim;
}

}  // namespace detail

// Trilinear lookup at continuous voxel coordinates.
inline float sample_trilinear_vox(const Volume& v, double cx, double cy, double cz) {
  int x0, y0, z0;
  double fx, fy, fz;
  detail::split_coord(cx, v.geom.dims[0], x0, fx);
  detail::split_coord(cy, v.geom.dims[1], y0, fy);
  detail::split_coord(cz, v.geom.dims[2], z0, fz);

  const int dx = v.geom.dims[0], dy = v.geom.dims[1], dz = v.geom.dims[2];
  auto corner = [&](int x, int y, int z) -> double {
    if (x < 0 || x >= dx || y < 0 || y >= dy || z < 0 || z >= dz) return 0.0;
    return v.voxels[v.geom.index(x, y, z)];
  };

  const double c000 = corner(x0, y0, z0);
  const double c100 = fx > 0.0 ? corner(x0 + 1, y0, z0) : 0.0;
  const double c010 = fy > 0.0 ? corner(x0, y0 + 1, z0) : 0.0;
  const double c110 = (fx > 0.0 && fy > 0.0) ? corner(x0 + 1, y0 + 1, z0) : 0.0;
  const double c001 = fz > 0.0 ? corner(x0, y0, z0 + 1) : 0.0;
  const double c101 = (fx > 0.0 && fz > 0.0) ? corner(x0 + 1, y0, z0 + 1) : 0.0;
  const double c011 = (fy > 0.0 && fz > 0.0) ? corner(x0, y0 + 1, z0 + 1) : 0.0;
  const double c111 =
      (fx > 0.0 && fy > 0.0 && fz > 0.0) ? corner(x0 + 1, y0 + 1, z0 + 1) : 0.0;

  const double c00 = c000 * (1.0 - fx) + c100 * fx;
  const double c10 = c010 * (1.0 - fx) + c110 * fx;
  const double c01 = c001 * (1.0 - fx) + c101 * fx;
  const double c11 = c011 * (1.0 - fx) + c111 * fx;
  const double c0 = c00 * (1.0 - fy) + c10 * fy;
  const double c1 = c01 * (1.0 - fy) + c11 * fy;
  return static_cast<float>(c0 * (1.0 - fz) + c1 * fz);
}

inline float sample_trilinear(const Volume& v, const std::array<double, 3>& p) {
  const auto c = v.geom.physical_to_voxel(p);
  return sample_trilinear_vox(v, c[0], c[1], c[2]);
}

namespace detail {

inline bool nearest_index(const GridGeometry& g, const std::array<double, 3>& p,
                          std::array<int, 3>& out) {
  const auto c = g.physical_to_voxel(p);
  for (int a = 0; a < 3; ++a) {
    const long long i = std::llround(c[a]);
    if (i < 0 || i >= g.dims[a]) return false;
    out[a] = static_cast<int>(i);
  }
  return true;
}

}  // namespace detail

inline float sample_nearest(const Volume& v, const std::array<double, 3>& p) {
  std::array<int, 3> i;
  if (!detail::nearest_index(v.geom, p, i)) return 0.0f;
  return v.at(i[0], i[1], i[2]);
}

inline std::uint8_t sample_nearest(const LabelMap& m, const std::array<double, 3>& p) {
  std::array<int, 3> i;
  if (!detail::nearest_index(m.geom, p, i)) return 0;
  return m.at(i[0], i[1], i[2]);
}

// ----- bounded parallel map -----
//
// Runs fn(i) for i in [0, n) on up to `jobs` threads. Tasks must be pure or
// write only to their own slot; results are then identical to the serial
// order regardless of scheduling.

template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  if (n == 0) return;
  if (jobs <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const unsigned workers = static_cast<unsigned>(
      std::min<std::size_t>(jobs, n));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::mutex error_mx;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(error_mx);
          if (!failed.exchange(true)) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failed.load()) std::rethrow_exception(error);
}

inline unsigned default_jobs() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace darca
