#pragma once

// Multi-resolution 3-D affine registration.
//
// Coarse-to-fine box-averaged pyramid (x4, x2, x1 at the default 3 levels),
// 12-parameter affine, adaptive-step coordinate descent probing each
// parameter with +/- step candidates. The cost is evaluated on a seeded
// uniform subsample of the fixed grid, fixed once per level, so results are
// deterministic for a given (inputs, config) pair. Costs are "lower is
// better": ssd is the mean squared intensity difference, ncc is
// 1 - normalized cross-correlation.
//
// Linear-part parameters step in dimensionless units, translations in mm at
// 10x the linear step, which keeps the two parameter groups comparably
// scaled on ~100 mm fields of view.

#include <limits>
#include <numeric>
#include <vector>

#include "darca/affine.hpp"
#include "darca/core.hpp"

namespace darca {

enum class Metric { ncc, ssd };

struct RegConfig {
  int levels = 3;
  int iterations_per_level = 100;
  Metric metric = Metric::ncc;
  double step_init = 0.1;
  double step_shrink = 0.5;
  double min_step = 1e-4;
  double sample_fraction = 0.25;
  std::uint64_t seed = 0;

  void validate() const {
    if (levels < 1 || levels > 5) throw std::invalid_argument("levels must be in [1,5]");
    if (iterations_per_level < 1)
      throw std::invalid_argument("iterations_per_level must be positive");
    if (!(step_init > 0.0)) throw std::invalid_argument("step_init must be positive");
    if (!(step_shrink > 0.0 && step_shrink < 1.0))
      throw std::invalid_argument("step_shrink must be in (0,1)");
    if (!(min_step > 0.0)) throw std::invalid_argument("min_step must be positive");
    if (!(sample_fraction > 0.0 && sample_fraction <= 1.0))
      throw std::invalid_argument("sample_fraction must be in (0,1]");
  }
};

struct RegResult {
  AffineTransform transform;  // fixed physical point -> moving physical point
  double final_metric = 0.0;
  double metric_at_identity = 0.0;
  std::vector<int> iterations_used;  // sweeps per level
};

inline double similarity(const Volume& a, const Volume& b, Metric metric) {
  if (!(a.geom == b.geom))
    throw std::invalid_argument("similarity: volumes have mismatched geometry");
  const std::size_t n = a.voxels.size();
  if (metric == Metric::ssd) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(a.voxels[i]) - b.voxels[i];
      acc += d * d;
    }
    return acc / static_cast<double>(n);
  }
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a.voxels[i];
    mb += b.voxels[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a.voxels[i] - ma;
    const double db = b.voxels[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0)
    throw std::runtime_error("similarity: constant image, ncc undefined");
  return 1.0 - sab / std::sqrt(saa * sbb);
}

// Trilinear warp of an intensity volume onto target geometry; samples the
// input at t(target voxel position).
inline Volume warp_image(const Volume& v, const AffineTransform& t,
                         const GridGeometry& target) {
  if (!t.invertible()) throw std::runtime_error("warp_image: non-invertible transform");
  target.validate();
  Volume out(target);
  std::size_t i = 0;
  for (int z = 0; z < target.dims[2]; ++z)
    for (int y = 0; y < target.dims[1]; ++y)
      for (int x = 0; x < target.dims[0]; ++x, ++i)
        out.voxels[i] = sample_trilinear(v, t.apply(target.voxel_to_physical(x, y, z)));
  return out;
}

// Nearest-neighbor warp of a label map; never introduces new labels.
inline LabelMap warp_labels(const LabelMap& m, const AffineTransform& t,
                            const GridGeometry& target) {
  if (!t.invertible()) throw std::runtime_error("warp_labels: non-invertible transform");
  target.validate();
  LabelMap out(target);
  std::size_t i = 0;
  for (int z = 0; z < target.dims[2]; ++z)
    for (int y = 0; y < target.dims[1]; ++y)
      for (int x = 0; x < target.dims[0]; ++x, ++i)
        out.voxels[i] = sample_nearest(m, t.apply(target.voxel_to_physical(x, y, z)));
  return out;
}

namespace detail {

// Box-average downsample by an integer factor; geometry follows the box
// centers. Factor 1 returns the input unchanged.
inline Volume downsample_box(const Volume& v, int factor) {
  if (factor <= 1) return v;
  GridGeometry g;
  for (int a = 0; a < 3; ++a) {
    g.dims[a] = (v.geom.dims[a] + factor - 1) / factor;
    g.spacing[a] = v.geom.spacing[a] * factor;
    g.origin[a] = v.geom.origin[a] + 0.5 * (factor - 1) * v.geom.spacing[a];
  }
  Volume out(g);
  std::size_t i = 0;
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x, ++i) {
        double acc = 0.0;
        int count = 0;
        const int x1 = std::min(v.geom.dims[0], (x + 1) * factor);
        const int y1 = std::min(v.geom.dims[1], (y + 1) * factor);
        const int z1 = std::min(v.geom.dims[2], (z + 1) * factor);
        for (int zz = z * factor; zz < z1; ++zz)
          for (int yy = y * factor; yy < y1; ++yy)
            for (int xx = x * factor; xx < x1; ++xx) {
              acc += v.at(xx, yy, zz);
              ++count;
            }
        out.voxels[i] = static_cast<float>(acc / count);
      }
  return out;
}

// Cost of a candidate transform over a fixed sample set at one pyramid
// level. Returns +inf for degenerate candidates (e.g. the warped samples
// became constant under ncc) so the optimizer simply rejects them.
class LevelCost {
 public:
  LevelCost(const Volume& fixed, const Volume& moving, Metric metric,
            double sample_fraction, std::uint64_t seed)
      : moving_(moving), metric_(metric) {
    const std::size_t n = fixed.geom.voxel_count();
    std::size_t want = static_cast<std::size_t>(
        std::llround(sample_fraction * static_cast<double>(n)));
    want = std::min(n, std::max<std::size_t>(1, want));
    std::vector<std::size_t> indices(n);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t j = i + rng.next_index(n - i);
      std::swap(indices[i], indices[j]);
    }
    indices.resize(want);
    std::sort(indices.begin(), indices.end());

    positions_.reserve(want);
    values_.reserve(want);
    const auto& g = fixed.geom;
    for (std::size_t idx : indices) {
      const int x = static_cast<int>(idx % static_cast<std::size_t>(g.dims[0]));
      const int y = static_cast<int>((idx / g.dims[0]) % static_cast<std::size_t>(g.dims[1]));
      const int z = static_cast<int>(idx / (static_cast<std::size_t>(g.dims[0]) * g.dims[1]));
      positions_.push_back(g.voxel_to_physical(x, y, z));
      values_.push_back(fixed.voxels[idx]);
    }
    double m = 0.0;
    for (double v : values_) m += v;
    fixed_mean_ = m / static_cast<double>(values_.size());
    double sq = 0.0;
    for (double v : values_) {
      const double d = v - fixed_mean_;
      sq += d * d;
    }
    fixed_sq_ = sq;
  }

  bool fixed_constant() const { return fixed_sq_ <= 0.0; }

  double evaluate(const AffineTransform& t) const {
    // Fold the physical->voxel conversion of the moving grid into the
    // candidate transform so the sample loop is division-free.
    std::array<double, 9> m;
    std::array<double, 3> d;
    const auto& g = moving_.geom;
    for (int r = 0; r < 3; ++r) {
      const double inv = 1.0 / g.spacing[r];
      for (int c = 0; c < 3; ++c) m[3 * r + c] = t.matrix[3 * r + c] * inv;
      d[r] = (t.translation[r] - g.origin[r]) * inv;
    }
    auto sample = [&](const std::array<double, 3>& p) {
      return sample_trilinear_vox(moving_,
                                  m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + d[0],
                                  m[3] * p[0] + m[4] * p[1] + m[5] * p[2] + d[1],
                                  m[6] * p[0] + m[7] * p[1] + m[8] * p[2] + d[2]);
    };

    const std::size_t n = positions_.size();
    if (metric_ == Metric::ssd) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double mv = sample(positions_[i]);
        const double diff = mv - values_[i];
        acc += diff * diff;
      }
      return acc / static_cast<double>(n);
    }
    double sm = 0.0, smm = 0.0, sfm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double mv = sample(positions_[i]);
      sm += mv;
      smm += mv * mv;
      sfm += (values_[i] - fixed_mean_) * mv;
    }
    const double mm = sm / static_cast<double>(n);
    const double mov_sq = smm - sm * mm;
    if (fixed_sq_ <= 0.0 || mov_sq <= 1e-30)
      return std::numeric_limits<double>::infinity();
    return 1.0 - sfm / std::sqrt(fixed_sq_ * mov_sq);
  }

 private:
  const Volume& moving_;
  Metric metric_;
  std::vector<std::array<double, 3>> positions_;
  std::vector<double> values_;
  double fixed_mean_ = 0.0;
  double fixed_sq_ = 0.0;
};

struct DescentOutcome {
  AffineTransform transform;
  double cost;
  int sweeps;
};

// Linear part anchored at the field-of-view center: x' = c + M (x - c) + d.
// A step in M then has zero mean displacement over the volume, so matrix
// parameters cannot absorb a translation, which keeps the coordinate descent
// out of shear/scale local minima. Parameters 0..2 are the center
// displacement d (mm), 3..11 the matrix entries.
class CenteredParams {
 public:
  CenteredParams(const AffineTransform& t, const std::array<double, 3>& center)
      : center_(center) {
    m_ = t.matrix;
    const auto moved = t.apply(center);
    for (int i = 0; i < 3; ++i) d_[i] = moved[i] - center[i];
  }

  double get(int p) const { return p < 3 ? d_[p] : m_[p - 3]; }
  void set(int p, double v) {
    if (p < 3)
      d_[p] = v;
    else
      m_[p - 3] = v;
  }

  AffineTransform to_transform() const {
    AffineTransform t;
    t.matrix = m_;
    for (int i = 0; i < 3; ++i) {
      double mc = 0.0;
      for (int j = 0; j < 3; ++j) mc += m_[3 * i + j] * center_[j];
      t.translation[i] = d_[i] + center_[i] - mc;
    }
    return t;
  }

 private:
  std::array<double, 3> center_;
  std::array<double, 9> m_{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> d_{0, 0, 0};
};

inline DescentOutcome coordinate_descent(const LevelCost& cost, const AffineTransform& t0,
                                         const std::array<double, 3>& center,
                                         const RegConfig& cfg) {
  CenteredParams params(t0, center);
  AffineTransform t = params.to_transform();
  double best = cost.evaluate(t);
  double step = cfg.step_init;
  int sweeps = 0;
  while (sweeps < cfg.iterations_per_level && step >= cfg.min_step) {
    ++sweeps;
    bool improved = false;
    for (int p = 0; p < 12; ++p) {
      const double delta = p < 3 ? step * 10.0 : step;  // translation in mm
      for (int dir : {+1, -1}) {
        CenteredParams cand = params;
        cand.set(p, params.get(p) + dir * delta);
        AffineTransform ct = cand.to_transform();
        if (!ct.invertible()) continue;
        double c = cost.evaluate(ct);
        if (c < best) {
          // Keep stepping in the accepted direction while it helps.
          do {
            best = c;
            params = cand;
            t = ct;
            cand.set(p, cand.get(p) + dir * delta);
            ct = cand.to_transform();
            if (!ct.invertible()) break;
            c = cost.evaluate(ct);
          } while (c < best);
          improved = true;
          break;
        }
      }
    }
    if (!improved) step *= cfg.step_shrink;
  }
  return {t, best, sweeps};
}

}  // namespace detail

// Registers moving onto fixed; the returned transform maps fixed physical
// space into moving physical space. Deterministic given (inputs, cfg), and
// final_metric never exceeds metric_at_identity: if optimization cannot beat
// the identity on the finest level it returns the identity.
inline RegResult register_affine(const Volume& moving, const Volume& fixed,
                                 const RegConfig& cfg) {
  cfg.validate();
  moving.validate();
  fixed.validate();

  RegResult result;
  AffineTransform t = AffineTransform::identity();
  std::array<double, 3> center;
  for (int a = 0; a < 3; ++a)
    center[a] = fixed.geom.origin[a] + 0.5 * (fixed.geom.dims[a] - 1) * fixed.geom.spacing[a];
  for (int level = 0; level < cfg.levels; ++level) {
    const int factor = 1 << (cfg.levels - 1 - level);
    const Volume f = detail::downsample_box(fixed, factor);
    const Volume m = detail::downsample_box(moving, factor);
    detail::LevelCost cost(f, m, cfg.metric, cfg.sample_fraction,
                           derive_seed(cfg.seed, static_cast<std::uint64_t>(level)));
    if (cfg.metric == Metric::ncc && cost.fixed_constant())
      throw std::runtime_error("register_affine: constant fixed image, ncc undefined");
    const double entry = cost.evaluate(t);
    if (std::isnan(entry))
      throw std::runtime_error("register_affine: non-finite cost encountered");

    // Coarse levels search at the full step, finer levels only refine what
    // the previous level found.
    RegConfig level_cfg = cfg;
    level_cfg.step_init =
        cfg.step_init * static_cast<double>(factor) / (1 << (cfg.levels - 1));
    auto outcome = detail::coordinate_descent(cost, t, center, level_cfg);
    t = outcome.transform;
    result.iterations_used.push_back(outcome.sweeps);

    if (level == cfg.levels - 1) {
      const double id_cost = cost.evaluate(AffineTransform::identity());
      if (std::isinf(entry) && std::isinf(outcome.cost) && std::isinf(id_cost))
        throw std::runtime_error("register_affine: non-finite cost encountered");
      if (!(outcome.cost <= id_cost)) {
        t = AffineTransform::identity();
        outcome.cost = id_cost;
      }
      result.final_metric = outcome.cost;
      result.metric_at_identity = id_cost;
    }
  }
  result.transform = t;
  return result;
}

}  // namespace darca
