#include <catch2/catch_amalgamated.hpp>

#include "darca/phantom.hpp"
#include "darca/registration.hpp"

using namespace darca;

namespace {

Volume default_phantom(std::uint64_t seed = 1) {
  auto [source, target] = presets();
  (void)target;
  return generate_subject(source, seed).first;
}

// Mean displacement difference between two transforms over the grid, in
// voxel units.
double mean_voxel_displacement(const AffineTransform& a, const AffineTransform& b,
                               const GridGeometry& g) {
  double acc = 0.0;
  std::size_t n = 0;
  for (int z = 0; z < g.dims[2]; z += 2)
    for (int y = 0; y < g.dims[1]; y += 2)
      for (int x = 0; x < g.dims[0]; x += 2, ++n) {
        const auto p = g.voxel_to_physical(x, y, z);
        const auto pa = a.apply(p);
        const auto pb = b.apply(p);
        double d = 0.0;
        for (int i = 0; i < 3; ++i) {
          const double dv = (pa[i] - pb[i]) / g.spacing[i];
          d += dv * dv;
        }
        acc += std::sqrt(d);
      }
  return acc / static_cast<double>(n);
}

}  // namespace

TEST_CASE("ssd of a volume with itself is 0") {
  const Volume v = default_phantom();
  REQUIRE(similarity(v, v, Metric::ssd) == 0.0);
}

TEST_CASE("ncc of a volume with itself is 0") {
  const Volume v = default_phantom();
  REQUIRE_THAT(similarity(v, v, Metric::ncc), Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("ncc is invariant under positive affine intensity change") {
  const Volume v = default_phantom();
  Volume w = v;
  for (auto& x : w.voxels) x = 2.0f * x + 5.0f;
  REQUIRE_THAT(similarity(v, w, Metric::ncc), Catch::Matchers::WithinAbs(0.0, 1e-6));
  REQUIRE_THAT(similarity(w, v, Metric::ncc), Catch::Matchers::WithinAbs(0.0, 1e-6));
}

TEST_CASE("ncc of a constant image is a degenerate-input error") {
  const Volume v = default_phantom();
  Volume c(v.geom, 3.0f);
  REQUIRE_THROWS(similarity(v, c, Metric::ncc));
}

TEST_CASE("similarity requires identical geometry") {
  const Volume v = default_phantom();
  Volume w(GridGeometry{{8, 8, 8}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}});
  REQUIRE_THROWS(similarity(v, w, Metric::ssd));
}

TEST_CASE("warp with identity transform is the identity") {
  const Volume v = default_phantom();
  const Volume w = warp_image(v, AffineTransform::identity(), v.geom);
  REQUIRE(w.voxels == v.voxels);
}

TEST_CASE("warp by exactly one voxel spacing shifts the grid") {
  const Volume v = default_phantom();
  AffineTransform t;
  t.translation = {v.geom.spacing[0], 0.0, 0.0};  // sample at x+1
  const Volume w = warp_image(v, t, v.geom);
  for (int z = 0; z < v.geom.dims[2]; ++z)
    for (int y = 0; y < v.geom.dims[1]; ++y)
      for (int x = 0; x + 1 < v.geom.dims[0]; ++x)
        REQUIRE(w.at(x, y, z) == v.at(x + 1, y, z));
}

TEST_CASE("warp then inverse-warp has small interior error") {
  // A band-limited test image: trilinear interpolation error is what is
  // being measured, so the field must be smooth.
  Volume v(GridGeometry{{48, 48, 48}, {2.0, 2.0, 2.0}, {0.0, 0.0, 0.0}});
  for (int z = 0; z < 48; ++z)
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x)
        v.at(x, y, z) = static_cast<float>(std::sin(0.20 * x) * std::cos(0.15 * y) +
                                           0.5 * std::sin(0.11 * z + 0.3));
  AffineTransform t;
  t.matrix = {1.05, 0.02, 0.0, -0.02, 0.97, 0.01, 0.0, 0.01, 1.03};
  t.translation = {3.0, -2.0, 1.5};
  const Volume warped = warp_image(v, t, v.geom);
  const Volume back = warp_image(warped, t.inverse(), v.geom);

  float lo = v.voxels[0], hi = v.voxels[0];
  for (float x : v.voxels) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  double err = 0.0;
  std::size_t n = 0;
  const auto& d = v.geom.dims;
  for (int z = d[2] / 4; z < 3 * d[2] / 4; ++z)
    for (int y = d[1] / 4; y < 3 * d[1] / 4; ++y)
      for (int x = d[0] / 4; x < 3 * d[0] / 4; ++x, ++n)
        err += std::abs(back.at(x, y, z) - v.at(x, y, z));
  err /= static_cast<double>(n);
  REQUIRE(err < 0.02 * (hi - lo));
}

TEST_CASE("warp_labels identity and label containment") {
  auto [source, target] = presets();
  (void)target;
  const auto [image, labels] = generate_subject(source, 5);
  (void)image;
  const LabelMap same = warp_labels(labels, AffineTransform::identity(), labels.geom);
  REQUIRE(same.voxels == labels.voxels);

  AffineTransform t;
  t.matrix = {1.1, 0.05, 0.0, 0.0, 0.93, 0.02, -0.03, 0.0, 1.02};
  t.translation = {-4.0, 2.0, 6.0};
  const LabelMap warped = warp_labels(labels, t, labels.geom);
  const auto in_set = labels.label_set();
  for (auto l : warped.label_set())
    REQUIRE(std::find(in_set.begin(), in_set.end(), l) != in_set.end());
}

TEST_CASE("warp_labels moves a lattice-aligned cube rigidly") {
  GridGeometry g{{16, 16, 16}, {2.0, 2.0, 2.0}, {0.0, 0.0, 0.0}};
  LabelMap m(g);
  for (int z = 6; z < 10; ++z)
    for (int y = 6; y < 10; ++y)
      for (int x = 6; x < 10; ++x) m.at(x, y, z) = 1;
  AffineTransform t;
  t.translation = {2.0 * g.spacing[0], -1.0 * g.spacing[1], 0.0};
  const LabelMap w = warp_labels(m, t, g);
  std::size_t count = 0;
  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        if (w.at(x, y, z) == 1) {
          ++count;
          REQUIRE(m.at(x + 2, y - 1, z) == 1);
        }
  REQUIRE(count == 64);
}

TEST_CASE("registering a volume to itself keeps the identity optimum") {
  const Volume v = default_phantom();
  RegConfig cfg;
  cfg.seed = 3;
  const RegResult r = register_affine(v, v, cfg);
  REQUIRE(r.final_metric <= r.metric_at_identity);
  REQUIRE(mean_voxel_displacement(r.transform, AffineTransform::identity(), v.geom) < 0.5);
}

TEST_CASE("registration is deterministic given the seed") {
  const Volume fixed = default_phantom(2);
  AffineTransform t;
  t.translation = {4.0, -2.0, 3.0};
  const Volume moving = warp_image(fixed, t, fixed.geom);
  RegConfig cfg;
  cfg.seed = 77;
  const RegResult a = register_affine(moving, fixed, cfg);
  const RegResult b = register_affine(moving, fixed, cfg);
  REQUIRE(a.transform == b.transform);
  REQUIRE(a.final_metric == b.final_metric);
  REQUIRE(a.metric_at_identity == b.metric_at_identity);
  REQUIRE(a.iterations_used == b.iterations_used);
}

TEST_CASE("recovers a pure translation of (4,-3,2) voxels") {
  const Volume fixed = default_phantom(4);
  // moving(x) = fixed(gt^-1(x)), so registering (moving, fixed) must recover
  // gt itself: moving(gt(x)) = fixed(x).
  AffineTransform gt;
  gt.translation = {4.0 * fixed.geom.spacing[0], -3.0 * fixed.geom.spacing[1],
                    2.0 * fixed.geom.spacing[2]};
  const Volume moving = warp_image(fixed, gt.inverse(), fixed.geom);
  RegConfig cfg;
  cfg.seed = 9;
  const RegResult r = register_affine(moving, fixed, cfg);
  for (int a = 0; a < 3; ++a) {
    const double err_vox =
        std::abs(r.transform.translation[a] - gt.translation[a]) / fixed.geom.spacing[a];
    REQUIRE(err_vox < 1.0);
  }
}

TEST_CASE("recovers an isotropic 1.1 scale within 0.02") {
  const Volume fixed = default_phantom(6);
  // The moving image shows everything 1.1x larger, i.e. it samples the fixed
  // image through the inverse scale about the volume center. Registration
  // must then recover the forward 1.1 scale.
  const double s = 1.1;
  std::array<double, 3> center;
  for (int a = 0; a < 3; ++a)
    center[a] = fixed.geom.origin[a] + 0.5 * (fixed.geom.dims[a] - 1) * fixed.geom.spacing[a];
  AffineTransform gt;
  gt.matrix = {s, 0, 0, 0, s, 0, 0, 0, s};
  for (int a = 0; a < 3; ++a) gt.translation[a] = (1.0 - s) * center[a];
  const Volume moving = warp_image(fixed, gt.inverse(), fixed.geom);
  RegConfig cfg;
  cfg.seed = 13;
  const RegResult r = register_affine(moving, fixed, cfg);
  for (int a = 0; a < 3; ++a)
    REQUIRE_THAT(r.transform.matrix[4 * a], Catch::Matchers::WithinAbs(s, 0.02));
}

TEST_CASE("monotone descent invariant holds across seeds") {
  const Volume fixed = default_phantom(8);
  AffineTransform gt;
  gt.matrix = {1.02, 0.03, 0.0, -0.01, 0.98, 0.0, 0.0, 0.02, 1.01};
  gt.translation = {5.0, 3.0, -4.0};
  const Volume moving = warp_image(fixed, gt, fixed.geom);
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    RegConfig cfg;
    cfg.seed = seed;
    const RegResult r = register_affine(moving, fixed, cfg);
    REQUIRE(r.final_metric <= r.metric_at_identity);
    REQUIRE(r.iterations_used.size() == 3);
  }
}

TEST_CASE("transform serialization round trips") {
  AffineTransform t;
  t.matrix = {1.05, -0.02, 0.003, 0.01, 0.97, 0.0, -0.004, 0.02, 1.11};
  t.translation = {3.25, -7.5, 0.125};
  const AffineTransform back = AffineTransform::from_line(t.to_line());
  REQUIRE(back == t);
  REQUIRE_THROWS(AffineTransform::from_line("1 2 3"));
}

TEST_CASE("warp rejects a non-invertible transform") {
  const Volume v = default_phantom();
  AffineTransform t;
  t.matrix = {1, 0, 0, 0, 1, 0, 1, 0, 0};  // singular
  REQUIRE_THROWS(warp_image(v, t, v.geom));
}
