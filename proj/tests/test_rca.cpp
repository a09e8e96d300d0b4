#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "darca/phantom.hpp"
#include "darca/rca.hpp"

using namespace darca;
namespace fs = std::filesystem;

namespace {

// Small, quick phantoms for registration-heavy tests.
DomainParams small_params() {
  DomainParams p;
  p.dims = {24, 24, 24};
  p.spacing = {2.0, 2.0, 2.0};
  p.organ_count = 2;
  p.intensity_means = {0.0, 3.0, 5.0};
  p.intensity_stds = {0.2, 0.2, 0.2};
  p.class_mean_jitter = {0.0, 0.0, 0.0};
  p.noise_std = 0.05;
  p.jitter = {1.0, 0.95, 1.05};
  return p;
}

RegConfig quick_reg(std::uint64_t seed = 1) {
  RegConfig cfg;
  cfg.seed = seed;
  return cfg;
}

struct Fixture {
  std::vector<Reference> references;
  std::vector<std::pair<SubjectRecord, Volume>> subjects;  // with images
  std::vector<LabelMap> gts;
  fs::path dir;

  Fixture() {
    dir = fs::temp_directory_path() / "darca_test_rca";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto params = small_params();
    for (int i = 0; i < 3; ++i) {
      char id[16];
      std::snprintf(id, sizeof(id), "ref%d", i);
      auto [img, lab] = generate_subject(params, derive_seed(100, i));
      references.push_back({id, std::move(img), std::move(lab)});
    }
    for (int i = 0; i < 3; ++i) {
      char id[16];
      std::snprintf(id, sizeof(id), "sub%d", i);
      auto [img, lab] = generate_subject(params, derive_seed(200, i));
      SubjectRecord rec;
      rec.id = id;
      rec.domain = Domain::target;
      rec.image_path = dir / (std::string(id) + "_img.vol");
      write_volume(img, rec.image_path);
      subjects.emplace_back(rec, std::move(img));
      gts.push_back(std::move(lab));
    }
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("self-reference with true labels predicts dice 1.0") {
  auto& f = fixture();
  const std::vector<Reference> self = {{"self", f.subjects[0].second, f.gts[0]}};
  const auto est = predict_quality("sub0", f.subjects[0].second, f.gts[0], self, 1,
                                   quick_reg());
  REQUIRE(est.predicted_dsc == 1.0);
  REQUIRE(est.per_reference.size() == 1);
  REQUIRE_FALSE(est.per_reference[0].undefined);
}

TEST_CASE("empty prediction scores 0 against non-empty references") {
  auto& f = fixture();
  const LabelMap empty(f.subjects[0].second.geom);
  const auto est =
      predict_quality("sub0", f.subjects[0].second, empty, f.references, 1, quick_reg());
  REQUIRE(est.predicted_dsc == 0.0);
}

TEST_CASE("undefined reference dice is flagged and scored 0") {
  auto& f = fixture();
  // Label 7 exists nowhere: empty-vs-empty against every reference.
  const LabelMap empty(f.subjects[0].second.geom);
  const auto est =
      predict_quality("sub0", f.subjects[0].second, empty, f.references, 7, quick_reg());
  REQUIRE(est.predicted_dsc == 0.0);
  for (const auto& r : est.per_reference) REQUIRE(r.undefined);
}

TEST_CASE("predicted dsc is the max over references and grows monotonically") {
  auto& f = fixture();
  const LabelMap degraded = degrade_labels(f.gts[0], 1, 0.4, 9);
  std::vector<Reference> two(f.references.begin(), f.references.begin() + 2);
  const auto est2 =
      predict_quality("sub0", f.subjects[0].second, degraded, two, 1, quick_reg());
  const auto est3 = predict_quality("sub0", f.subjects[0].second, degraded, f.references,
                                    1, quick_reg());
  double max2 = 0.0;
  for (const auto& r : est2.per_reference) max2 = std::max(max2, r.dsc);
  REQUIRE(est2.predicted_dsc == max2);
  REQUIRE(est3.predicted_dsc >= est2.predicted_dsc);
  REQUIRE(est3.predicted_dsc >= 0.0);
  REQUIRE(est3.predicted_dsc <= 1.0);
}

TEST_CASE("lightly degraded labels predict higher than heavily degraded ones") {
  auto& f = fixture();
  const LabelMap light = degrade_labels(f.gts[1], 1, 0.1, 4);
  const LabelMap heavy = degrade_labels(f.gts[1], 1, 1.0, 4);
  const auto el = predict_quality("sub1", f.subjects[1].second, light, f.references, 1,
                                  quick_reg());
  const auto eh = predict_quality("sub1", f.subjects[1].second, heavy, f.references, 1,
                                  quick_reg());
  REQUIRE(el.predicted_dsc > eh.predicted_dsc);
}

TEST_CASE("predict_quality is deterministic given the seed") {
  auto& f = fixture();
  const LabelMap degraded = degrade_labels(f.gts[2], 1, 0.5, 17);
  const auto a = predict_quality("sub2", f.subjects[2].second, degraded, f.references, 1,
                                 quick_reg(42));
  const auto b = predict_quality("sub2", f.subjects[2].second, degraded, f.references, 1,
                                 quick_reg(42));
  REQUIRE(a.predicted_dsc == b.predicted_dsc);
  for (std::size_t i = 0; i < a.per_reference.size(); ++i)
    REQUIRE(a.per_reference[i].dsc == b.per_reference[i].dsc);
}

TEST_CASE("empty reference list is rejected") {
  auto& f = fixture();
  REQUIRE_THROWS(
      predict_quality("sub0", f.subjects[0].second, f.gts[0], {}, 1, quick_reg()));
}

TEST_CASE("batch of one equals predict_quality") {
  auto& f = fixture();
  const std::vector<std::pair<SubjectRecord, LabelMap>> outputs = {
      {f.subjects[0].first, f.gts[0]}};
  const auto batch = predict_cohort(outputs, f.references, 1, quick_reg());
  REQUIRE(batch.failures.empty());
  REQUIRE(batch.estimates.size() == 1);
  const auto single = predict_quality("sub0", f.subjects[0].second, f.gts[0],
                                      f.references, 1, quick_reg());
  REQUIRE(batch.estimates[0].predicted_dsc == single.predicted_dsc);
}

TEST_CASE("permuting the batch permutes the estimates") {
  auto& f = fixture();
  std::vector<std::pair<SubjectRecord, LabelMap>> fwd, rev;
  for (int i = 0; i < 3; ++i) fwd.emplace_back(f.subjects[i].first, f.gts[i]);
  for (int i = 2; i >= 0; --i) rev.emplace_back(f.subjects[i].first, f.gts[i]);
  const auto a = predict_cohort(fwd, f.references, 1, quick_reg(), nullptr, 2);
  const auto b = predict_cohort(rev, f.references, 1, quick_reg(), nullptr, 2);
  REQUIRE(a.estimates.size() == 3);
  REQUIRE(b.estimates.size() == 3);
  for (int i = 0; i < 3; ++i) {
    REQUIRE(a.estimates[i].subject_id == b.estimates[2 - i].subject_id);
    REQUIRE(a.estimates[i].predicted_dsc == b.estimates[2 - i].predicted_dsc);
  }
}

TEST_CASE("a corrupt image yields n-1 estimates and one recorded failure") {
  auto& f = fixture();
  std::vector<std::pair<SubjectRecord, LabelMap>> outputs;
  for (int i = 0; i < 3; ++i) outputs.emplace_back(f.subjects[i].first, f.gts[i]);
  outputs[1].first.image_path = f.dir / "missing.vol";
  const auto batch = predict_cohort(outputs, f.references, 1, quick_reg());
  REQUIRE(batch.estimates.size() == 2);
  REQUIRE(batch.failures.size() == 1);
  REQUIRE(batch.failures[0].subject_id == "sub1");
}

TEST_CASE("transform cache reproduces uncached results") {
  auto& f = fixture();
  const LabelMap degraded = degrade_labels(f.gts[0], 1, 0.3, 5);
  TransformCache cache;
  const auto warm = predict_quality("sub0", f.subjects[0].second, degraded, f.references,
                                    1, quick_reg(), &cache);
  const auto cached = predict_quality("sub0", f.subjects[0].second, degraded, f.references,
                                      1, quick_reg(), &cache);
  const auto plain = predict_quality("sub0", f.subjects[0].second, degraded, f.references,
                                     1, quick_reg());
  REQUIRE(warm.predicted_dsc == plain.predicted_dsc);
  REQUIRE(cached.predicted_dsc == plain.predicted_dsc);
}

namespace {

// Organ-1 mask of exactly `size` voxels starting at linear index `start`.
LabelMap mask_with(const GridGeometry& g, int start, int size) {
  LabelMap m(g);
  for (int i = start; i < start + size; ++i) m.voxels[i] = 1;
  return m;
}

}  // namespace

TEST_CASE("evaluate_predictions on exact arithmetic pairs") {
  GridGeometry g{{16, 16, 16}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
  // Subject a: |gt| = |out| = 10, overlap 3  -> dice 0.3
  // Subject b: |gt| = |out| = 10, overlap 9  -> dice 0.9
  std::vector<std::pair<std::string, LabelMap>> gt;
  std::vector<std::pair<SubjectRecord, LabelMap>> outputs;
  SubjectRecord ra, rb;
  ra.id = "a";
  rb.id = "b";
  gt.emplace_back("a", mask_with(g, 0, 10));
  outputs.emplace_back(ra, mask_with(g, 7, 10));  // overlap 3
  gt.emplace_back("b", mask_with(g, 100, 10));
  outputs.emplace_back(rb, mask_with(g, 101, 10));  // overlap 9

  QualityEstimate ea, eb;
  ea.subject_id = "a";
  ea.predicted_dsc = 0.2;
  ea.per_reference = {{"r", 0.2, false}};
  eb.subject_id = "b";
  eb.predicted_dsc = 0.8;
  eb.per_reference = {{"r", 0.8, false}};

  const auto report = evaluate_predictions({ea, eb}, gt, outputs, 1);
  REQUIRE_THAT(report.pearson_r, Catch::Matchers::WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(report.mae, Catch::Matchers::WithinAbs(0.1, 1e-12));
  REQUIRE(report.pairs.size() == 2);
  REQUIRE(report.pairs[0].real_dsc == 0.3);
  REQUIRE(report.pairs[1].real_dsc == 0.9);
}

TEST_CASE("mean bias field matches mean predicted minus mean real") {
  GridGeometry g{{16, 16, 16}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
  // Real dice 0.539 and 0.739 via masks of 1000 voxels with overlaps 539/739;
  // predicted chosen so the means come out 0.497 vs 0.639, bias -0.142.
  std::vector<std::pair<std::string, LabelMap>> gt;
  std::vector<std::pair<SubjectRecord, LabelMap>> outputs;
  SubjectRecord ra, rb;
  ra.id = "a";
  rb.id = "b";
  gt.emplace_back("a", mask_with(g, 0, 1000));
  outputs.emplace_back(ra, mask_with(g, 1000 - 539, 1000));
  gt.emplace_back("b", mask_with(g, 2000, 1000));
  outputs.emplace_back(rb, mask_with(g, 3000 - 739, 1000));

  QualityEstimate ea, eb;
  ea.subject_id = "a";
  ea.predicted_dsc = 0.397;
  ea.per_reference = {{"r", 0.397, false}};
  eb.subject_id = "b";
  eb.predicted_dsc = 0.597;
  eb.per_reference = {{"r", 0.597, false}};
  const auto report = evaluate_predictions({ea, eb}, gt, outputs, 1);
  REQUIRE_THAT(report.mean_predicted, Catch::Matchers::WithinAbs(0.497, 1e-12));
  REQUIRE_THAT(report.mean_real, Catch::Matchers::WithinAbs(0.639, 1e-12));
  REQUIRE_THAT(report.mean_bias, Catch::Matchers::WithinAbs(-0.142, 1e-12));
}

TEST_CASE("missing ground truth is an error") {
  GridGeometry g{{8, 8, 8}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
  SubjectRecord ra;
  ra.id = "a";
  QualityEstimate ea;
  ea.subject_id = "a";
  ea.predicted_dsc = 0.5;
  ea.per_reference = {{"r", 0.5, false}};
  REQUIRE_THROWS_WITH(
      evaluate_predictions({ea}, {}, {{ra, LabelMap(g)}}, 1),
      Catch::Matchers::ContainsSubstring("missing ground truth"));
}

TEST_CASE("estimate and eval csv serialization") {
  QualityEstimate e;
  e.subject_id = "s1";
  e.predicted_dsc = 0.75;
  e.per_reference = {{"r1", 0.5, false}, {"r2", 0.75, false}};
  const std::string csv = estimates_to_csv({e});
  REQUIRE(csv == "subject_id,predicted_dsc,best_reference_id\ns1,0.750000,r2\n");

  PredictionEvalReport rep;
  rep.pearson_r = 0.875;
  rep.mae = 0.125;
  rep.pairs = {{"s1", 0.75, 0.8}};
  const std::string eval_csv = eval_report_to_csv(rep);
  REQUIRE_THAT(eval_csv, Catch::Matchers::ContainsSubstring("s1,0.750000,0.800000\n"));
  REQUIRE_THAT(eval_csv, Catch::Matchers::ContainsSubstring("r=0.875000 mae=0.125000\n"));
}

TEST_CASE("band stratification counts every pair once") {
  GridGeometry g{{16, 16, 16}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
  std::vector<std::pair<std::string, LabelMap>> gt;
  std::vector<std::pair<SubjectRecord, LabelMap>> outputs;
  std::vector<QualityEstimate> estimates;
  const int overlaps[4] = {200, 650, 700, 950};  // dice 0.2, 0.65, 0.7, 0.95
  for (int i = 0; i < 4; ++i) {
    SubjectRecord r;
    r.id = "s" + std::to_string(i);
    gt.emplace_back(r.id, mask_with(g, 0, 1000));
    outputs.emplace_back(r, mask_with(g, 1000 - overlaps[i], 1000));
    QualityEstimate e;
    e.subject_id = r.id;
    e.predicted_dsc = 0.1 + 0.2 * i;
    e.per_reference = {{"r", e.predicted_dsc, false}};
    estimates.push_back(e);
  }
  const auto report = evaluate_predictions(estimates, gt, outputs, 1);
  REQUIRE(report.bands.size() == 3);
  std::size_t total = 0;
  for (const auto& b : report.bands) total += b.count;
  REQUIRE(total == 4);
  REQUIRE(report.bands[0].count == 1);  // 0.2
  REQUIRE(report.bands[1].count == 2);  // 0.65, 0.7
  REQUIRE(report.bands[2].count == 1);  // 0.95
}
