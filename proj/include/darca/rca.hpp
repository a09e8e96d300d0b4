#pragma once

// Reverse classification accuracy: predict a segmentation's Dice without
// target ground truth by registering the test image to labeled reference
// images, warping the predicted segmentation along, and scoring it against
// each reference's manual labels. The per-subject prediction is the maximum
// score over references.
//
// Registration direction: the test image is the moving image and each
// reference is fixed, so the returned transform maps reference space into
// test space and the predicted labels are resampled straight onto the
// reference grid for comparison against the reference's manual labels.

#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "darca/cohort.hpp"
#include "darca/core.hpp"
#include "darca/metrics.hpp"
#include "darca/registration.hpp"
#include "darca/volume_io.hpp"

namespace darca {

struct Reference {
  std::string id;
  Volume image;
  LabelMap labels;
};

struct ReferenceScore {
  std::string reference_id;
  double dsc = 0.0;
  bool undefined = false;  // empty-vs-empty Dice, scored as 0
};

struct QualityEstimate {
  std::string subject_id;
  double predicted_dsc = 0.0;  // max over per_reference
  std::vector<ReferenceScore> per_reference;
  int label = 0;

  const std::string& best_reference() const {
    const ReferenceScore* best = &per_reference.front();
    for (const auto& r : per_reference)
      if (r.dsc > best->dsc) best = &r;
    return best->reference_id;
  }
};

struct PredictionFailure {
  std::string subject_id;
  std::string message;
};

struct CohortPrediction {
  std::vector<QualityEstimate> estimates;  // input order, failures skipped
  std::vector<PredictionFailure> failures;
};

struct BandAccuracy {
  double lo = 0.0, hi = 1.0;
  std::size_t count = 0;
  double mae = 0.0;
};

struct PredictionEvalReport {
  double pearson_r = 0.0;
  double mae = 0.0;
  double mean_predicted = 0.0;
  double mean_real = 0.0;
  double mean_bias = 0.0;  // mean_predicted - mean_real
  struct Pair {
    std::string subject_id;
    double predicted_dsc;
    double real_dsc;
  };
  std::vector<Pair> pairs;
  // Accuracy stratified by real-Dice band; prediction is known to be weaker
  // in the middle band, so make that observable.
  std::vector<BandAccuracy> bands;
};

// Registrations depend only on (test image, reference image, config), not on
// the segmentation under evaluation, so repeated RCA passes over the same
// cohort can share them. Keyed by (subject id, reference id).
class TransformCache {
 public:
  std::optional<AffineTransform> find(const std::string& subject,
                                      const std::string& reference) const {
    std::lock_guard<std::mutex> lk(mx_);
    const auto it = map_.find(key(subject, reference));
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  void store(const std::string& subject, const std::string& reference,
             const AffineTransform& t) {
    std::lock_guard<std::mutex> lk(mx_);
    map_.emplace(key(subject, reference), t);
  }

 private:
  static std::string key(const std::string& s, const std::string& r) {
    return s + "\x1f" + r;
  }
  mutable std::mutex mx_;
  std::map<std::string, AffineTransform> map_;
};

inline QualityEstimate predict_quality(const std::string& subject_id,
                                       const Volume& test_image,
                                       const LabelMap& predicted_seg,
                                       const std::vector<Reference>& references,
                                       int label, const RegConfig& reg_cfg,
                                       TransformCache* cache = nullptr) {
  if (references.empty())
    throw std::invalid_argument("predict_quality: empty reference list");
  if (!(predicted_seg.geom == test_image.geom))
    throw std::invalid_argument("predict_quality: segmentation geometry mismatch");

  QualityEstimate est;
  est.subject_id = subject_id;
  est.label = label;
  for (const auto& ref : references) {
    if (!(ref.labels.geom == ref.image.geom))
      throw std::invalid_argument("predict_quality: reference '" + ref.id +
                                  "' image/label geometry mismatch");
    AffineTransform t;
    const auto cached = cache ? cache->find(subject_id, ref.id) : std::nullopt;
    if (cached) {
      t = *cached;
    } else {
      try {
        t = register_affine(test_image, ref.image, reg_cfg).transform;
      } catch (const std::exception& e) {
        throw std::runtime_error("registration to reference '" + ref.id +
                                 "' failed: " + e.what());
      }
      if (cache) cache->store(subject_id, ref.id, t);
    }
    const LabelMap warped = warp_labels(predicted_seg, t, ref.labels.geom);
    const DiceScore s = dice(warped, ref.labels, label);
    ReferenceScore rs;
    rs.reference_id = ref.id;
    rs.undefined = !s.defined();
    rs.dsc = s.defined() ? *s.value : 0.0;
    est.per_reference.push_back(rs);
  }
  est.predicted_dsc = 0.0;
  for (const auto& r : est.per_reference)
    est.predicted_dsc = std::max(est.predicted_dsc, r.dsc);
  return est;
}

// One estimate per subject, input order preserved; individual failures are
// recorded and the batch continues. Images are loaded from each record's
// image path.
inline CohortPrediction predict_cohort(
    const std::vector<std::pair<SubjectRecord, LabelMap>>& segmenter_outputs,
    const std::vector<Reference>& references, int label, const RegConfig& reg_cfg,
    TransformCache* cache = nullptr, unsigned jobs = 1) {
  if (segmenter_outputs.empty())
    throw std::invalid_argument("predict_cohort: empty input");
  if (references.empty())
    throw std::invalid_argument("predict_cohort: empty reference list");

  const std::size_t n = segmenter_outputs.size();
  std::vector<std::optional<QualityEstimate>> slots(n);
  std::vector<std::optional<PredictionFailure>> errors(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const auto& [record, seg] = segmenter_outputs[i];
    try {
      const Volume image = read_volume(record.image_path);
      slots[i] = predict_quality(record.id, image, seg, references, label, reg_cfg, cache);
    } catch (const std::exception& e) {
      errors[i] = PredictionFailure{record.id, e.what()};
    }
  });

  CohortPrediction out;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) out.estimates.push_back(std::move(*slots[i]));
    if (errors[i]) out.failures.push_back(std::move(*errors[i]));
  }
  return out;
}

// Scores predictions against ground truth. Real Dice is computed in each
// subject's native geometry; an undefined real Dice is scored 0 under the
// same policy as the predictions.
inline PredictionEvalReport evaluate_predictions(
    const std::vector<QualityEstimate>& estimates,
    const std::vector<std::pair<std::string, LabelMap>>& ground_truth,
    const std::vector<std::pair<SubjectRecord, LabelMap>>& segmenter_outputs, int label) {
  auto find_gt = [&](const std::string& id) -> const LabelMap& {
    for (const auto& [gid, lm] : ground_truth)
      if (gid == id) return lm;
    throw std::runtime_error("evaluate_predictions: missing ground truth for '" + id + "'");
  };
  auto find_output = [&](const std::string& id) -> const LabelMap& {
    for (const auto& [rec, lm] : segmenter_outputs)
      if (rec.id == id) return lm;
    throw std::runtime_error("evaluate_predictions: missing segmenter output for '" + id +
                             "'");
  };

  PredictionEvalReport report;
  std::vector<double> predicted, real;
  for (const auto& est : estimates) {
    const DiceScore s = dice(find_output(est.subject_id), find_gt(est.subject_id), label);
    const double real_dsc = s.defined() ? *s.value : 0.0;
    report.pairs.push_back({est.subject_id, est.predicted_dsc, real_dsc});
    predicted.push_back(est.predicted_dsc);
    real.push_back(real_dsc);
  }
  report.pearson_r = pearson(predicted, real);
  report.mae = mae(predicted, real);
  report.mean_predicted = summarize(predicted).mean;
  report.mean_real = summarize(real).mean;
  report.mean_bias = report.mean_predicted - report.mean_real;

  const double edges[4] = {0.0, 0.6, 0.8, 1.0 + 1e-12};
  for (int b = 0; b < 3; ++b) {
    BandAccuracy band;
    band.lo = edges[b];
    band.hi = std::min(edges[b + 1], 1.0);
    double acc = 0.0;
    for (const auto& p : report.pairs) {
      if (p.real_dsc >= edges[b] && p.real_dsc < edges[b + 1]) {
        acc += std::abs(p.predicted_dsc - p.real_dsc);
        ++band.count;
      }
    }
    band.mae = band.count ? acc / static_cast<double>(band.count) : 0.0;
    report.bands.push_back(band);
  }
  return report;
}

inline std::string estimates_to_csv(const std::vector<QualityEstimate>& estimates) {
  std::string out = "subject_id,predicted_dsc,best_reference_id\n";
  for (const auto& e : estimates) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%s\n", e.subject_id.c_str(), e.predicted_dsc,
                  e.best_reference().c_str());
    out += buf;
  }
  return out;
}

inline std::string eval_report_to_csv(const PredictionEvalReport& report) {
  std::string out = "subject_id,predicted_dsc,real_dsc\n";
  for (const auto& p : report.pairs) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f\n", p.subject_id.c_str(), p.predicted_dsc,
                  p.real_dsc);
    out += buf;
  }
  char line[96];
  std::snprintf(line, sizeof(line), "r=%.6f mae=%.6f\n", report.pearson_r, report.mae);
  out += line;
  return out;
}

}  // namespace darca
