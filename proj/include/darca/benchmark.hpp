#pragma once

// The frozen phantom benchmark: fixed preset parameters and seeds for the
// cohorts every acceptance-level check runs on. Changing any constant here
// changes the benchmark.

#include <filesystem>

#include "darca/metrics.hpp"
#include "darca/phantom.hpp"
#include "darca/rca.hpp"

namespace darca::benchmark {

inline constexpr std::uint64_t kReferenceCohortSeed = 811001;
inline constexpr std::uint64_t kBenchmarkTargetSeed = 811002;
inline constexpr std::uint64_t kDegradationSeed = 811003;
inline constexpr std::uint64_t kExperimentSourceSeed = 811004;
inline constexpr std::uint64_t kExperimentTargetSeed = 811005;

inline constexpr int kReferenceCount = 10;
inline constexpr int kBenchmarkTargetCount = 20;
inline constexpr int kExperimentSourceCount = 10;
inline constexpr int kExperimentTargetCount = 24;

// RCA rank-fidelity benchmark: target-domain subjects with graded-quality
// segmentations (degraded ground truth) scored against source-domain
// references. Built fully in memory.
struct RcaBenchmark {
  struct Case {
    std::string id;
    Volume image;
    LabelMap ground_truth;
    LabelMap degraded;  // the "predicted" segmentation under evaluation
    double real_dsc = 0.0;
  };
  std::vector<Reference> references;
  std::vector<Case> cases;
};

inline RcaBenchmark make_rca_benchmark(int label = 1) {
  const auto [source_params, target_params] = presets();
  RcaBenchmark bench;
  for (int i = 0; i < kReferenceCount; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "ref%03d", i);
    auto [image, labels] =
        generate_subject(source_params, derive_seed(kReferenceCohortSeed, i));
    bench.references.push_back({id, std::move(image), std::move(labels)});
  }
  for (int i = 0; i < kBenchmarkTargetCount; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "tst%03d", i);
    RcaBenchmark::Case c;
    c.id = id;
    auto [image, labels] =
        generate_subject(target_params, derive_seed(kBenchmarkTargetSeed, i));
    c.image = std::move(image);
    c.ground_truth = std::move(labels);
    const double severity =
        static_cast<double>(i) / static_cast<double>(kBenchmarkTargetCount - 1);
    c.degraded =
        degrade_labels(c.ground_truth, label, severity, derive_seed(kDegradationSeed, i));
    const DiceScore s = dice(c.degraded, c.ground_truth, label);
    c.real_dsc = s.defined() ? *s.value : 0.0;
    bench.cases.push_back(std::move(c));
  }
  return bench;
}

// Writes the frozen source/target experiment cohorts under dir and returns
// their manifest paths. Regeneration is bit-identical.
struct ExperimentPaths {
  std::filesystem::path source_manifest;
  std::filesystem::path target_manifest;
};

inline ExperimentPaths make_experiment_cohorts(const std::filesystem::path& dir) {
  const auto [source_params, target_params] = presets();
  CohortSpec src;
  src.n_subjects = kExperimentSourceCount;
  src.seed = kExperimentSourceSeed;
  src.params = source_params;
  src.output_dir = dir / "source";
  src.name = "src";
  src.domain = Domain::source;
  generate_cohort(src);

  CohortSpec tgt;
  tgt.n_subjects = kExperimentTargetCount;
  tgt.seed = kExperimentTargetSeed;
  tgt.params = target_params;
  tgt.output_dir = dir / "target";
  tgt.name = "tgt";
  tgt.domain = Domain::target;
  generate_cohort(tgt);

  return {dir / "source" / "manifest.csv", dir / "target" / "manifest.csv"};
}

}  // namespace darca::benchmark
