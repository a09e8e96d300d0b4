#pragma once

// Experiment harness: cross-validated runs of selection strategy x
// adaptation mode cells over a source/target cohort pair, the two-iteration
// scheme, and CSV/markdown report emission.
//
// Fold discipline: folds partition the target cohort. Selection (and RCA
// scoring) only ever sees fold-train target subjects; reported Dice comes
// from fold-test subjects segmented by the adapted model. The source cohort
// is fully labeled and is both the training base and the RCA reference set.
//
// Everything derives from ExperimentConfig.seed, so equal configs produce
// byte-identical CSV reports. The random-selection strategy runs exactly
// three seeded repetitions and pools their per-subject results.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "darca/cohort.hpp"
#include "darca/core.hpp"
#include "darca/metrics.hpp"
#include "darca/phantom.hpp"
#include "darca/rca.hpp"
#include "darca/registration.hpp"
#include "darca/segmodel.hpp"
#include "darca/selection.hpp"

namespace darca {

enum class AdaptMode { scratch, finetune, pseudo_finetune, iterative };
enum class Selector { rca, real, random };

inline std::string to_string(AdaptMode m) {
  switch (m) {
    case AdaptMode::scratch: return "scratch";
    case AdaptMode::finetune: return "finetune";
    case AdaptMode::pseudo_finetune: return "pseudo_finetune";
    case AdaptMode::iterative: return "iterative";
  }
  return "?";
}

inline AdaptMode parse_adapt_mode(const std::string& s) {
  if (s == "scratch") return AdaptMode::scratch;
  if (s == "finetune") return AdaptMode::finetune;
  if (s == "pseudo_finetune") return AdaptMode::pseudo_finetune;
  if (s == "iterative") return AdaptMode::iterative;
  throw std::runtime_error("unknown adaptation mode '" + s + "'");
}

inline std::string to_string(Selector s) {
  switch (s) {
    case Selector::rca: return "rca";
    case Selector::real: return "real";
    case Selector::random: return "random";
  }
  return "?";
}

inline Selector parse_selector(const std::string& s) {
  if (s == "rca") return Selector::rca;
  if (s == "real") return Selector::real;
  if (s == "random") return Selector::random;
  throw std::runtime_error("unknown selector '" + s + "'");
}

struct SweepFamily {
  std::string label;
  AdaptMode mode = AdaptMode::finetune;
  SelectionKind kind = SelectionKind::best_n;
  Selector selector = Selector::rca;
};

inline std::vector<SweepFamily> default_sweep_families() {
  return {
      {"ft random-n", AdaptMode::finetune, SelectionKind::random_n, Selector::random},
      {"ft best-n (real)", AdaptMode::finetune, SelectionKind::best_n, Selector::real},
      {"ft best-n (rca)", AdaptMode::finetune, SelectionKind::best_n, Selector::rca},
      {"pl best-n (real)", AdaptMode::pseudo_finetune, SelectionKind::best_n, Selector::real},
      {"pl best-n (rca)", AdaptMode::pseudo_finetune, SelectionKind::best_n, Selector::rca},
      {"scratch best-n (real)", AdaptMode::scratch, SelectionKind::best_n, Selector::real},
      {"scratch best-n (rca)", AdaptMode::scratch, SelectionKind::best_n, Selector::rca},
  };
}

struct ExperimentConfig {
  std::filesystem::path source_manifest;
  std::filesystem::path target_manifest;
  int label = 1;
  int folds = 3;
  SelectionStrategy strategy{SelectionKind::best_worst, 5, 0};
  AdaptMode mode = AdaptMode::finetune;
  Selector selector = Selector::rca;
  std::vector<int> set_sizes{0, 2, 5, 10, 15, -1};  // -1 means "all"
  std::uint64_t seed = 0;
  RegConfig reg;
  double blend = 0.5;
  bool reuse_iter1_ranking = false;  // iteration 2 re-runs RCA by default
  std::vector<SweepFamily> sweep_families = default_sweep_families();
  unsigned jobs = default_jobs();

  void validate() const {
    if (folds < 2) throw std::invalid_argument("folds must be >= 2");
    if (!(blend >= 0.0 && blend <= 1.0))
      throw std::invalid_argument("blend must be in [0,1]");
    reg.validate();
  }
};

struct FoldSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

// Seeded shuffle, then contiguous partition into k test chunks; the first
// (size % k) folds take the remainder.
inline std::vector<FoldSplit> crossval_splits(const Cohort& cohort, int k,
                                              std::uint64_t seed) {
  cohort.validate();
  const std::size_t n = cohort.subjects.size();
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw std::invalid_argument("crossval_splits: k must be in [1, cohort size]");
  std::vector<std::string> ids;
  for (const auto& s : cohort.subjects) ids.push_back(s.id);
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const std::size_t j = i + rng.next_index(n - i);
    std::swap(ids[i], ids[j]);
  }
  std::vector<FoldSplit> folds(k);
  const std::size_t base = n / static_cast<std::size_t>(k);
  const std::size_t rem = n % static_cast<std::size_t>(k);
  std::size_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const std::size_t size = base + (static_cast<std::size_t>(f) < rem ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) folds[f].test_ids.push_back(ids[pos + i]);
    pos += size;
  }
  for (int f = 0; f < k; ++f)
    for (const auto& id : ids)
      if (std::find(folds[f].test_ids.begin(), folds[f].test_ids.end(), id) ==
          folds[f].test_ids.end())
        folds[f].train_ids.push_back(id);
  return folds;
}

struct ReportRow {
  std::string strategy_label;
  std::string mode_label;
  int n = 0;  // -1 means "all"
  SummaryStat stat;
  std::vector<std::vector<std::string>> selected_per_fold;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  std::optional<PredictionEvalReport> prediction_eval;
  std::vector<FoldSplit> splits;
  std::string config_digest;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string config_digest(const ExperimentConfig& cfg) {
  std::string s;
  s += cfg.source_manifest.string() + "|" + cfg.target_manifest.string() + "|";
  s += std::to_string(cfg.label) + "|" + std::to_string(cfg.folds) + "|";
  s += to_string(cfg.strategy.kind) + "," + std::to_string(cfg.strategy.n) + "," +
       std::to_string(cfg.strategy.seed) + "|";
  s += to_string(cfg.mode) + "|" + to_string(cfg.selector) + "|";
  for (int n : cfg.set_sizes) s += std::to_string(n) + ",";
  s += "|" + std::to_string(cfg.seed) + "|";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%.17g|%d|", cfg.blend, cfg.reuse_iter1_ranking ? 1 : 0);
  s += buf;
  s += std::to_string(cfg.reg.levels) + "," + std::to_string(cfg.reg.iterations_per_level) +
       "," + (cfg.reg.metric == Metric::ncc ? std::string("ncc") : std::string("ssd"));
  std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%.17g,%.17g,", cfg.reg.step_init,
                cfg.reg.step_shrink, cfg.reg.min_step, cfg.reg.sample_fraction);
  s += buf;
  s += std::to_string(cfg.reg.seed);
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(s)));
  return buf;
}

struct LoadedSubject {
  SubjectRecord record;
  Volume image;
  LabelMap labels;
};

inline std::vector<LoadedSubject> load_subjects(const Cohort& cohort,
                                                const char* role) {
  std::vector<LoadedSubject> out;
  for (const auto& rec : cohort.subjects) {
    LoadedSubject s;
    s.record = rec;
    s.image = read_volume(rec.image_path);
    if (!rec.label_path)
      throw std::runtime_error(std::string(role) + " subject '" + rec.id +
                               "' has no label file; the harness needs labels for "
                               "training and evaluation");
    s.labels = read_labels(*rec.label_path);
    out.push_back(std::move(s));
  }
  return out;
}

inline LabeledSubject to_labeled(const LoadedSubject& s, LabelKind kind) {
  return LabeledSubject{s.record, s.image, s.labels, kind};
}

// Shared state across the cells of one experiment run: cohorts in memory,
// the source-trained baseline, its outputs/RCA estimates/real Dice for every
// target subject, and the RCA transform cache.
class Session {
 public:
  explicit Session(const ExperimentConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const Cohort source_cohort = load_cohort(cfg.source_manifest);
    const Cohort target_cohort = load_cohort(cfg.target_manifest);
    source_ = load_subjects(source_cohort, "source");
    target_ = load_subjects(target_cohort, "target");
    splits_ = crossval_splits(target_cohort, cfg.folds, cfg.seed);

    for (const auto& s : source_) references_.push_back({s.record.id, s.image, s.labels});

    // Atlas space: the first source subject by id.
    std::size_t ref_idx = 0;
    for (std::size_t i = 1; i < source_.size(); ++i)
      if (source_[i].record.id < source_[ref_idx].record.id) ref_idx = i;
    reference_geometry_ = source_[ref_idx].image.geom;

    std::vector<LabeledSubject> source_labeled;
    for (const auto& s : source_) source_labeled.push_back(to_labeled(s, LabelKind::manual));
    baseline_ = train(source_labeled, reference_geometry_, cfg.reg, cfg.jobs);
    baseline_.provenance.mode = "baseline";

    // Baseline outputs, real Dice and RCA estimates for every target
    // subject; fold views are subsets of these.
    baseline_outputs_.resize(target_.size());
    parallel_for(target_.size(), cfg.jobs, [&](std::size_t i) {
      baseline_outputs_[i] = predict(baseline_, target_[i].image, cfg.reg).labels;
    });
    for (std::size_t i = 0; i < target_.size(); ++i) {
      const DiceScore s = dice(baseline_outputs_[i], target_[i].labels, cfg.label);
      baseline_real_[target_[i].record.id] = s.defined() ? *s.value : 0.0;
    }
    std::vector<std::pair<SubjectRecord, LabelMap>> outputs;
    for (std::size_t i = 0; i < target_.size(); ++i)
      outputs.emplace_back(target_[i].record, baseline_outputs_[i]);
    CohortPrediction pred =
        predict_cohort(outputs, references_, cfg.label, cfg.reg, &rca_cache_, cfg.jobs);
    if (!pred.failures.empty())
      throw std::runtime_error("baseline RCA failed for subject '" +
                               pred.failures.front().subject_id +
                               "': " + pred.failures.front().message);
    for (auto& e : pred.estimates) baseline_estimates_[e.subject_id] = std::move(e);
  }

  const ExperimentConfig& cfg() const { return cfg_; }
  const std::vector<FoldSplit>& splits() const { return splits_; }
  const GridGeometry& reference_geometry() const { return reference_geometry_; }
  const SegmenterModel& baseline() const { return baseline_; }
  const std::vector<Reference>& references() const { return references_; }
  TransformCache& rca_cache() { return rca_cache_; }

  const LoadedSubject& target_by_id(const std::string& id) const {
    for (const auto& s : target_)
      if (s.record.id == id) return s;
    throw std::runtime_error("unknown target subject '" + id + "'");
  }
  const std::vector<LoadedSubject>& target() const { return target_; }
  const std::vector<LoadedSubject>& source() const { return source_; }

  const LabelMap& baseline_output(const std::string& id) const {
    for (std::size_t i = 0; i < target_.size(); ++i)
      if (target_[i].record.id == id) return baseline_outputs_[i];
    throw std::runtime_error("no baseline output for '" + id + "'");
  }
  double baseline_real_dsc(const std::string& id) const { return baseline_real_.at(id); }
  const QualityEstimate& baseline_estimate(const std::string& id) const {
    return baseline_estimates_.at(id);
  }

  std::vector<LabeledSubject> source_labeled() const {
    std::vector<LabeledSubject> out;
    for (const auto& s : source_) out.push_back(to_labeled(s, LabelKind::manual));
    return out;
  }

  // Dice of `model` on the fold's test subjects, in split order.
  std::vector<double> evaluate_on_test(const SegmenterModel& model, int fold) const {
    const auto& ids = splits_[fold].test_ids;
    std::vector<double> out(ids.size());
    parallel_for(ids.size(), cfg_.jobs, [&](std::size_t i) {
      const auto& subj = target_by_id(ids[i]);
      const Prediction p = predict(model, subj.image, cfg_.reg);
      const DiceScore s = dice(p.labels, subj.labels, cfg_.label);
      out[i] = s.defined() ? *s.value : 0.0;
    });
    return out;
  }

  // Baseline Dice on fold-test subjects, pooled over folds (each target
  // subject is a test subject exactly once).
  std::vector<double> baseline_test_dsc() const {
    std::vector<double> out;
    for (const auto& split : splits_)
      for (const auto& id : split.test_ids) out.push_back(baseline_real_dsc(id));
    return out;
  }

  // Prediction-quality evaluation over all target subjects (estimates are
  // fold-independent: same model, same references).
  PredictionEvalReport baseline_eval() const {
    std::vector<QualityEstimate> estimates;
    std::vector<std::pair<std::string, LabelMap>> gt;
    std::vector<std::pair<SubjectRecord, LabelMap>> outputs;
    for (std::size_t i = 0; i < target_.size(); ++i) {
      estimates.push_back(baseline_estimates_.at(target_[i].record.id));
      gt.emplace_back(target_[i].record.id, target_[i].labels);
      outputs.emplace_back(target_[i].record, baseline_outputs_[i]);
    }
    return evaluate_predictions(estimates, gt, outputs, cfg_.label);
  }

 private:
  ExperimentConfig cfg_;
  std::vector<LoadedSubject> source_, target_;
  std::vector<Reference> references_;
  std::vector<FoldSplit> splits_;
  GridGeometry reference_geometry_;
  SegmenterModel baseline_;
  std::vector<LabelMap> baseline_outputs_;
  std::map<std::string, double> baseline_real_;
  std::map<std::string, QualityEstimate> baseline_estimates_;
  TransformCache rca_cache_;
};

inline std::string strategy_label(const SelectionStrategy& st, Selector sel) {
  if (st.kind == SelectionKind::all) return "all_t";
  std::string base = to_string(st.kind);
  const auto pos = base.find("_n");
  if (pos != std::string::npos)
    base.replace(pos, 2, "_" + std::to_string(st.n));
  else
    base += "_" + std::to_string(st.n);  // best_worst -> best_worst_5
  if (st.kind == SelectionKind::random_n) return base;
  return base + " (" + to_string(sel) + ")";
}

// Builds the ranked fold-train list for a selector.
inline std::vector<ScoredSubject> ranked_pool(const Session& session, int fold,
                                              Selector selector) {
  const auto& ids = session.splits()[fold].train_ids;
  std::vector<ScoredSubject> scored;
  for (const auto& id : ids) {
    double score = 0.0;
    if (selector == Selector::rca)
      score = session.baseline_estimate(id).predicted_dsc;
    else if (selector == Selector::real)
      score = session.baseline_real_dsc(id);
    scored.push_back({id, score});
  }
  return rank_subjects(scored);
}

inline std::vector<LabeledSubject> attach_labels(const Session& session,
                                                 const std::vector<std::string>& ids,
                                                 bool pseudo) {
  std::vector<LabeledSubject> out;
  for (const auto& id : ids) {
    const auto& subj = session.target_by_id(id);
    if (pseudo)
      out.push_back(LabeledSubject{subj.record, subj.image, session.baseline_output(id),
                                   LabelKind::pseudo});
    else
      out.push_back(to_labeled(subj, LabelKind::manual));
  }
  return out;
}

inline ReportRow baseline_row(const Session& session, AdaptMode mode) {
  ReportRow row;
  row.strategy_label = "baseline";
  row.mode_label = to_string(mode);
  row.n = 0;
  row.stat = summarize(session.baseline_test_dsc());
  row.selected_per_fold.assign(session.cfg().folds, {});
  return row;
}

}  // namespace detail

// One table cell: a selection strategy, an adaptation mode, and the score
// used for ranking. n_override (-1 = all, >= 0 = n) adjusts the strategy for
// set-size sweeps; upper_bound trains on the fold-train target subjects only
// (the adaptation ceiling, no selection involved).
struct CellSpec {
  SelectionStrategy strategy{SelectionKind::best_n, 5, 0};
  AdaptMode mode = AdaptMode::finetune;
  Selector selector = Selector::rca;
  int n_override = -2;  // -2 keeps strategy.n
  bool upper_bound = false;
  std::string label;  // optional row label override
};

namespace detail {

// Select on fold-train, adapt, evaluate on fold-test; random strategies pool
// three seeded repetitions.
inline ReportRow run_cell(Session& session, const CellSpec& spec) {
  const auto& cfg = session.cfg();
  SelectionStrategy strategy = spec.strategy;
  if (spec.n_override != -2) {
    if (spec.n_override == -1)
      strategy.kind = SelectionKind::all;
    else
      strategy.n = spec.n_override;
  }

  ReportRow row;
  row.mode_label = to_string(spec.mode);

  if (spec.upper_bound) {
    row.strategy_label = spec.label.empty() ? "upper_bound" : spec.label;
    row.n = -1;
    std::vector<double> all_dsc;
    for (int fold = 0; fold < cfg.folds; ++fold) {
      const auto& ids = session.splits()[fold].train_ids;
      const SegmenterModel model =
          train(attach_labels(session, ids, false), session.reference_geometry(), cfg.reg,
                cfg.jobs);
      const auto dsc = session.evaluate_on_test(model, fold);
      all_dsc.insert(all_dsc.end(), dsc.begin(), dsc.end());
      row.selected_per_fold.push_back(ids);
    }
    row.stat = summarize(all_dsc);
    return row;
  }

  const bool empty_selection = strategy.kind != SelectionKind::all && strategy.n == 0;
  const int reps = (!empty_selection && strategy.kind == SelectionKind::random_n) ? 3 : 1;
  row.n = strategy.kind == SelectionKind::all ? -1 : (empty_selection ? 0 : strategy.n);
  row.strategy_label = !spec.label.empty()
                           ? spec.label
                           : (empty_selection ? "baseline"
                                              : strategy_label(strategy, spec.selector));

  std::vector<double> all_dsc;
  for (int fold = 0; fold < cfg.folds; ++fold) {
    std::vector<std::string> fold_selected;
    for (int rep = 0; rep < reps; ++rep) {
      std::vector<std::string> selected;
      if (!empty_selection) {
        auto ranked = ranked_pool(session, fold, spec.selector);
        SelectionStrategy st = strategy;
        if (st.kind == SelectionKind::random_n)
          st.seed = derive_seed(cfg.seed ^ strategy.seed,
                                static_cast<std::uint64_t>(fold) * 3 + rep);
        selected = select(st, ranked).chosen_ids;
      }
      for (const auto& id : selected) fold_selected.push_back(id);

      SegmenterModel adapted;
      const bool pseudo = spec.mode == AdaptMode::pseudo_finetune;
      if (selected.empty()) {
        adapted = session.baseline();
      } else if (spec.mode == AdaptMode::scratch) {
        adapted = adapt_scratch(session.source_labeled(),
                                attach_labels(session, selected, false),
                                session.reference_geometry(), cfg.reg, cfg.jobs);
      } else {
        adapted = adapt_finetune(session.baseline(),
                                 attach_labels(session, selected, pseudo), cfg.blend,
                                 cfg.reg);
      }
      const auto dsc = session.evaluate_on_test(adapted, fold);
      all_dsc.insert(all_dsc.end(), dsc.begin(), dsc.end());
    }
    row.selected_per_fold.push_back(std::move(fold_selected));
  }
  row.stat = summarize(all_dsc);
  return row;
}

// The two-iteration scheme as two rows: fine-tune with best-n by RCA, re-run
// RCA on the adapted model's outputs, fine-tune again with the new ranking's
// worst-n (already-selected subjects excluded).
inline std::pair<ReportRow, ReportRow> run_iterative_rows(Session& session, int n) {
  const auto& cfg = session.cfg();
  ReportRow row1, row2;
  row1.strategy_label = "iter1 best_" + std::to_string(n) + " (rca)";
  row2.strategy_label = "iter2 +worst_" + std::to_string(n) + " (rca)";
  row1.mode_label = row2.mode_label = "iterative";
  row1.n = n;
  row2.n = 2 * n;

  std::vector<double> dsc1, dsc2;
  for (int fold = 0; fold < cfg.folds; ++fold) {
    auto ranked1 = ranked_pool(session, fold, Selector::rca);
    const auto best = select({SelectionKind::best_n, n, 0}, ranked1).chosen_ids;
    const SegmenterModel model1 =
        adapt_finetune(session.baseline(), attach_labels(session, best, false), cfg.blend,
                       cfg.reg);
    const auto fold_dsc1 = session.evaluate_on_test(model1, fold);
    dsc1.insert(dsc1.end(), fold_dsc1.begin(), fold_dsc1.end());
    row1.selected_per_fold.push_back(best);

    std::vector<ScoredSubject> pool2;
    if (cfg.reuse_iter1_ranking) {
      pool2 = ranked1;
    } else {
      const auto& train_ids = session.splits()[fold].train_ids;
      std::vector<std::pair<SubjectRecord, LabelMap>> outputs(train_ids.size());
      parallel_for(train_ids.size(), cfg.jobs, [&](std::size_t i) {
        const auto& subj = session.target_by_id(train_ids[i]);
        outputs[i] = {subj.record, predict(model1, subj.image, cfg.reg).labels};
      });
      CohortPrediction pred = predict_cohort(outputs, session.references(), cfg.label,
                                             cfg.reg, &session.rca_cache(), cfg.jobs);
      if (!pred.failures.empty())
        throw std::runtime_error("iteration-2 RCA failed for '" +
                                 pred.failures.front().subject_id + "'");
      for (const auto& e : pred.estimates) pool2.push_back({e.subject_id, e.predicted_dsc});
      pool2 = rank_subjects(pool2);
    }
    std::vector<ScoredSubject> pool2_filtered;
    for (const auto& s : pool2)
      if (std::find(best.begin(), best.end(), s.id) == best.end())
        pool2_filtered.push_back(s);
    const auto worst = select({SelectionKind::worst_n, n, 0}, pool2_filtered).chosen_ids;
    const SegmenterModel model2 =
        adapt_finetune(model1, attach_labels(session, worst, false), cfg.blend, cfg.reg);
    const auto fold_dsc2 = session.evaluate_on_test(model2, fold);
    dsc2.insert(dsc2.end(), fold_dsc2.begin(), fold_dsc2.end());
    std::vector<std::string> cumulative = best;
    cumulative.insert(cumulative.end(), worst.begin(), worst.end());
    row2.selected_per_fold.push_back(cumulative);
  }
  row1.stat = summarize(dsc1);
  row2.stat = summarize(dsc2);
  return {std::move(row1), std::move(row2)};
}

}  // namespace detail

struct BaselineResult {
  SegmenterModel model;
  std::vector<FoldSplit> splits;
  // Per fold: estimates for the fold-train subjects, count equals the
  // fold-train size.
  std::vector<std::vector<QualityEstimate>> fold_estimates;
  std::vector<std::pair<std::string, double>> real_dsc;  // all target subjects
  SummaryStat test_dsc;                                  // pooled fold-test Dice
  PredictionEvalReport eval;
};

inline BaselineResult run_baseline(const ExperimentConfig& cfg) {
  detail::Session session(cfg);
  BaselineResult out;
  out.model = session.baseline();
  out.splits = session.splits();
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<QualityEstimate> fold;
    for (const auto& id : session.splits()[f].train_ids)
      fold.push_back(session.baseline_estimate(id));
    out.fold_estimates.push_back(std::move(fold));
  }
  for (const auto& s : session.target())
    out.real_dsc.emplace_back(s.record.id, session.baseline_real_dsc(s.record.id));
  out.test_dsc = summarize(session.baseline_test_dsc());
  out.eval = session.baseline_eval();
  return out;
}

// Runs a battery of cells over one shared session (one baseline training,
// one RCA pass); whole result tables are produced this way. The first output
// row is always the baseline.
inline ExperimentReport run_table(const ExperimentConfig& cfg,
                                  const std::vector<CellSpec>& cells) {
  detail::Session session(cfg);
  ExperimentReport report;
  report.seed = cfg.seed;
  report.config_digest = detail::config_digest(cfg);
  report.splits = session.splits();
  report.rows.push_back(detail::baseline_row(session, cfg.mode));
  for (const auto& cell : cells) {
    if (cell.mode == AdaptMode::iterative) {
      auto [row1, row2] = detail::run_iterative_rows(session, cell.strategy.n);
      report.rows.push_back(std::move(row1));
      report.rows.push_back(std::move(row2));
    } else {
      report.rows.push_back(detail::run_cell(session, cell));
    }
  }
  report.prediction_eval = session.baseline_eval();
  return report;
}

inline ExperimentReport run_strategy(const ExperimentConfig& cfg) {
  CellSpec cell;
  cell.strategy = cfg.strategy;
  cell.mode = cfg.mode;
  cell.selector = cfg.selector;
  return run_table(cfg, {cell});
}

inline ExperimentReport run_setsize_sweep(const ExperimentConfig& cfg) {
  std::vector<CellSpec> cells;
  for (const auto& family : cfg.sweep_families) {
    for (int n : cfg.set_sizes) {
      CellSpec cell;
      cell.strategy.kind = family.kind;
      cell.strategy.n = n;
      cell.mode = family.mode;
      cell.selector = family.selector;
      cell.n_override = n;
      cell.label = family.label;
      cells.push_back(std::move(cell));
    }
  }
  return run_table(cfg, cells);
}

inline ExperimentReport run_iterative(const ExperimentConfig& cfg) {
  CellSpec cell;
  cell.strategy = cfg.strategy;
  cell.mode = AdaptMode::iterative;
  return run_table(cfg, {cell});
}

enum class ReportFormat { csv, markdown };

// CSV: exactly one header line plus one line per row, so reruns diff
// cleanly. Markdown adds provenance and pivots strategy rows against modes
// the way the result tables are usually presented.
inline std::string emit_report(const ExperimentReport& report, ReportFormat format) {
  auto cell = [](const SummaryStat& s) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.3f (%.3f)", s.mean, s.stdv);
    return std::string(buf);
  };
  if (format == ReportFormat::csv) {
    std::string out = "strategy,mode,n,mean_dsc,std_dsc,count\n";
    for (const auto& r : report.rows) {
      char buf[192];
      const std::string n = r.n == -1 ? "all" : std::to_string(r.n);
      std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.3f,%.3f,%zu\n", r.strategy_label.c_str(),
                    r.mode_label.c_str(), n.c_str(), r.stat.mean, r.stat.stdv, r.stat.count);
      out += buf;
    }
    return out;
  }

  std::string out;
  out += "# DARCA experiment report\n\n";
  out += "config: " + report.config_digest + ", seed: " + std::to_string(report.seed) + "\n";
  out += "cells are mean (stdv) Dice over fold-test target subjects; stdv is the "
         "population standard deviation.\n";
  if (report.prediction_eval) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "rca prediction: r=%.3f mae=%.3f mean_predicted=%.3f mean_real=%.3f "
                  "bias=%.3f\n",
                  report.prediction_eval->pearson_r, report.prediction_eval->mae,
                  report.prediction_eval->mean_predicted, report.prediction_eval->mean_real,
                  report.prediction_eval->mean_bias);
    out += buf;
  }
  out += "\n";

  std::vector<std::string> modes, strategies;
  for (const auto& r : report.rows) {
    if (std::find(modes.begin(), modes.end(), r.mode_label) == modes.end())
      modes.push_back(r.mode_label);
    const std::string key = r.strategy_label + (r.n == -1 ? " [all]" : "");
    if (std::find(strategies.begin(), strategies.end(), key) == strategies.end())
      strategies.push_back(key);
  }
  out += "| selection |";
  for (const auto& m : modes) out += " " + m + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < modes.size(); ++i) out += "---|";
  out += "\n";
  for (const auto& st : strategies) {
    out += "| " + st + " |";
    for (const auto& m : modes) {
      std::string value = "n/a";
      for (const auto& r : report.rows) {
        const std::string key = r.strategy_label + (r.n == -1 ? " [all]" : "");
        if (key == st && r.mode_label == m) {
          value = cell(r.stat);
          break;
        }
      }
      out += " " + value + " |";
    }
    out += "\n";
  }
  return out;
}

}  // namespace darca
