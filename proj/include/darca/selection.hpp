#pragma once

// Ranking of subjects by predicted quality and annotation-budget selection.
//
// Ranking is ascending by score (lowest confidence first) with ties broken
// by ascending subject id. Selection depends only on score ranks. random_n
// draws with splitmix64-driven partial Fisher-Yates, so plans reproduce for
// a given seed across builds.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "darca/core.hpp"

namespace darca {

enum class SelectionKind { best_n, worst_n, best_worst, random_n, all };

inline std::string to_string(SelectionKind k) {
  switch (k) {
    case SelectionKind::best_n: return "best_n";
    case SelectionKind::worst_n: return "worst_n";
    case SelectionKind::best_worst: return "best_worst";
    case SelectionKind::random_n: return "random_n";
    case SelectionKind::all: return "all";
  }
  return "?";
}

inline SelectionKind parse_selection_kind(const std::string& s) {
  if (s == "best_n") return SelectionKind::best_n;
  if (s == "worst_n") return SelectionKind::worst_n;
  if (s == "best_worst") return SelectionKind::best_worst;
  if (s == "random_n") return SelectionKind::random_n;
  if (s == "all") return SelectionKind::all;
  throw std::runtime_error("unknown selection strategy '" + s + "'");
}

struct SelectionStrategy {
  SelectionKind kind = SelectionKind::best_n;
  int n = 5;  // per side for best_worst
  std::uint64_t seed = 0;

  void validate(std::size_t cohort_size) const {
    if (kind == SelectionKind::all) return;
    if (n < 1) throw std::invalid_argument("selection n must be >= 1");
    if (kind == SelectionKind::best_worst) {
      if (2 * static_cast<std::size_t>(n) > cohort_size)
        throw std::invalid_argument("best_worst needs 2n <= cohort size");
    } else if (static_cast<std::size_t>(n) > cohort_size) {
      throw std::invalid_argument("selection n exceeds cohort size");
    }
  }
};

struct ScoredSubject {
  std::string id;
  double score = 0.0;
};

struct SelectionPlan {
  SelectionStrategy strategy;
  std::vector<std::string> chosen_ids;                 // distinct, ordered
  std::vector<std::string> sides;                      // parallel: best/worst/random/all
  std::vector<ScoredSubject> scores_used;              // the ranking it was drawn from
};

// Ascending by score, ties broken by ascending id.
inline std::vector<ScoredSubject> rank_subjects(std::vector<ScoredSubject> estimates) {
  if (estimates.empty()) throw std::invalid_argument("rank_subjects: empty input");
  for (const auto& e : estimates)
    if (!std::isfinite(e.score))
      throw std::invalid_argument("rank_subjects: non-finite score for '" + e.id + "'");
  std::sort(estimates.begin(), estimates.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.id < b.id;
  });
  return estimates;
}

inline SelectionPlan select(const SelectionStrategy& strategy,
                            const std::vector<ScoredSubject>& ranked) {
  strategy.validate(ranked.size());
  SelectionPlan plan;
  plan.strategy = strategy;
  plan.scores_used = ranked;
  const std::size_t n = ranked.size();

  auto push = [&plan, &ranked](std::size_t idx, const char* side) {
    plan.chosen_ids.push_back(ranked[idx].id);
    plan.sides.push_back(side);
  };

  switch (strategy.kind) {
    case SelectionKind::best_n:
      // highest scores, best first
      for (int i = 0; i < strategy.n; ++i) push(n - 1 - i, "best");
      break;
    case SelectionKind::worst_n:
      for (int i = 0; i < strategy.n; ++i) push(i, "worst");
      break;
    case SelectionKind::best_worst:
      for (int i = 0; i < strategy.n; ++i) push(n - 1 - i, "best");
      for (int i = 0; i < strategy.n; ++i) push(i, "worst");
      break;
    case SelectionKind::random_n: {
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      SplitMix64 rng(strategy.seed);
      for (int i = 0; i < strategy.n; ++i) {
        const std::size_t j = i + rng.next_index(n - i);
        std::swap(idx[i], idx[j]);
        push(idx[i], "random");
      }
      break;
    }
    case SelectionKind::all:
      for (std::size_t i = 0; i < n; ++i) push(i, "all");
      break;
  }
  return plan;
}

inline std::string plan_to_csv(const SelectionPlan& plan) {
  std::string out = "rank,subject_id,score,side\n";
  for (std::size_t i = 0; i < plan.chosen_ids.size(); ++i) {
    double score = 0.0;
    for (const auto& s : plan.scores_used)
      if (s.id == plan.chosen_ids[i]) score = s.score;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.6f,%s\n", i + 1, plan.chosen_ids[i].c_str(),
                  score, plan.sides[i].c_str());
    out += buf;
  }
  return out;
}

// Reads back the chosen ids of a serialized plan (CLI hand-off).
inline std::vector<std::string> plan_ids_from_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open plan");
  std::string line;
  if (!std::getline(in, line) || line.rfind("rank,subject_id,score,side", 0) != 0)
    throw std::runtime_error(path.string() + ": not a selection plan csv");
  std::vector<std::string> ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos)
      throw std::runtime_error(path.string() + ": malformed plan row");
    ids.push_back(line.substr(a + 1, b - a - 1));
  }
  return ids;
}

}  // namespace darca
