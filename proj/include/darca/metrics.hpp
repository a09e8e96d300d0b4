#pragma once

// Overlap and agreement metrics: Dice similarity, Pearson correlation, mean
// absolute error, and mean(stdv) summaries. All pure functions.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "darca/core.hpp"

namespace darca {

struct DiceScore {
  int label = 0;
  // Empty when both masks are empty; Dice is undefined there and callers
  // decide policy rather than silently receiving 0 or 1.
  std::optional<double> value;

  bool defined() const { return value.has_value(); }
};

struct SummaryStat {
  double mean = 0.0;
  double stdv = 0.0;  // population standard deviation
  std::size_t count = 0;
};

inline DiceScore dice(const LabelMap& a, const LabelMap& b, int label) {
  if (!(a.geom == b.geom))
    throw std::invalid_argument("dice: label maps have mismatched geometry");
  std::size_t na = 0, nb = 0, ni = 0;
  const std::uint8_t l = static_cast<std::uint8_t>(label);
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    const bool in_a = a.voxels[i] == l;
    const bool in_b = b.voxels[i] == l;
    na += in_a;
    nb += in_b;
    ni += in_a && in_b;
  }
  DiceScore s;
  s.label = label;
  if (na + nb == 0) return s;
  s.value = 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
  return s;
}

inline double mae(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("mae: length mismatch");
  if (xs.empty()) throw std::invalid_argument("mae: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) acc += std::abs(xs[i] - ys[i]);
  return acc / static_cast<double>(xs.size());
}

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("pearson: need at least 2 samples");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0)
    throw std::invalid_argument("pearson: constant input, correlation undefined");
  return sxy / std::sqrt(sxx * syy);
}

inline SummaryStat summarize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("summarize: empty input");
  SummaryStat s;
  s.count = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) {
    const double d = v - s.mean;
    sq += d * d;
  }
  s.stdv = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

}  // namespace darca
