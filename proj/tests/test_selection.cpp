#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "darca/selection.hpp"

using namespace darca;

namespace {

std::vector<ScoredSubject> demo_scores() {
  return {{"A", 0.9}, {"B", 0.2}, {"C", 0.5}, {"D", 0.7}, {"E", 0.1}};
}

std::vector<std::string> ids_of(const SelectionPlan& p) { return p.chosen_ids; }

}  // namespace

TEST_CASE("ranking is ascending by score") {
  const auto ranked = rank_subjects({{"A", 0.9}, {"B", 0.2}, {"C", 0.5}});
  REQUIRE(ranked[0].id == "B");
  REQUIRE(ranked[1].id == "C");
  REQUIRE(ranked[2].id == "A");
}

TEST_CASE("equal scores rank by id") {
  const auto ranked = rank_subjects({{"c", 0.5}, {"a", 0.5}, {"b", 0.5}});
  REQUIRE(ranked[0].id == "a");
  REQUIRE(ranked[1].id == "b");
  REQUIRE(ranked[2].id == "c");
}

TEST_CASE("nan scores are rejected") {
  REQUIRE_THROWS(rank_subjects({{"a", std::nan("")}}));
  REQUIRE_THROWS(rank_subjects({}));
}

TEST_CASE("ranking is invariant under strictly increasing transforms") {
  SplitMix64 rng(17);
  std::vector<ScoredSubject> xs;
  for (int i = 0; i < 20; ++i) xs.push_back({"s" + std::to_string(i), rng.next_unit()});
  const auto base = rank_subjects(xs);
  auto transformed = xs;
  for (auto& s : transformed) s.score = std::exp(3.0 * s.score) + 1.0;
  const auto after = rank_subjects(transformed);
  for (std::size_t i = 0; i < xs.size(); ++i) REQUIRE(base[i].id == after[i].id);
}

TEST_CASE("best worst and best_worst selections on a five-subject ranking") {
  const auto ranked = rank_subjects(demo_scores());

  SelectionStrategy best2{SelectionKind::best_n, 2, 0};
  REQUIRE(ids_of(select(best2, ranked)) == std::vector<std::string>{"A", "D"});

  SelectionStrategy worst2{SelectionKind::worst_n, 2, 0};
  REQUIRE(ids_of(select(worst2, ranked)) == std::vector<std::string>{"E", "B"});

  SelectionStrategy bw1{SelectionKind::best_worst, 1, 0};
  REQUIRE(ids_of(select(bw1, ranked)) == std::vector<std::string>{"A", "E"});

  SelectionStrategy all{SelectionKind::all, 0, 0};
  REQUIRE(ids_of(select(all, ranked)) == std::vector<std::string>{"E", "B", "C", "D", "A"});
}

TEST_CASE("selection depends only on ranks") {
  const auto ranked = rank_subjects(demo_scores());
  auto scaled = demo_scores();
  for (auto& s : scaled) s.score = 100.0 * s.score + 7.0;
  const auto ranked2 = rank_subjects(scaled);
  for (SelectionKind k :
       {SelectionKind::best_n, SelectionKind::worst_n, SelectionKind::best_worst}) {
    SelectionStrategy st{k, 2, 0};
    REQUIRE(ids_of(select(st, ranked)) == ids_of(select(st, ranked2)));
  }
}

TEST_CASE("best_n equals worst_n of negated scores as id sets") {
  SplitMix64 rng(23);
  std::vector<ScoredSubject> xs;
  for (int i = 0; i < 12; ++i) xs.push_back({"s" + std::to_string(i), rng.next_gaussian()});
  auto neg = xs;
  for (auto& s : neg) s.score = -s.score;
  SelectionStrategy best{SelectionKind::best_n, 4, 0};
  SelectionStrategy worst{SelectionKind::worst_n, 4, 0};
  auto a = ids_of(select(best, rank_subjects(xs)));
  auto b = ids_of(select(worst, rank_subjects(neg)));
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  REQUIRE(a == b);
}

TEST_CASE("best_worst is the disjoint union of best and worst") {
  SplitMix64 rng(29);
  std::vector<ScoredSubject> xs;
  for (int i = 0; i < 11; ++i) xs.push_back({"s" + std::to_string(i), rng.next_unit()});
  const auto ranked = rank_subjects(xs);
  const std::size_t n = 3;
  auto bw = ids_of(select({SelectionKind::best_worst, 3, 0}, ranked));
  auto best = ids_of(select({SelectionKind::best_n, 3, 0}, ranked));
  auto worst = ids_of(select({SelectionKind::worst_n, 3, 0}, ranked));
  REQUIRE(bw.size() == 2 * n);
  std::set<std::string> bw_set(bw.begin(), bw.end());
  REQUIRE(bw_set.size() == 2 * n);
  for (const auto& id : best) REQUIRE(bw_set.count(id) == 1);
  for (const auto& id : worst) REQUIRE(bw_set.count(id) == 1);
}

TEST_CASE("random selection is seed-deterministic") {
  const auto ranked = rank_subjects(demo_scores());
  SelectionStrategy r1{SelectionKind::random_n, 2, 101};
  REQUIRE(ids_of(select(r1, ranked)) == ids_of(select(r1, ranked)));
  std::set<std::vector<std::string>> plans;
  for (std::uint64_t s = 0; s < 6; ++s) {
    SelectionStrategy st{SelectionKind::random_n, 2, s};
    auto ids = ids_of(select(st, ranked));
    std::sort(ids.begin(), ids.end());
    plans.insert(ids);
  }
  REQUIRE(plans.size() >= 2);
}

TEST_CASE("random 1-of-3 is uniform over 10000 seeds") {
  const std::vector<ScoredSubject> ranked =
      rank_subjects({{"a", 0.1}, {"b", 0.2}, {"c", 0.3}});
  std::map<std::string, int> freq;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    SelectionStrategy st{SelectionKind::random_n, 1, seed};
    freq[select(st, ranked).chosen_ids[0]]++;
  }
  for (const auto& [id, count] : freq) {
    const double f = count / 10000.0;
    INFO(id << " " << f);
    REQUIRE(f >= 0.31);
    REQUIRE(f <= 0.36);
  }
}

TEST_CASE("strategy validation") {
  const auto ranked = rank_subjects(demo_scores());
  REQUIRE_THROWS(select({SelectionKind::best_n, 6, 0}, ranked));
  REQUIRE_THROWS(select({SelectionKind::best_worst, 3, 0}, ranked));  // 2n > 5
  REQUIRE_THROWS(select({SelectionKind::best_n, 0, 0}, ranked));
}

TEST_CASE("plan csv round trip of chosen ids") {
  const auto ranked = rank_subjects(demo_scores());
  const auto plan = select({SelectionKind::best_worst, 2, 0}, ranked);
  const std::string csv = plan_to_csv(plan);
  REQUIRE(csv.rfind("rank,subject_id,score,side\n", 0) == 0);
  const auto path = std::filesystem::temp_directory_path() / "darca_plan_test.csv";
  {
    std::ofstream out(path);
    out << csv;
  }
  REQUIRE(plan_ids_from_csv(path) == plan.chosen_ids);
}
