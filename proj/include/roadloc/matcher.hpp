#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "roadloc/features.hpp"
#include "roadloc/geometry.hpp"
#include "roadloc/refindex.hpp"

namespace roadloc::matcher {

struct MatcherConfig {
  double lambda = 0.01;     // acceptable probability of missing an existing location
  double lambda1 = 0.01;    // per-query-sample probability of missing an existing match
  double p_query = 0.7;     // prior that a query tuple has a counterpart in the map
  double delta_inlier = 0.5;  // inlier-ratio success threshold
  // Inlier proximity in meters. Street grids are self-similar enough that a
  // loose gate lets wrong placements collect inlier ratios near 0.5; 12 m
  // keeps impostor scores well below that while true placements stay found.
  double delta_dist = 12.0;
  double delta_cr = 0.3;      // relative cross-ratio tolerance
  double eps_abs = 1e-3;
  double d_max = 3000.0;      // query tuple span gate
  double delta_sep_rad = 10.0 * geometry::kPi / 180.0;
  int min_intersections = 30;
  std::uint64_t rng_seed = 0;
  std::uint64_t n_match_cap = 100000;  // skip query samples with more candidates
  bool refine_homography = false;

  void validate() const;  // throws std::invalid_argument
};

enum class Verdict { Located, NotInMap, BudgetExhausted };
const char* to_string(Verdict v);

// Smallest k with (1 - 1/n_match)^k < lambda1; 1 when n_match == 1.
int budget_reference(std::uint64_t n_match, double lambda1);

// Smallest l with (1 - p_query + p_query * lambda1)^l < lambda.
// Throws DegeneratePrior when the base cannot drop below 1.
int budget_query(double lambda, double lambda1, double p_query);

struct HypothesisScore {
  double inlier_ratio = 0.0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> matches;  // (query id, reference id)
};

// Map every query center by h; an inlier has a same-type reference
// intersection within delta_dist of the mapped point. Points mapped to
// infinity count as outliers.
HypothesisScore evaluate_hypothesis(const geometry::Homography& h,
                                    std::span<const features::Intersection> query,
                                    const refindex::ReferenceIndex& index, double delta_dist);

struct SampleStats {
  features::BranchKey key;
  std::uint64_t rarity = 0;    // reference bucket size for the sampled type
  std::uint64_t n_match = 0;   // verified candidates retrieved
  std::uint64_t k_budget = 0;  // reference sampling budget for this sample
  std::uint64_t k_drawn = 0;   // hypotheses actually drawn (without replacement)
};

struct LocalizationResult {
  Verdict verdict = Verdict::BudgetExhausted;
  std::optional<geometry::Homography> best_h;  // query -> reference map
  double inlier_ratio = 0.0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> matches;
  std::uint64_t query_samples_used = 0;
  std::uint64_t ref_samples_used = 0;
  std::uint64_t query_budget = 0;
  double confidence = 0.0;  // 1 - lambda when the verdict is NotInMap
  double elapsed_ms = 0.0;
  std::vector<SampleStats> sample_log;
};

// Rarity-prioritized hypothesis-and-test search. Query tuples are sampled in
// ascending order of their type's reference bucket size; for each, up to
// budget_reference candidates are drawn without replacement and scored;
// terminates as soon as the inlier ratio exceeds delta_inlier.
LocalizationResult localize(std::span<const features::Intersection> query,
                            const refindex::ReferenceIndex& index, const MatcherConfig& cfg);

}  // namespace roadloc::matcher
