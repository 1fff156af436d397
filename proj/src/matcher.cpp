#include "roadloc/matcher.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>

#include "roadloc/rng.hpp"

namespace roadloc::matcher {

namespace geom = roadloc::geometry;
namespace feat = roadloc::features;

void MatcherConfig::validate() const {
  const auto prob = [](double p) { return p > 0.0 && p < 1.0; };
  if (!prob(lambda) || !prob(lambda1) || !prob(p_query))
    throw std::invalid_argument("matcher probabilities must lie in (0, 1)");
  if (!(delta_inlier > 0.0 && delta_inlier <= 1.0))
    throw std::invalid_argument("delta_inlier must lie in (0, 1]");
  if (!(delta_dist > 0.0) || !(delta_cr >= 0.0) || !(d_max > 0.0))
    throw std::invalid_argument("distances and tolerances must be positive");
  if (min_intersections < 4) throw std::invalid_argument("min_intersections must be >= 4");
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Located: return "Located";
    case Verdict::NotInMap: return "NotInMap";
    default: return "BudgetExhausted";
  }
}

int budget_reference(std::uint64_t n_match, double lambda1) {
  if (n_match <= 1) return 1;
  const double base = 1.0 - 1.0 / static_cast<double>(n_match);
  int k = std::max(1, static_cast<int>(std::ceil(std::log(lambda1) / std::log(base))) - 2);
  while (std::pow(base, k) >= lambda1) ++k;
  while (k > 1 && std::pow(base, k - 1) < lambda1) --k;
  return k;
}

int budget_query(double lambda, double lambda1, double p_query) {
  const double base = 1.0 - p_query + p_query * lambda1;
  if (!(base < 1.0)) throw DegeneratePrior();
  if (base <= 0.0) return 1;
  int l = std::max(1, static_cast<int>(std::ceil(std::log(lambda) / std::log(base))) - 2);
  while (std::pow(base, l) >= lambda) ++l;
  while (l > 1 && std::pow(base, l - 1) < lambda) --l;
  return l;
}

HypothesisScore evaluate_hypothesis(const geom::Homography& h,
                                    std::span<const feat::Intersection> query,
                                    const refindex::ReferenceIndex& index, double delta_dist) {
  if (query.empty()) throw std::invalid_argument("evaluate_hypothesis: empty query");
  // One-to-one assignment, closest pairs first. Without it a collapsing
  // hypothesis that piles many query points onto one dense spot would count
  // the same reference intersection repeatedly.
  struct Pairing {
    double dist;
    std::uint32_t qid;
    std::uint32_t rid;
  };
  std::vector<Pairing> pairings;
  for (const auto& x : query) {
    const geom::HomogPoint mapped = h.apply(geom::HomogPoint(x.center.x(), x.center.y()));
    if (mapped.at_infinity()) continue;  // outlier by definition
    for (const auto& [rid, dist] :
         index.same_type_within(mapped.dehom(), x.n_branches, x.n_tangents(), delta_dist))
      pairings.push_back({dist, x.id, rid});
  }
  std::sort(pairings.begin(), pairings.end(), [](const Pairing& a, const Pairing& b) {
    return std::tie(a.dist, a.qid, a.rid) < std::tie(b.dist, b.qid, b.rid);
  });
  std::set<std::uint32_t> used_q, used_r;
  HypothesisScore score;
  for (const auto& p : pairings) {
    if (used_q.count(p.qid) || used_r.count(p.rid)) continue;
    used_q.insert(p.qid);
    used_r.insert(p.rid);
    score.matches.emplace_back(p.qid, p.rid);
  }
  std::sort(score.matches.begin(), score.matches.end());
  score.inlier_ratio =
      static_cast<double>(score.matches.size()) / static_cast<double>(query.size());
  return score;
}

LocalizationResult localize(std::span<const feat::Intersection> query,
                            const refindex::ReferenceIndex& index, const MatcherConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  if (static_cast<int>(query.size()) < cfg.min_intersections) throw NotEnoughIntersections();
  if (index.intersections().empty()) throw EmptyIndex();

  Rng rng(cfg.rng_seed);
  const feat::TupleConfig tcfg{cfg.d_max, cfg.delta_sep_rad};

  // all admissible query tuples, rarest reference type first
  struct QueryTuple {
    feat::TupleFeature tuple;
    std::uint64_t rarity = 0;
    std::uint64_t tie = 0;
  };
  std::vector<QueryTuple> tuples;
  for (std::size_t i = 0; i < query.size(); ++i)
    for (std::size_t j = i + 1; j < query.size(); ++j)
      if (auto t = feat::build_tuple(query[i], query[j], tcfg)) {
        const std::uint64_t rarity = index.rarity(t->key);
        tuples.push_back({std::move(*t), rarity, rng.next_u64()});
      }
  std::sort(tuples.begin(), tuples.end(), [](const QueryTuple& a, const QueryTuple& b) {
    return std::tie(a.rarity, a.tie) < std::tie(b.rarity, b.tie);
  });

  LocalizationResult result;
  result.query_budget = static_cast<std::uint64_t>(
      budget_query(cfg.lambda, cfg.lambda1, cfg.p_query));

  geom::HomographyFromLinesOptions hopts;
  hopts.refine = cfg.refine_homography;

  const auto finish = [&](Verdict v) {
    result.verdict = v;
    if (v == Verdict::NotInMap) result.confidence = 1.0 - cfg.lambda;
    result.elapsed_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
    return result;
  };

  for (const auto& qt : tuples) {
    if (result.query_samples_used >= result.query_budget) break;
    const auto retrieved =
        index.query_candidates(qt.tuple, cfg.delta_cr, cfg.eps_abs, cfg.n_match_cap);
    if (retrieved.capped) continue;  // astronomically common type: skip the sample
    ++result.query_samples_used;

    SampleStats stats;
    stats.key = qt.tuple.key;
    stats.rarity = qt.rarity;
    stats.n_match = retrieved.candidates.size();
    if (!retrieved.candidates.empty()) {
      const std::uint64_t k =
          static_cast<std::uint64_t>(budget_reference(retrieved.candidates.size(), cfg.lambda1));
      stats.k_budget = k;
      const std::uint64_t draws =
          std::min<std::uint64_t>(k, retrieved.candidates.size());
      auto perm = rng.permutation(retrieved.candidates.size());
      for (std::uint64_t d = 0; d < draws; ++d) {
        const auto& cand = retrieved.candidates[perm[d]];
        ++stats.k_drawn;
        ++result.ref_samples_used;
        for (const auto& match : cand.matches) {
          geom::Homography h = geom::Homography::identity();
          try {
            h = geom::homography_from_lines(match.correspondence.line_pairs, hopts);
          } catch (const Error&) {
            continue;  // degenerate correspondence, try the next one
          }
          const HypothesisScore score = evaluate_hypothesis(h, query, index, cfg.delta_dist);
          if (score.inlier_ratio > result.inlier_ratio) {
            result.inlier_ratio = score.inlier_ratio;
            result.best_h = h;
            result.matches = score.matches;
          }
          if (result.inlier_ratio > cfg.delta_inlier) {
            result.sample_log.push_back(stats);
            return finish(Verdict::Located);
          }
        }
      }
    }
    result.sample_log.push_back(stats);
  }
  return finish(result.query_samples_used >= result.query_budget ? Verdict::NotInMap
                                                                 : Verdict::BudgetExhausted);
}

}  // namespace roadloc::matcher
