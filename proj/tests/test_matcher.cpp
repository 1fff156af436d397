#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <set>
#include <vector>

#include "roadloc/matcher.hpp"
#include "roadloc/refindex.hpp"
#include "roadloc/rng.hpp"
#include "test_support.hpp"

using namespace roadloc;
using namespace roadloc::matcher;
namespace geom = roadloc::geometry;
namespace feat = roadloc::features;
using refindex::IndexConfig;
using refindex::ReferenceIndex;
using testsupport::random_intersections;

namespace {

// Scene-framed homography: affine distortion plus mild projective terms,
// anchored so the scene center lands at the query-frame origin.
geom::Homography scene_homography(Rng& rng, const Eigen::Vector2d& scene_center) {
  const double phi = rng.uniform(0.0, 2 * geom::kPi);
  const double sx = rng.uniform(0.8, 1.25);
  const double sy = rng.uniform(0.8, 1.25);
  const double shear = rng.uniform(-0.1, 0.1);
  Eigen::Matrix3d affine;
  affine << sx * std::cos(phi), -sy * std::sin(phi) + shear, 0,
      sx * std::sin(phi), sy * std::cos(phi), 0, 0, 0, 1;
  Eigen::Matrix3d proj = Eigen::Matrix3d::Identity();
  proj(2, 0) = rng.uniform(-1e-5, 1e-5);
  proj(2, 1) = rng.uniform(-1e-5, 1e-5);
  Eigen::Matrix3d center = Eigen::Matrix3d::Identity();
  center(0, 2) = -scene_center.x();
  center(1, 2) = -scene_center.y();
  return geom::Homography(affine * proj * center);
}

struct Scene {
  std::vector<feat::Intersection> query;
  Eigen::Vector2d center_map;
  geom::Homography h_true;  // map -> query frame
};

Scene crop_scene(Rng& rng, const std::vector<feat::Intersection>& map, double extent,
                 double scene_size, int n, bool transform) {
  Scene s{{}, {0, 0}, geom::Homography::identity()};
  for (int attempt = 0; attempt < 200; ++attempt) {
    const Eigen::Vector2d c(rng.uniform(scene_size, extent - scene_size),
                            rng.uniform(scene_size, extent - scene_size));
    std::vector<const feat::Intersection*> inside;
    for (const auto& x : map)
      if ((x.center - c).cwiseAbs().maxCoeff() <= scene_size / 2) inside.push_back(&x);
    if (static_cast<int>(inside.size()) < n) continue;
    s.center_map = c;
    s.h_true = transform ? scene_homography(rng, c) : geom::Homography::identity();
    auto perm = rng.permutation(inside.size());
    for (int i = 0; i < n; ++i) {
      feat::Intersection x = feat::transform_intersection(s.h_true, *inside[perm[i]]);
      x.id = static_cast<std::uint32_t>(i);
      s.query.push_back(std::move(x));
    }
    return s;
  }
  FAIL("no dense-enough scene found");
  return s;
}

}  // namespace

TEST_CASE("budget_reference fixed points") {
  CHECK(budget_reference(1, 0.01) == 1);
  CHECK(budget_reference(1, 0.5) == 1);
  CHECK(budget_reference(10, 0.01) == 44);
  CHECK(budget_reference(2, 0.05) == 5);  // 0.5^5 = 0.03125 < 0.05 <= 0.5^4
}

TEST_CASE("budget_reference is the smallest satisfying count") {
  Rng rng(51);
  for (int trial = 0; trial < 200; ++trial) {
    const std::uint64_t n = 2 + rng.uniform_int(500);
    const double lambda1 = rng.uniform(1e-4, 0.5);
    const int k = budget_reference(n, lambda1);
    const double base = 1.0 - 1.0 / static_cast<double>(n);
    CHECK(std::pow(base, k) < lambda1);
    if (k > 1) CHECK(std::pow(base, k - 1) >= lambda1);
  }
}

TEST_CASE("budget_reference Monte-Carlo miss rate") {
  Rng rng(52);
  const std::uint64_t n = 10;
  const double lambda1 = 0.01;
  const int k = budget_reference(n, lambda1);
  const auto miss_rate = [&](int draws) {
    int misses = 0;
    const int trials = 200000;
    for (int t = 0; t < trials; ++t) {
      bool hit = false;
      for (int d = 0; d < draws; ++d)
        if (rng.uniform_int(n) == 0) hit = true;
      if (!hit) ++misses;
    }
    return static_cast<double>(misses) / trials;
  };
  // at k draws the miss probability is below lambda1, at k-1 it is not
  CHECK(miss_rate(k) < lambda1);
  CHECK(miss_rate(k - 1) > lambda1 * 0.8);
}

TEST_CASE("budget_query fixed points and errors") {
  CHECK(budget_query(0.01, 0.01, 0.5) == 7);  // base 0.505
  CHECK(budget_query(0.5, 1e-12, 0.999999) == 1);
  CHECK_THROWS_AS(budget_query(0.01, 0.999999999, 1e-12), DegeneratePrior);

  Rng rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    const double lambda = rng.uniform(1e-4, 0.2);
    const double lambda1 = rng.uniform(1e-4, 0.2);
    const double p = rng.uniform(0.05, 0.95);
    const int l = budget_query(lambda, lambda1, p);
    const double base = 1.0 - p + p * lambda1;
    CHECK(std::pow(base, l) < lambda);
    if (l > 1) CHECK(std::pow(base, l - 1) >= lambda);
  }
}

TEST_CASE("two-level failure model matches Monte-Carlo simulation") {
  Rng rng(54);
  for (int trial = 0; trial < 5; ++trial) {
    const double lambda1 = rng.uniform(0.01, 0.2);
    const double p = rng.uniform(0.3, 0.9);
    const std::uint64_t n = 2 + rng.uniform_int(30);
    const int k = budget_reference(n, lambda1);
    const int l = 1 + static_cast<int>(rng.uniform_int(6));
    const double p_fail_ref = std::pow(1.0 - 1.0 / static_cast<double>(n), k);
    const double p_fail_sum = std::pow(1.0 - p + p * p_fail_ref, l);

    const int trials = 100000;
    int failures = 0;
    for (int t = 0; t < trials; ++t) {
      bool located = false;
      for (int i = 0; i < l && !located; ++i) {
        if (!rng.bernoulli(p)) continue;  // no counterpart for this sample
        for (int d = 0; d < k; ++d)
          if (rng.uniform_int(n) == 0) {
            located = true;
            break;
          }
      }
      if (!located) ++failures;
    }
    const double observed = static_cast<double>(failures) / trials;
    const double sigma = std::sqrt(p_fail_sum * (1 - p_fail_sum) / trials);
    CHECK(std::abs(observed - p_fail_sum) <= 3 * sigma + 1e-9);
  }
}

TEST_CASE("evaluate_hypothesis on constructed scenes") {
  Rng rng(55);
  const auto map = random_intersections(rng, 400, 4000.0);
  IndexConfig icfg;
  icfg.d_max = 1500.0;
  const ReferenceIndex index = build_index(map, icfg);

  // exact copies of 30 reference intersections
  std::vector<feat::Intersection> query;
  for (int i = 0; i < 30; ++i) {
    feat::Intersection x = index.intersections()[static_cast<std::size_t>(i * 7 % 400)];
    x.id = static_cast<std::uint32_t>(i);
    query.push_back(x);
  }

  SUBCASE("identity on a noise-free copy gives inlier ratio 1") {
    const auto score = evaluate_hypothesis(geom::Homography::identity(), query, index, 20.0);
    CHECK(score.inlier_ratio == doctest::Approx(1.0));
    // brute-force nearest oracle agreement
    for (const auto& [qid, rid] : score.matches)
      CHECK((query[qid].center - index.intersections()[rid].center).norm() < 20.0);
  }
  SUBCASE("translation far outside the map gives 0") {
    const auto score =
        evaluate_hypothesis(geom::Homography::translation(1e7, 1e7), query, index, 20.0);
    CHECK(score.inlier_ratio == 0.0);
    CHECK(score.matches.empty());
  }
  SUBCASE("perturbing 6 of 30 beyond delta_dist gives 0.8") {
    auto perturbed = query;
    int moved = 0;
    for (int i = 0; i < 6; ++i) {
      // push into empty space; re-check no same-type neighbor catches it
      auto& x = perturbed[static_cast<std::size_t>(i * 5)];
      for (int attempt = 0; attempt < 100; ++attempt) {
        const Eigen::Vector2d offset(rng.uniform(-200, 200), rng.uniform(-200, 200));
        if (offset.norm() < 50) continue;
        if (!index.nearest_same_type(x.center + offset, x.n_branches, x.n_tangents(), 20.0)) {
          x.center += offset;
          ++moved;
          break;
        }
      }
    }
    REQUIRE(moved == 6);
    const auto score = evaluate_hypothesis(geom::Homography::identity(), perturbed, index, 20.0);
    CHECK(score.inlier_ratio == doctest::Approx(0.8));
    CHECK(score.matches.size() == 24);
  }
}

TEST_CASE("localize finds an identity placement") {
  Rng rng(56);
  const auto map = random_intersections(rng, 500, 4000.0);
  IndexConfig icfg;
  icfg.d_max = 1500.0;
  const ReferenceIndex index = build_index(map, icfg);

  const Scene scene = crop_scene(rng, map, 4000.0, 1000.0, 30, false);
  MatcherConfig cfg;
  cfg.rng_seed = 7;
  const auto result = localize(scene.query, index, cfg);
  REQUIRE(result.verdict == Verdict::Located);
  REQUIRE(result.best_h.has_value());
  // noise-free identity scene: every intersection is an inlier
  CHECK(result.inlier_ratio == doctest::Approx(1.0));
  const Eigen::Vector2d est = result.best_h->apply(scene.center_map);
  CHECK((est - scene.center_map).norm() < cfg.delta_dist);

  // Located soundness: re-evaluating the reported homography reproduces the
  // reported inlier ratio and matches
  const auto rescore = evaluate_hypothesis(*result.best_h, scene.query, index, cfg.delta_dist);
  CHECK(rescore.inlier_ratio == doctest::Approx(result.inlier_ratio));
  CHECK(rescore.matches == result.matches);
}

TEST_CASE("localize recovers a random scene transform") {
  Rng rng(57);
  const auto map = random_intersections(rng, 500, 4000.0);
  IndexConfig icfg;
  icfg.d_max = 1500.0;
  const ReferenceIndex index = build_index(map, icfg);

  int located = 0, attempts = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Scene scene = crop_scene(rng, map, 4000.0, 1000.0, 30, true);
    MatcherConfig cfg;
    cfg.rng_seed = 100 + static_cast<std::uint64_t>(trial);
    ++attempts;
    const auto result = localize(scene.query, index, cfg);
    if (result.verdict != Verdict::Located) continue;
    // scene center sits at the query-frame origin by construction
    const Eigen::Vector2d est = result.best_h->apply(Eigen::Vector2d(0, 0));
    CHECK((est - scene.center_map).norm() < cfg.delta_dist);
    ++located;
  }
  CHECK(located >= attempts - 1);  // noise-free: essentially always found
}

TEST_CASE("localize on a disjoint map claims NotInMap within budget") {
  Rng rng(58);
  const auto map_a = random_intersections(rng, 400, 4000.0);
  Rng rng_b(580);
  const auto map_b = random_intersections(rng_b, 400, 4000.0);
  IndexConfig icfg;
  icfg.d_max = 1500.0;
  const ReferenceIndex index = build_index(map_a, icfg);

  const Scene scene = crop_scene(rng_b, map_b, 4000.0, 1000.0, 30, false);
  MatcherConfig cfg;
  cfg.rng_seed = 11;
  const auto result = localize(scene.query, index, cfg);
  CHECK(result.verdict != Verdict::Located);
  if (result.verdict == Verdict::NotInMap) {
    CHECK(result.query_samples_used == result.query_budget);
    CHECK(result.confidence == doctest::Approx(1.0 - cfg.lambda));
  }
  // budget compliance, per sample and in total
  CHECK(result.query_samples_used <= result.query_budget);
  std::uint64_t total_drawn = 0;
  for (const auto& s : result.sample_log) {
    CHECK(s.k_drawn <= std::min(s.k_budget == 0 ? std::uint64_t{0} : s.k_budget, s.n_match));
    total_drawn += s.k_drawn;
  }
  CHECK(total_drawn == result.ref_samples_used);
}

TEST_CASE("localize is deterministic for a fixed seed") {
  Rng rng(59);
  const auto map = random_intersections(rng, 400, 4000.0);
  IndexConfig icfg;
  icfg.d_max = 1500.0;
  const ReferenceIndex index = build_index(map, icfg);
  const Scene scene = crop_scene(rng, map, 4000.0, 1000.0, 30, true);

  MatcherConfig cfg;
  cfg.rng_seed = 4242;
  const auto r1 = localize(scene.query, index, cfg);
  const auto r2 = localize(scene.query, index, cfg);
  CHECK(r1.verdict == r2.verdict);
  CHECK(r1.inlier_ratio == r2.inlier_ratio);
  CHECK(r1.matches == r2.matches);
  CHECK(r1.query_samples_used == r2.query_samples_used);
  CHECK(r1.ref_samples_used == r2.ref_samples_used);
  if (r1.best_h && r2.best_h) CHECK(r1.best_h->matrix() == r2.best_h->matrix());
}

TEST_CASE("localize validates inputs") {
  Rng rng(60);
  const auto map = random_intersections(rng, 100, 2000.0);
  IndexConfig icfg;
  icfg.d_max = 1500.0;
  const ReferenceIndex index = build_index(map, icfg);
  const auto few = random_intersections(rng, 5, 500.0);
  MatcherConfig cfg;
  CHECK_THROWS_AS(localize(few, index, cfg), NotEnoughIntersections);

  MatcherConfig bad;
  bad.lambda = 1.5;
  const auto q = random_intersections(rng, 40, 1000.0);
  CHECK_THROWS_AS(localize(q, index, bad), std::invalid_argument);
}
