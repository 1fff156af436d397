#include "roadloc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace roadloc::synth {

namespace geom = roadloc::geometry;
namespace feat = roadloc::features;

refindex::VectorMap gen_synth_map(const MapParams& params) {
  Rng rng(params.seed);
  const double area_km2 = params.extent_x * params.extent_y / 1e6;
  const double target = std::max(4.0, params.density_per_km2 * area_km2);
  const int cols = std::max(2, static_cast<int>(std::lround(
                                   std::sqrt(target * params.extent_x / params.extent_y))));
  const int rows = std::max(2, static_cast<int>(std::lround(target / cols)));
  const double sx = params.extent_x / (cols + 1);
  const double sy = params.extent_y / (rows + 1);

  // Non-uniform row/column positions. A perfectly periodic lattice would be
  // self-similar under translation and mild scaling, making unrelated maps
  // alias onto each other; uneven block sizes break that, as in real cities.
  const auto spaced_positions = [&](int count, double extent) {
    std::vector<double> gaps(static_cast<std::size_t>(count) + 1);
    double total = 0;
    for (auto& g : gaps) {
      g = rng.uniform(0.7, 1.3);
      total += g;
    }
    std::vector<double> pos;
    double acc = 0;
    for (int i = 0; i < count; ++i) {
      acc += gaps[static_cast<std::size_t>(i)];
      pos.push_back(extent * acc / total);
    }
    return pos;
  };
  const std::vector<double> col_pos = spaced_positions(cols, params.extent_x);
  const std::vector<double> row_pos = spaced_positions(rows, params.extent_y);

  std::vector<std::vector<Eigen::Vector2d>> nodes(rows, std::vector<Eigen::Vector2d>(cols));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      nodes[r][c] = {col_pos[static_cast<std::size_t>(c)] +
                         rng.uniform(-params.jitter_frac, params.jitter_frac) * sx,
                     row_pos[static_cast<std::size_t>(r)] +
                         rng.uniform(-params.jitter_frac, params.jitter_frac) * sy};

  const bool mixed = params.style == MapStyle::Mixed;
  // per-edge dropout decisions, drawn in a fixed order for reproducibility
  std::vector<std::vector<bool>> keep_h(rows, std::vector<bool>(cols - 1, true));
  std::vector<std::vector<bool>> keep_v(rows - 1, std::vector<bool>(cols, true));
  if (mixed) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c + 1 < cols; ++c) keep_h[r][c] = !rng.bernoulli(params.edge_dropout);
    for (int r = 0; r + 1 < rows; ++r)
      for (int c = 0; c < cols; ++c) keep_v[r][c] = !rng.bernoulli(params.edge_dropout);
  }

  refindex::VectorMap map;
  const auto emit_runs = [&](auto node_at, const std::vector<bool>& keep, int count) {
    std::vector<Eigen::Vector2d> run;
    for (int i = 0; i < count; ++i) {
      if (run.empty()) run.push_back(node_at(i));
      if (i + 1 < count && keep[static_cast<std::size_t>(i)]) {
        run.push_back(node_at(i + 1));
      } else {
        if (run.size() >= 2) map.polylines.push_back(run);
        run.clear();
      }
    }
    if (run.size() >= 2) map.polylines.push_back(run);
  };
  for (int r = 0; r < rows; ++r)
    emit_runs([&](int c) { return nodes[r][c]; }, keep_h[r], cols);
  for (int c = 0; c < cols; ++c) {
    std::vector<bool> keep(static_cast<std::size_t>(std::max(0, rows - 1)));
    for (int r = 0; r + 1 < rows; ++r) keep[static_cast<std::size_t>(r)] = keep_v[r][c];
    emit_runs([&](int r) { return nodes[r][c]; }, keep, rows);
  }

  if (mixed) {
    const int n_diag = static_cast<int>(std::lround(params.diagonal_frac * rows * cols));
    std::set<std::pair<int, int>> used;
    int placed = 0, guard = 0;
    while (placed < n_diag && guard++ < 20 * n_diag) {
      const int r = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(rows - 1)));
      const int c = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cols - 1)));
      const bool down_right = rng.bernoulli(0.5);
      const int c2 = down_right ? c + 1 : c;
      const int c1 = down_right ? c : c + 1;
      if (!used.insert({r * cols + c1, (r + 1) * cols + c2}).second) continue;
      map.polylines.push_back({nodes[r][c1], nodes[r + 1][c2]});
      ++placed;
    }
  }
  return map;
}

geom::Homography random_scene_homography(Rng& rng, const Eigen::Vector2d& scene_center) {
  const double phi = rng.uniform(0.0, 2 * geom::kPi);
  const double sx = rng.uniform(0.8, 1.25);
  const double sy = rng.uniform(0.8, 1.25);
  const double shear = rng.uniform(-0.1, 0.1);
  Eigen::Matrix3d affine;
  affine << sx * std::cos(phi), -sy * std::sin(phi) + shear * sx, 0,
      sx * std::sin(phi), sy * std::cos(phi), 0,
      0, 0, 1;
  Eigen::Matrix3d proj = Eigen::Matrix3d::Identity();
  proj(2, 0) = rng.uniform(-1e-5, 1e-5);
  proj(2, 1) = rng.uniform(-1e-5, 1e-5);
  Eigen::Matrix3d to_scene = Eigen::Matrix3d::Identity();
  to_scene(0, 2) = -scene_center.x();
  to_scene(1, 2) = -scene_center.y();
  return geom::Homography(affine * proj * to_scene);
}

SynthQuery gen_query(std::span<const feat::Intersection> map_intersections,
                     const Eigen::AlignedBox2d& map_bounds, const ScenarioParams& scenario,
                     Rng& rng) {
  const double half = scenario.scene_size / 2.0;
  for (int attempt = 0; attempt < 500; ++attempt) {
    const Eigen::Vector2d c(
        rng.uniform(map_bounds.min().x() + half, map_bounds.max().x() - half),
        rng.uniform(map_bounds.min().y() + half, map_bounds.max().y() - half));
    std::vector<std::uint32_t> inside;
    for (std::uint32_t i = 0; i < map_intersections.size(); ++i)
      if ((map_intersections[i].center - c).cwiseAbs().maxCoeff() <= half) inside.push_back(i);
    if (static_cast<int>(inside.size()) < scenario.subset_size) continue;

    SynthQuery out;
    out.truth.scene_center_map = c;
    out.truth.h_true = scenario.random_transform ? random_scene_homography(rng, c)
                                                 : geom::Homography::identity();

    auto perm = rng.permutation(inside.size());
    std::vector<feat::Intersection> picked;
    for (int i = 0; i < scenario.subset_size; ++i)
      picked.push_back(feat::transform_intersection(out.truth.h_true,
                                                    map_intersections[inside[perm[i]]]));

    // noise: jitter the center, re-anchor tangents through it at jittered
    // angles so the pencil stays exactly concurrent
    Eigen::AlignedBox2d scene_box;
    std::vector<feat::Intersection> noisy;
    for (auto& x : picked) {
      feat::Intersection n;
      n.n_branches = x.n_branches;
      n.center = x.center + Eigen::Vector2d(rng.normal(0, scenario.noise.center_sigma),
                                            rng.normal(0, scenario.noise.center_sigma));
      for (const auto& t : x.tangents) {
        const double a = t.direction().radians() +
                         rng.normal(0, scenario.noise.tangent_angle_sigma);
        n.tangents.push_back(geom::HomogLine::through_point_at_angle(n.center, a));
      }
      scene_box.extend(n.center);
      if (scenario.noise.dropout_rate > 0 && rng.bernoulli(scenario.noise.dropout_rate)) continue;
      noisy.push_back(std::move(n));
    }

    if (scenario.noise.clutter_rate > 0) {
      const std::size_t n_clutter = static_cast<std::size_t>(
          std::lround(scenario.noise.clutter_rate * static_cast<double>(noisy.size())));
      for (std::size_t i = 0; i < n_clutter; ++i) {
        feat::Intersection fake;
        fake.center = {rng.uniform(scene_box.min().x(), scene_box.max().x()),
                       rng.uniform(scene_box.min().y(), scene_box.max().y())};
        const int nq = 2 + static_cast<int>(rng.uniform_int(2));
        fake.n_branches = nq + static_cast<int>(rng.uniform_int(2));
        if (fake.n_branches < 3) fake.n_branches = 3;
        std::vector<double> angles;
        while (static_cast<int>(angles.size()) < nq) {
          const double a = rng.uniform(0.0, geom::kPi);
          bool ok = true;
          for (double b : angles)
            if (geom::angle_between(geom::Direction(a), geom::Direction(b)) < 0.3) ok = false;
          if (ok) angles.push_back(a);
        }
        for (double a : angles)
          fake.tangents.push_back(geom::HomogLine::through_point_at_angle(fake.center, a));
        noisy.push_back(std::move(fake));
      }
    }

    rng.shuffle(noisy);
    for (std::uint32_t i = 0; i < noisy.size(); ++i) noisy[i].id = i;
    out.intersections = std::move(noisy);
    return out;
  }
  throw SceneTooSparse();
}

std::map<std::pair<int, int>, std::size_t> type_histogram(
    std::span<const feat::Intersection> xs) {
  std::map<std::pair<int, int>, std::size_t> hist;
  for (const auto& x : xs) ++hist[{x.n_branches, x.n_tangents()}];
  return hist;
}

}  // namespace roadloc::synth
