#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "roadloc/features.hpp"
#include "roadloc/refindex.hpp"
#include "roadloc/rng.hpp"

namespace roadloc::synth {

enum class MapStyle { Mixed, GridOnly };

struct MapParams {
  std::uint64_t seed = 0;
  double extent_x = 4000.0;  // meters
  double extent_y = 4000.0;
  double density_per_km2 = 200.0;  // target junction density
  MapStyle style = MapStyle::Mixed;
  double jitter_frac = 0.06;    // node jitter as a fraction of grid spacing
  double edge_dropout = 0.05;   // Mixed style: grid edges removed
  double diagonal_frac = 0.18;  // Mixed style: diagonals per node
};

// Reproducible pseudo-random road network: a jittered grid, optionally with
// edge dropout and diagonal links, yielding a mix of 3-, 4- and 5-way
// junctions.
refindex::VectorMap gen_synth_map(const MapParams& params);

struct NoiseParams {
  double tangent_angle_sigma = 0.0;  // radians
  double center_sigma = 0.0;         // meters, in the query frame
  double dropout_rate = 0.0;
  double clutter_rate = 0.0;
};

struct ScenarioParams {
  double scene_size = 1000.0;  // side of the cropped square, meters
  int subset_size = 30;
  NoiseParams noise;
  bool random_transform = true;  // identity when false
};

struct QueryTruth {
  geometry::Homography h_true;  // map -> query frame
  Eigen::Vector2d scene_center_map{0, 0};

  Eigen::Vector2d scene_center_query() const { return h_true.apply(scene_center_map); }
};

struct SynthQuery {
  std::vector<features::Intersection> intersections;  // query frame
  QueryTruth truth;
};

// Random scene-anchored perspective transform: rotation, anisotropic scale in
// [0.8, 1.25], shear in [-0.1, 0.1], projective terms in [-1e-5, 1e-5] per
// meter; the scene center lands at the query-frame origin.
geometry::Homography random_scene_homography(Rng& rng, const Eigen::Vector2d& scene_center);

// Crop a random scene with at least subset_size intersections, transform it,
// subsample, and inject noise, dropout and clutter. Throws SceneTooSparse.
SynthQuery gen_query(std::span<const features::Intersection> map_intersections,
                     const Eigen::AlignedBox2d& map_bounds, const ScenarioParams& scenario,
                     Rng& rng);

// (N_B, N_q) counts.
std::map<std::pair<int, int>, std::size_t> type_histogram(
    std::span<const features::Intersection> xs);

}  // namespace roadloc::synth
