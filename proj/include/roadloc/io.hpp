#pragma once

#include <string>
#include <vector>

#include "roadloc/eval.hpp"
#include "roadloc/features.hpp"
#include "roadloc/matcher.hpp"
#include "roadloc/refindex.hpp"
#include "roadloc/skeleton.hpp"
#include "roadloc/synth.hpp"

namespace roadloc::io {

// Vector map: {"polylines": [[[x, y], ...], ...]}, coordinates in meters.
refindex::VectorMap read_vector_map(const std::string& path);
void write_vector_map(const refindex::VectorMap& map, const std::string& path);

// Intersection list:
// {"intersections": [{"center": [x, y], "tangent_angles_rad": [...],
//                     "n_branches": k}, ...]}
std::vector<features::Intersection> read_intersections(const std::string& path);
void write_intersections(std::span<const features::Intersection> xs, const std::string& path);

// Ground truth: {"h_true": [9 row-major], "center_map": [x, y]}
synth::QueryTruth read_truth(const std::string& path);
void write_truth(const synth::QueryTruth& truth, const std::string& path);

// Localization result: verdict, 3x3 homography (row-major, Frobenius
// normalized), matches, inlier ratio, sample counts. elapsed_ms is emitted
// only when include_timing is set so fixed-seed runs are byte-identical.
void write_result(const matcher::LocalizationResult& result, const std::string& path,
                  bool include_timing = false);
matcher::LocalizationResult read_result(const std::string& path);

// Matcher configuration overrides; absent keys keep their defaults.
matcher::MatcherConfig read_matcher_config(const std::string& path);

// Binary PGM (P5, maxval 255, nonzero = road) plus a JSON sidecar
// {"origin": [x, y], "resolution": r}.
skeleton::RoadRaster read_pgm_with_meta(const std::string& pgm_path, const std::string& meta_path);
void write_pgm_with_meta(const skeleton::RoadRaster& raster, const std::string& pgm_path,
                         const std::string& meta_path);

}  // namespace roadloc::io
