#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "roadloc/geometry.hpp"

namespace roadloc::skeleton {

// Binary occupancy raster with a map-plane georeference: pixel (x, y) center
// sits at origin + resolution * (x, y).
struct RoadRaster {
  int width = 0;
  int height = 0;
  double resolution = 1.0;  // meters per pixel
  Eigen::Vector2d origin{0.0, 0.0};
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  static RoadRaster blank(int w, int h, double res = 1.0, Eigen::Vector2d org = {0, 0});

  bool inside(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  std::uint8_t at(int x, int y) const { return inside(x, y) ? bits[static_cast<std::size_t>(y) * width + x] : 0; }
  void set(int x, int y, std::uint8_t v) { bits[static_cast<std::size_t>(y) * width + x] = v; }
  Eigen::Vector2d pixel_to_map(const Eigen::Vector2d& px) const { return origin + resolution * px; }
};

struct PixelCoord {
  int x = 0;
  int y = 0;
  bool operator==(const PixelCoord&) const = default;
};

struct Branch {
  std::vector<PixelCoord> pixels;  // ordered outward from the intersection
  std::optional<geometry::HomogLine> tangent;  // pixel frame, set by extract_all
  double fit_rms = 0.0;            // pixels
  bool too_short = false;          // fewer than n_branch pixels traced
};

struct PixelCluster {
  std::vector<PixelCoord> pixels;  // junction pixels merged by single linkage
  Eigen::Vector2d centroid{0, 0};
};

struct DetectedIntersection {
  Eigen::Vector2d center_raw_px{0, 0};
  geometry::HomogPoint center_refined;          // map coordinates
  std::vector<Branch> branches;                 // pixel frame
  std::vector<geometry::HomogLine> tangents;    // map frame, post-merge
  int n_branches = 0;                           // N_B
  int n_tangents = 0;                           // N_q
};

struct SkeletonConfig {
  int open_radius = 1;
  int close_radius = 1;
  double merge_radius_px = 10.0;
  double delta_angle_rad = 10.0 * geometry::kPi / 180.0;  // tangent merge threshold
  int n_branch = 15;              // pixels traced per branch
  double fit_tol_px = 0.5;        // max RMS residual of a tangent fit
  double refine_tol_px = 1.5;     // max tangent distance from the refined center
};

// Paint a thick segment (pixel coordinates, inclusive width) into the raster.
void stamp_segment(RoadRaster& raster, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                   double width_px);

// Morphological opening then closing with disk structuring elements.
RoadRaster clean_binary(const RoadRaster& raster, int open_radius, int close_radius);

// Iterative thinning to a one-pixel-wide 8-connected skeleton. Runs until a
// full pass makes no change, so the result is a fixed point.
RoadRaster skeletonize(const RoadRaster& raster);

// Skeleton pixels with >= 3 skeleton neighbors, single-linkage clustered at
// distance <= merge_radius.
std::vector<PixelCluster> detect_intersections(const RoadRaster& skel, double merge_radius);

// One branch per skeleton arm leaving the cluster, traced up to n_branch
// pixels without re-entering the cluster or another junction.
std::vector<Branch> extract_branches(const RoadRaster& skel, const PixelCluster& cluster,
                                     int n_branch);

// Total-least-squares line through the branch pixels (pixel frame). Rejects
// when the RMS perpendicular residual exceeds fit_tol or the branch is short.
// Throws TooFewPoints for branches with fewer than 2 distinct pixels.
std::optional<geometry::HomogLine> fit_tangent(const Branch& branch, double fit_tol,
                                               double* rms_out = nullptr);

// Single-linkage clustering of fitted branch lines by undirected angle; each
// cluster is refit on the union of its branches' pixels.
std::vector<geometry::HomogLine> merge_tangents(std::span<const Branch> branches,
                                                double delta_angle);

// Least-squares meet of the tangents (pixel frame).
geometry::HomogPoint refine_center(std::span<const geometry::HomogLine> tangents);

// Full pipeline. Intersections with a short branch, a rejected tangent fit,
// fewer than 3 branches, or an unrefinable center are discarded.
std::vector<DetectedIntersection> extract_all(const RoadRaster& raster, const SkeletonConfig& cfg);

}  // namespace roadloc::skeleton
