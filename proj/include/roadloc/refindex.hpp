#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "roadloc/features.hpp"
#include "roadloc/skeleton.hpp"

namespace roadloc::refindex {

struct VectorMap {
  std::vector<std::vector<Eigen::Vector2d>> polylines;  // map meters

  Eigen::AlignedBox2d bounds() const;
};

enum class IngestMode { Exact, Raster };

struct IngestConfig {
  IngestMode mode = IngestMode::Exact;
  // exact mode: analytic junctions from segment crossings and endpoint meets
  double merge_tol = 1e-6;  // meters
  double delta_angle_rad = 10.0 * geometry::kPi / 180.0;
  // raster mode: rasterize then run the skeleton pipeline
  double resolution = 1.0;     // meters per pixel
  double stroke_width_m = 5.0;
  skeleton::SkeletonConfig skel;
};

// Turn a vector map into intersections with tangent lines. Intersections are
// numbered 0..n-1 in (x, y) order. Throws EmptyMap.
std::vector<features::Intersection> ingest_vector_map(const VectorMap& map,
                                                      const IngestConfig& cfg);

// Uniform hash grid over intersection centers.
class SpatialGrid {
 public:
  SpatialGrid() = default;
  SpatialGrid(std::span<const features::Intersection> xs, double cell_size);

  // All unordered pairs (a < b) with |center_a - center_b| < dist,
  // lexicographically sorted.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs_within(double dist) const;

  // Nearest intersection of the given type within radius: (index, distance).
  std::optional<std::pair<std::uint32_t, double>> nearest_same_type(
      const Eigen::Vector2d& p, int n_branches, int n_tangents, double radius) const;

  // All intersections of the given type within radius, ascending (distance, index).
  std::vector<std::pair<std::uint32_t, double>> same_type_within(
      const Eigen::Vector2d& p, int n_branches, int n_tangents, double radius) const;

 private:
  struct Entry {
    Eigen::Vector2d center;
    int n_branches = 0;
    int n_tangents = 0;
  };
  double cell_ = 100.0;
  std::vector<Entry> entries_;
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::uint32_t>> cells_;
};

struct TupleRecord {
  std::uint32_t a = 0;  // canonical first intersection index
  std::uint32_t b = 0;
  bool operator==(const TupleRecord&) const = default;
};

struct IndexConfig {
  double d_max = 3000.0;  // meters, tuple span gate
  double delta_sep_rad = 10.0 * geometry::kPi / 180.0;
  double grid_cell = 100.0;
  std::uint32_t tree_linear_threshold = 64;  // buckets below this use linear scan
};

// Hash table keyed by branch descriptor whose buckets hold the tuples of that
// type plus a range-search tree over their cross-ratio descriptors, with a
// spatial grid over the intersections on the side.
class ReferenceIndex {
 public:
  const std::vector<features::Intersection>& intersections() const { return xs_; }
  const IndexConfig& config() const { return cfg_; }
  std::uint64_t tuple_count() const;
  // Bucket size for a branch key; 0 when the type is absent.
  std::uint64_t rarity(const features::BranchKey& key) const;

  features::TupleFeature rebuild_tuple(const TupleRecord& rec) const;

  struct Candidate {
    TupleRecord record;
    features::TupleFeature tuple;
    std::vector<features::MatchResult> matches;
  };
  struct QueryResult {
    bool capped = false;                 // prefilter exceeded max_candidates
    std::uint64_t prefilter_count = 0;   // records passing the box queries
    std::vector<Candidate> candidates;   // verified matches, deterministic order
  };
  // Box queries over the bucket trees for the query's orientation variants,
  // each hit verified by tuple_match_check. Equals a linear scan of the
  // bucket through the same check.
  QueryResult query_candidates(const features::TupleFeature& q, double delta_cr,
                               double eps_abs = 1e-3,
                               std::uint64_t max_candidates = UINT64_MAX) const;

  std::optional<std::pair<std::uint32_t, double>> nearest_same_type(
      const Eigen::Vector2d& p, int n_branches, int n_tangents, double radius) const {
    return grid_.nearest_same_type(p, n_branches, n_tangents, radius);
  }
  std::vector<std::pair<std::uint32_t, double>> same_type_within(
      const Eigen::Vector2d& p, int n_branches, int n_tangents, double radius) const {
    return grid_.same_type_within(p, n_branches, n_tangents, radius);
  }

  struct BucketStat {
    features::BranchKey key;
    std::uint32_t dim = 0;
    std::uint64_t size = 0;
  };
  std::vector<BucketStat> bucket_stats() const;
  std::vector<TupleRecord> bucket_records(const features::BranchKey& key) const;

  bool content_equals(const ReferenceIndex& other) const;

 private:
  friend ReferenceIndex build_index(std::vector<features::Intersection>, const IndexConfig&);
  friend void save_index(const ReferenceIndex&, const std::string&);
  friend ReferenceIndex load_index(const std::string&);

  struct Bucket {
    std::uint32_t dim = 0;
    std::vector<TupleRecord> records;
    std::vector<double> dc;  // records.size() * dim, row-major
    // kd-tree over descriptor rows; empty when linear scan is used
    struct Node {
      std::uint32_t row = 0;
      std::int32_t left = -1;
      std::int32_t right = -1;
    };
    std::vector<Node> nodes;
    std::int32_t root = -1;

    void build_tree(std::uint32_t linear_threshold);
    void range_query(std::span<const double> lo, std::span<const double> hi,
                     std::vector<std::uint32_t>& out) const;
  };

  void finalize();  // grid + trees, after xs_/buckets_ are filled

  IndexConfig cfg_;
  std::vector<features::Intersection> xs_;
  std::map<features::BranchKey, Bucket> buckets_;
  SpatialGrid grid_;
};

// Enumerate admissible pairs through the spatial grid, build tuples, group
// them by branch key. Throws NoTuples when nothing survives the gates.
ReferenceIndex build_index(std::vector<features::Intersection> intersections,
                           const IndexConfig& cfg);

// Versioned little-endian binary format, magic "RLIX", CRC-checked.
void save_index(const ReferenceIndex& index, const std::string& path);
ReferenceIndex load_index(const std::string& path);

}  // namespace roadloc::refindex
