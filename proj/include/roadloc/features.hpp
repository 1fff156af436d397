#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "roadloc/geometry.hpp"

namespace roadloc::features {

// Road intersection in map coordinates: the matching primitive. The type of
// an intersection is the pair (branch count, tangent count).
struct Intersection {
  std::uint32_t id = 0;
  Eigen::Vector2d center{0, 0};
  std::vector<geometry::HomogLine> tangents;
  int n_branches = 0;

  int n_tangents() const { return static_cast<int>(tangents.size()); }
  bool same_type(const Intersection& o) const {
    return n_branches == o.n_branches && tangents.size() == o.tangents.size();
  }
};

// Map an intersection through a homography: center as a point, tangents by
// the inverse-transpose rule.
Intersection transform_intersection(const geometry::Homography& h, const Intersection& x);

// Branch descriptor [N_B(P1), N_B(P2), N_q(P1), N_q(P2)]: the hash key for
// candidate retrieval.
struct BranchKey {
  std::array<std::uint16_t, 4> v{};

  auto operator<=>(const BranchKey&) const = default;
  BranchKey swapped() const { return BranchKey{{v[1], v[0], v[3], v[2]}}; }
  bool symmetric() const { return v[0] == v[1] && v[2] == v[3]; }
};

enum class Orientation : std::uint8_t { CW = 0, CCW = 1 };

struct TupleConfig {
  double d_max = 3000.0;                                   // meters
  double delta_sep_rad = 10.0 * geometry::kPi / 180.0;     // tangent/connection gate
};

enum class TupleReject { None, TooFar, DegenerateTangent, TooFewLines };

// Number of cross ratios a tuple with the given tangent counts carries:
// C(nq+1, 4) per intersection (tangents plus the connection line).
std::size_t descriptor_length(int nq1, int nq2);

// Two-road-intersections tuple: a pair of intersections, the line joining
// their centers, and the cross ratios of every 4-subset of each center's
// line pencil, enumerated in rotational order starting at the connection.
struct TupleFeature {
  Intersection p1, p2;  // canonical order: (N_B, N_q) lexicographically descending
  geometry::HomogLine connection;
  BranchKey key;
  // tangent indices sorted counterclockwise from the connection, per end
  std::array<std::vector<std::uint32_t>, 2> order_ccw;
  // cross-ratio segments indexed [end][orientation]
  std::array<std::array<std::vector<double>, 2>, 2> dc;

  const Intersection& end(int e) const { return e == 0 ? p1 : p2; }
  // Full descriptor for one of the assignment/orientation hypotheses. The
  // swapped flag matches this tuple's second end against the other's first.
  std::vector<double> descriptor(bool swapped, Orientation o1, Orientation o2) const;
  std::vector<double> descriptor_cw() const { return descriptor(false, Orientation::CW, Orientation::CW); }
  // tangent order realizing an orientation (cw = reversed ccw)
  std::vector<std::uint32_t> tangent_order(int e, Orientation o) const;
};

// Build the tuple for a pair of intersections, or reject it: ends too far
// apart, a tangent within delta_sep of the connection line, or fewer than two
// tangents at either end.
std::optional<TupleFeature> build_tuple(const Intersection& a, const Intersection& b,
                                        const TupleConfig& cfg, TupleReject* why = nullptr);

struct OrientationCombo {
  bool swapped = false;
  Orientation o1 = Orientation::CW;
  Orientation o2 = Orientation::CW;
};

// Ordered line pairs (query line, reference line) induced by a passing combo;
// the connection pair comes first, then tangents by rank.
struct TangentCorrespondence {
  std::vector<geometry::LinePair> line_pairs;
};

struct MatchResult {
  OrientationCombo combo;
  TangentCorrespondence correspondence;
};

// The matching rules: branch descriptors must agree (directly, or swapped
// when the key permits) and every cross-ratio dimension of one of the four
// orientation hypotheses must agree within the relative tolerance
// |q_i - r_i| <= delta_cr * max(|q_i|, eps_abs), where q runs over this
// tuple's descriptor variants and r is the reference descriptor in cw order.
std::vector<MatchResult> tuple_match_check(const TupleFeature& q, const TupleFeature& r,
                                           double delta_cr, double eps_abs = 1e-3);

}  // namespace roadloc::features
