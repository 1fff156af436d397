#include "roadloc/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace roadloc::features {

namespace geom = roadloc::geometry;

Intersection transform_intersection(const geom::Homography& h, const Intersection& x) {
  Intersection out;
  out.id = x.id;
  out.center = h.apply(x.center);
  out.n_branches = x.n_branches;
  for (const auto& t : x.tangents) out.tangents.push_back(geom::transform_line(h, t));
  return out;
}

std::size_t descriptor_length(int nq1, int nq2) {
  const auto c4 = [](int n) -> std::size_t {
    if (n < 4) return 0;
    return static_cast<std::size_t>(n) * (n - 1) * (n - 2) * (n - 3) / 24;
  };
  return c4(nq1 + 1) + c4(nq2 + 1);
}

namespace {

// Cross ratios of all 4-subsets of a pencil given by angles in list order.
// Subsets are enumerated in lexicographic order of list positions.
std::vector<double> pencil_cross_ratios(const std::vector<double>& angles) {
  const int n = static_cast<int>(angles.size());
  std::vector<double> out;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (int k = j + 1; k < n; ++k)
        for (int l = k + 1; l < n; ++l)
          out.push_back(geom::cross_ratio_directions(angles[i], angles[j], angles[k], angles[l]));
  return out;
}

}  // namespace

std::vector<std::uint32_t> TupleFeature::tangent_order(int e, Orientation o) const {
  std::vector<std::uint32_t> order = order_ccw[static_cast<std::size_t>(e)];
  if (o == Orientation::CW) std::reverse(order.begin(), order.end());
  return order;
}

std::vector<double> TupleFeature::descriptor(bool swapped, Orientation o1, Orientation o2) const {
  const int e1 = swapped ? 1 : 0;
  const int e2 = swapped ? 0 : 1;
  const auto& first = dc[e1][static_cast<std::size_t>(o1)];
  const auto& second = dc[e2][static_cast<std::size_t>(o2)];
  std::vector<double> out;
  out.reserve(first.size() + second.size());
  out.insert(out.end(), first.begin(), first.end());
  out.insert(out.end(), second.begin(), second.end());
  return out;
}

std::optional<TupleFeature> build_tuple(const Intersection& a, const Intersection& b,
                                        const TupleConfig& cfg, TupleReject* why) {
  const auto reject = [&](TupleReject r) -> std::optional<TupleFeature> {
    if (why) *why = r;
    return std::nullopt;
  };
  if (why) *why = TupleReject::None;
  if (a.id == b.id) throw std::invalid_argument("build_tuple: intersections must be distinct");

  const double dist = (a.center - b.center).norm();
  if (!(dist < cfg.d_max)) return reject(TupleReject::TooFar);
  if (a.n_tangents() < 2 || b.n_tangents() < 2) return reject(TupleReject::TooFewLines);

  // canonical ordering: larger (N_B, N_q) first, ids break exact ties
  const auto rank = [](const Intersection& x) {
    return std::make_tuple(x.n_branches, x.n_tangents());
  };
  const bool swap_ends = rank(b) > rank(a) || (rank(b) == rank(a) && b.id < a.id);
  const Intersection& first = swap_ends ? b : a;
  const Intersection& second = swap_ends ? a : b;

  TupleFeature t;
  t.p1 = first;
  t.p2 = second;
  try {
    t.connection = geom::line_through_points(
        geom::HomogPoint(first.center.x(), first.center.y()),
        geom::HomogPoint(second.center.x(), second.center.y()));
  } catch (const CoincidentPoints&) {
    return reject(TupleReject::DegenerateTangent);
  }
  t.key.v = {static_cast<std::uint16_t>(first.n_branches),
             static_cast<std::uint16_t>(second.n_branches),
             static_cast<std::uint16_t>(first.n_tangents()),
             static_cast<std::uint16_t>(second.n_tangents())};

  const double conn_angle = t.connection.direction().radians();
  for (int e = 0; e < 2; ++e) {
    const Intersection& x = t.end(e);
    std::vector<double> rel(x.tangents.size());
    for (std::size_t i = 0; i < x.tangents.size(); ++i) {
      rel[i] = geom::wrap_pi(x.tangents[i].direction().radians() - conn_angle);
      const double sep = std::min(rel[i], geom::kPi - rel[i]);
      if (sep < cfg.delta_sep_rad) return reject(TupleReject::DegenerateTangent);
    }
    auto& order = t.order_ccw[static_cast<std::size_t>(e)];
    order.resize(rel.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t i, std::uint32_t j) { return rel[i] < rel[j]; });

    std::vector<double> ccw_angles = {0.0}, cw_angles = {0.0};
    for (std::uint32_t i : order) ccw_angles.push_back(rel[i]);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      cw_angles.push_back(geom::kPi - rel[*it]);
    try {
      t.dc[static_cast<std::size_t>(e)][static_cast<std::size_t>(Orientation::CCW)] =
          pencil_cross_ratios(ccw_angles);
      t.dc[static_cast<std::size_t>(e)][static_cast<std::size_t>(Orientation::CW)] =
          pencil_cross_ratios(cw_angles);
    } catch (const DuplicateLines&) {
      return reject(TupleReject::DegenerateTangent);
    }
  }
  return t;
}

namespace {

bool within_relative(const std::vector<double>& q, const std::vector<double>& r,
                     double delta_cr, double eps_abs) {
  if (q.size() != r.size()) return false;
  for (std::size_t i = 0; i < q.size(); ++i)
    if (std::abs(q[i] - r[i]) > delta_cr * std::max(std::abs(q[i]), eps_abs)) return false;
  return true;
}

TangentCorrespondence make_correspondence(const TupleFeature& q, const TupleFeature& r,
                                          const OrientationCombo& combo) {
  TangentCorrespondence corr;
  corr.line_pairs.push_back({q.connection, r.connection});
  const int q_ends[2] = {combo.swapped ? 1 : 0, combo.swapped ? 0 : 1};
  const Orientation q_orients[2] = {combo.o1, combo.o2};
  for (int side = 0; side < 2; ++side) {
    const auto q_order = q.tangent_order(q_ends[side], q_orients[side]);
    const auto r_order = r.tangent_order(side, Orientation::CW);
    for (std::size_t m = 0; m < q_order.size(); ++m)
      corr.line_pairs.push_back({q.end(q_ends[side]).tangents[q_order[m]],
                                 r.end(side).tangents[r_order[m]]});
  }
  return corr;
}

}  // namespace

std::vector<MatchResult> tuple_match_check(const TupleFeature& q, const TupleFeature& r,
                                           double delta_cr, double eps_abs) {
  std::vector<MatchResult> results;
  const std::vector<double> rd = r.descriptor_cw();
  for (const bool swapped : {false, true}) {
    const BranchKey qkey = swapped ? q.key.swapped() : q.key;
    if (qkey != r.key) continue;
    for (const Orientation o1 : {Orientation::CW, Orientation::CCW})
      for (const Orientation o2 : {Orientation::CW, Orientation::CCW}) {
        const std::vector<double> qd = q.descriptor(swapped, o1, o2);
        if (!within_relative(qd, rd, delta_cr, eps_abs)) continue;
        const OrientationCombo combo{swapped, o1, o2};
        results.push_back({combo, make_correspondence(q, r, combo)});
      }
  }
  return results;
}

}  // namespace roadloc::features
