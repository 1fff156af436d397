#include "roadloc/refindex.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>

namespace roadloc::refindex {

namespace geom = roadloc::geometry;

Eigen::AlignedBox2d VectorMap::bounds() const {
  Eigen::AlignedBox2d box;
  for (const auto& pl : polylines)
    for (const auto& p : pl) box.extend(p);
  return box;
}

// ---------------------------------------------------------------------------
// ingestion
// ---------------------------------------------------------------------------

namespace {

struct Segment {
  Eigen::Vector2d a, b;
};

double cross2(const Eigen::Vector2d& u, const Eigen::Vector2d& v) {
  return u.x() * v.y() - u.y() * v.x();
}

// Intersection point of two segments including endpoint touches; empty for
// parallel pairs.
std::optional<Eigen::Vector2d> segment_meet(const Segment& s, const Segment& t, double tol) {
  const Eigen::Vector2d r = s.b - s.a;
  const Eigen::Vector2d q = t.b - t.a;
  const double denom = cross2(r, q);
  const double lr = r.norm(), lq = q.norm();
  if (lr <= tol || lq <= tol) return std::nullopt;
  if (std::abs(denom) <= 1e-12 * lr * lq) return std::nullopt;
  const Eigen::Vector2d d = t.a - s.a;
  const double u = cross2(d, q) / denom;
  const double v = cross2(d, r) / denom;
  const double tu = tol / lr, tv = tol / lq;
  if (u < -tu || u > 1 + tu || v < -tv || v > 1 + tv) return std::nullopt;
  return s.a + u * r;
}

double axial_mean(std::span<const double> angles) {
  double sx = 0, sy = 0;
  for (double a : angles) {
    sx += std::cos(2 * a);
    sy += std::sin(2 * a);
  }
  return geom::wrap_pi(0.5 * std::atan2(sy, sx));
}

std::vector<features::Intersection> ingest_exact(const VectorMap& map, const IngestConfig& cfg) {
  std::vector<Segment> segs;
  for (const auto& pl : map.polylines)
    for (std::size_t i = 0; i + 1 < pl.size(); ++i)
      if ((pl[i + 1] - pl[i]).norm() > cfg.merge_tol) segs.push_back({pl[i], pl[i + 1]});
  if (segs.empty()) throw EmptyMap();

  // candidate events from segment pairs sharing a grid cell
  const double cell = std::max(1.0, map.bounds().diagonal().norm() / 256.0);
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::uint32_t>> grid;
  const auto cell_of = [&](const Eigen::Vector2d& p) {
    return std::make_pair(static_cast<std::int64_t>(std::floor(p.x() / cell)),
                          static_cast<std::int64_t>(std::floor(p.y() / cell)));
  };
  for (std::uint32_t i = 0; i < segs.size(); ++i) {
    const auto [cx0, cy0] = cell_of(segs[i].a.cwiseMin(segs[i].b));
    const auto [cx1, cy1] = cell_of(segs[i].a.cwiseMax(segs[i].b));
    for (std::int64_t cy = cy0; cy <= cy1; ++cy)
      for (std::int64_t cx = cx0; cx <= cx1; ++cx) grid[{cx, cy}].push_back(i);
  }
  std::set<std::pair<std::uint32_t, std::uint32_t>> tested;
  struct Event {
    Eigen::Vector2d p;
    std::uint32_t s0, s1;
  };
  std::vector<Event> events;
  for (const auto& [key, ids] : grid)
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = i + 1; j < ids.size(); ++j) {
        const auto pr = std::minmax(ids[i], ids[j]);
        if (!tested.insert(pr).second) continue;
        if (const auto p = segment_meet(segs[pr.first], segs[pr.second], cfg.merge_tol))
          events.push_back({*p, pr.first, pr.second});
      }

  // cluster events within merge_tol (single linkage)
  std::vector<int> parent(events.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  {
    const double ecell = std::max(cfg.merge_tol, 1e-9);
    std::map<std::pair<std::int64_t, std::int64_t>, std::vector<int>> egrid;
    for (std::size_t i = 0; i < events.size(); ++i)
      egrid[{static_cast<std::int64_t>(std::floor(events[i].p.x() / ecell)),
             static_cast<std::int64_t>(std::floor(events[i].p.y() / ecell))}]
          .push_back(static_cast<int>(i));
    for (const auto& [key, ids] : egrid)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto it = egrid.find({key.first + dx, key.second + dy});
          if (it == egrid.end()) continue;
          for (int a : ids)
            for (int b : it->second)
              if (a < b && (events[a].p - events[b].p).norm() <= cfg.merge_tol)
                parent[find(a)] = find(b);
        }
  }
  std::map<int, std::vector<int>> clusters;
  for (std::size_t i = 0; i < events.size(); ++i)
    clusters[find(static_cast<int>(i))].push_back(static_cast<int>(i));

  std::vector<features::Intersection> out;
  for (const auto& [root, members] : clusters) {
    Eigen::Vector2d center(0, 0);
    std::set<std::uint32_t> seg_ids;
    for (int m : members) {
      center += events[m].p;
      seg_ids.insert(events[m].s0);
      seg_ids.insert(events[m].s1);
    }
    center /= static_cast<double>(members.size());

    int n_branches = 0;
    std::vector<double> dirs;
    const double end_tol = std::max(cfg.merge_tol * 4, 1e-9);
    for (std::uint32_t si : seg_ids) {
      const Segment& s = segs[si];
      const double da = (center - s.a).norm();
      const double db = (center - s.b).norm();
      const Eigen::Vector2d d = s.b - s.a;
      const double ang = geom::wrap_pi(std::atan2(d.y(), d.x()));
      if (da <= end_tol || db <= end_tol) {
        n_branches += 1;
        dirs.push_back(ang);
      } else {
        n_branches += 2;
        dirs.push_back(ang);
        dirs.push_back(ang);
      }
    }
    if (n_branches < 3) continue;

    // merge branch directions into tangents (single linkage mod pi)
    std::vector<int> dparent(dirs.size());
    std::iota(dparent.begin(), dparent.end(), 0);
    std::function<int(int)> dfind = [&](int i) {
      while (dparent[i] != i) i = dparent[i] = dparent[dparent[i]];
      return i;
    };
    for (std::size_t i = 0; i < dirs.size(); ++i)
      for (std::size_t j = i + 1; j < dirs.size(); ++j)
        if (geom::angle_between(geom::Direction(dirs[i]), geom::Direction(dirs[j])) <
            cfg.delta_angle_rad)
          dparent[dfind(static_cast<int>(i))] = dfind(static_cast<int>(j));
    std::map<int, std::vector<double>> groups;
    for (std::size_t i = 0; i < dirs.size(); ++i) groups[dfind(static_cast<int>(i))].push_back(dirs[i]);
    if (groups.size() < 2) continue;

    features::Intersection x;
    x.center = center;
    x.n_branches = n_branches;
    std::vector<double> merged;
    for (const auto& [droot, group] : groups) merged.push_back(axial_mean(group));
    std::sort(merged.begin(), merged.end());
    for (double a : merged)
      x.tangents.push_back(geom::HomogLine::through_point_at_angle(center, a));
    out.push_back(std::move(x));
  }

  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.center.x(), a.center.y()) < std::tie(b.center.x(), b.center.y());
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<std::uint32_t>(i);
  return out;
}

std::vector<features::Intersection> ingest_raster(const VectorMap& map, const IngestConfig& cfg) {
  if (map.polylines.empty()) throw EmptyMap();
  const Eigen::AlignedBox2d box = map.bounds();
  const double margin = cfg.stroke_width_m + 8.0 * cfg.resolution;
  const Eigen::Vector2d origin = box.min() - Eigen::Vector2d(margin, margin);
  const Eigen::Vector2d extent = box.max() + Eigen::Vector2d(margin, margin) - origin;
  const int w = static_cast<int>(std::ceil(extent.x() / cfg.resolution)) + 1;
  const int h = static_cast<int>(std::ceil(extent.y() / cfg.resolution)) + 1;

  skeleton::RoadRaster raster = skeleton::RoadRaster::blank(w, h, cfg.resolution, origin);
  for (const auto& pl : map.polylines)
    for (std::size_t i = 0; i + 1 < pl.size(); ++i)
      skeleton::stamp_segment(raster, (pl[i] - origin) / cfg.resolution,
                              (pl[i + 1] - origin) / cfg.resolution,
                              cfg.stroke_width_m / cfg.resolution);

  std::vector<features::Intersection> out;
  for (const auto& di : skeleton::extract_all(raster, cfg.skel)) {
    features::Intersection x;
    x.center = di.center_refined.dehom();
    x.n_branches = di.n_branches;
    x.tangents = di.tangents;
    out.push_back(std::move(x));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.center.x(), a.center.y()) < std::tie(b.center.x(), b.center.y());
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<std::uint32_t>(i);
  return out;
}

}  // namespace

std::vector<features::Intersection> ingest_vector_map(const VectorMap& map,
                                                      const IngestConfig& cfg) {
  if (map.polylines.empty()) throw EmptyMap();
  return cfg.mode == IngestMode::Exact ? ingest_exact(map, cfg) : ingest_raster(map, cfg);
}

// ---------------------------------------------------------------------------
// spatial grid
// ---------------------------------------------------------------------------

SpatialGrid::SpatialGrid(std::span<const features::Intersection> xs, double cell_size)
    : cell_(cell_size) {
  entries_.reserve(xs.size());
  for (std::uint32_t i = 0; i < xs.size(); ++i) {
    entries_.push_back({xs[i].center, xs[i].n_branches, xs[i].n_tangents()});
    cells_[{static_cast<std::int64_t>(std::floor(xs[i].center.x() / cell_)),
            static_cast<std::int64_t>(std::floor(xs[i].center.y() / cell_))}]
        .push_back(i);
  }
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> SpatialGrid::pairs_within(double dist) const {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  const std::int64_t ring = static_cast<std::int64_t>(std::ceil(dist / cell_));
  const auto collect = [&](const std::vector<std::uint32_t>& as,
                           const std::vector<std::uint32_t>& bs) {
    for (std::uint32_t a : as)
      for (std::uint32_t b : bs)
        if (a < b && (entries_[a].center - entries_[b].center).norm() < dist)
          out.emplace_back(a, b);
  };
  const std::uint64_t ring_cells = static_cast<std::uint64_t>(2 * ring + 1) * (2 * ring + 1);
  if (ring_cells < cells_.size()) {
    for (const auto& [key, ids] : cells_)
      for (std::int64_t dy = -ring; dy <= ring; ++dy)
        for (std::int64_t dx = -ring; dx <= ring; ++dx) {
          const auto it = cells_.find({key.first + dx, key.second + dy});
          if (it != cells_.end()) collect(ids, it->second);
        }
  } else {
    // the ring covers everything: iterate occupied cell pairs instead
    for (auto it1 = cells_.begin(); it1 != cells_.end(); ++it1)
      for (auto it2 = cells_.begin(); it2 != cells_.end(); ++it2) {
        if (std::abs(it1->first.first - it2->first.first) > ring ||
            std::abs(it1->first.second - it2->first.second) > ring)
          continue;
        collect(it1->second, it2->second);
      }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<std::uint32_t, double>> SpatialGrid::same_type_within(
    const Eigen::Vector2d& p, int n_branches, int n_tangents, double radius) const {
  std::vector<std::pair<std::uint32_t, double>> out;
  const std::int64_t ring = static_cast<std::int64_t>(std::ceil(radius / cell_));
  const std::int64_t cx = static_cast<std::int64_t>(std::floor(p.x() / cell_));
  const std::int64_t cy = static_cast<std::int64_t>(std::floor(p.y() / cell_));
  for (std::int64_t dy = -ring; dy <= ring; ++dy)
    for (std::int64_t dx = -ring; dx <= ring; ++dx) {
      const auto it = cells_.find({cx + dx, cy + dy});
      if (it == cells_.end()) continue;
      for (std::uint32_t i : it->second) {
        const Entry& e = entries_[i];
        if (e.n_branches != n_branches || e.n_tangents != n_tangents) continue;
        const double d = (e.center - p).norm();
        if (d <= radius) out.emplace_back(i, d);
      }
    }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.second, a.first) < std::tie(b.second, b.first);
  });
  return out;
}

std::optional<std::pair<std::uint32_t, double>> SpatialGrid::nearest_same_type(
    const Eigen::Vector2d& p, int n_branches, int n_tangents, double radius) const {
  const std::int64_t ring = static_cast<std::int64_t>(std::ceil(radius / cell_));
  const std::int64_t cx = static_cast<std::int64_t>(std::floor(p.x() / cell_));
  const std::int64_t cy = static_cast<std::int64_t>(std::floor(p.y() / cell_));
  std::optional<std::pair<std::uint32_t, double>> best;
  for (std::int64_t dy = -ring; dy <= ring; ++dy)
    for (std::int64_t dx = -ring; dx <= ring; ++dx) {
      const auto it = cells_.find({cx + dx, cy + dy});
      if (it == cells_.end()) continue;
      for (std::uint32_t i : it->second) {
        const Entry& e = entries_[i];
        if (e.n_branches != n_branches || e.n_tangents != n_tangents) continue;
        const double d = (e.center - p).norm();
        if (d > radius) continue;
        if (!best || d < best->second || (d == best->second && i < best->first))
          best = std::make_pair(i, d);
      }
    }
  return best;
}

// ---------------------------------------------------------------------------
// bucket trees
// ---------------------------------------------------------------------------

void ReferenceIndex::Bucket::build_tree(std::uint32_t linear_threshold) {
  nodes.clear();
  root = -1;
  if (dim == 0 || records.size() < linear_threshold) return;
  std::vector<std::uint32_t> rows(records.size());
  std::iota(rows.begin(), rows.end(), 0u);
  nodes.reserve(records.size());
  const std::function<std::int32_t(std::size_t, std::size_t, std::uint32_t)> build =
      [&](std::size_t begin, std::size_t end, std::uint32_t depth) -> std::int32_t {
    if (begin >= end) return -1;
    const std::uint32_t axis = depth % dim;
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(rows.begin() + begin, rows.begin() + mid, rows.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double va = dc[static_cast<std::size_t>(a) * dim + axis];
                       const double vb = dc[static_cast<std::size_t>(b) * dim + axis];
                       return va < vb || (va == vb && a < b);
                     });
    const std::int32_t id = static_cast<std::int32_t>(nodes.size());
    nodes.push_back({rows[mid], -1, -1});
    const std::int32_t left = build(begin, mid, depth + 1);
    const std::int32_t right = build(mid + 1, end, depth + 1);
    nodes[static_cast<std::size_t>(id)].left = left;
    nodes[static_cast<std::size_t>(id)].right = right;
    return id;
  };
  root = build(0, rows.size(), 0);
}

void ReferenceIndex::Bucket::range_query(std::span<const double> lo, std::span<const double> hi,
                                         std::vector<std::uint32_t>& out) const {
  if (dim == 0) {
    for (std::uint32_t i = 0; i < records.size(); ++i) out.push_back(i);
    return;
  }
  const auto row_in_box = [&](std::uint32_t row) {
    for (std::uint32_t d = 0; d < dim; ++d) {
      const double v = dc[static_cast<std::size_t>(row) * dim + d];
      if (v < lo[d] || v > hi[d]) return false;
    }
    return true;
  };
  if (root < 0) {
    for (std::uint32_t i = 0; i < records.size(); ++i)
      if (row_in_box(i)) out.push_back(i);
    return;
  }
  const std::function<void(std::int32_t, std::uint32_t)> walk = [&](std::int32_t id,
                                                                    std::uint32_t depth) {
    if (id < 0) return;
    const Node& n = nodes[static_cast<std::size_t>(id)];
    const std::uint32_t axis = depth % dim;
    const double v = dc[static_cast<std::size_t>(n.row) * dim + axis];
    if (row_in_box(n.row)) out.push_back(n.row);
    if (v >= lo[axis]) walk(n.left, depth + 1);
    if (v <= hi[axis]) walk(n.right, depth + 1);
  };
  walk(root, 0);
}

// ---------------------------------------------------------------------------
// index build and queries
// ---------------------------------------------------------------------------

void ReferenceIndex::finalize() {
  grid_ = SpatialGrid(xs_, cfg_.grid_cell);
  for (auto& [key, bucket] : buckets_) bucket.build_tree(cfg_.tree_linear_threshold);
}

ReferenceIndex build_index(std::vector<features::Intersection> intersections,
                           const IndexConfig& cfg) {
  ReferenceIndex idx;
  idx.cfg_ = cfg;
  idx.xs_ = std::move(intersections);
  for (std::uint32_t i = 0; i < idx.xs_.size(); ++i) idx.xs_[i].id = i;

  idx.grid_ = SpatialGrid(idx.xs_, cfg.grid_cell);
  const features::TupleConfig tcfg{cfg.d_max, cfg.delta_sep_rad};
  std::uint64_t total = 0;
  for (const auto& [a, b] : idx.grid_.pairs_within(cfg.d_max)) {
    const auto t = features::build_tuple(idx.xs_[a], idx.xs_[b], tcfg);
    if (!t) continue;
    auto& bucket = idx.buckets_[t->key];
    const std::vector<double> dc = t->descriptor_cw();
    if (bucket.records.empty()) bucket.dim = static_cast<std::uint32_t>(dc.size());
    bucket.records.push_back({t->p1.id, t->p2.id});
    bucket.dc.insert(bucket.dc.end(), dc.begin(), dc.end());
    ++total;
  }
  if (total == 0) throw NoTuples();
  for (auto& [key, bucket] : idx.buckets_) bucket.build_tree(cfg.tree_linear_threshold);
  return idx;
}

std::uint64_t ReferenceIndex::tuple_count() const {
  std::uint64_t n = 0;
  for (const auto& [key, bucket] : buckets_) n += bucket.records.size();
  return n;
}

std::uint64_t ReferenceIndex::rarity(const features::BranchKey& key) const {
  const auto it = buckets_.find(key);
  return it == buckets_.end() ? 0 : it->second.records.size();
}

features::TupleFeature ReferenceIndex::rebuild_tuple(const TupleRecord& rec) const {
  const features::TupleConfig tcfg{cfg_.d_max, cfg_.delta_sep_rad};
  const auto t = features::build_tuple(xs_.at(rec.a), xs_.at(rec.b), tcfg);
  if (!t) throw Error("stored tuple is no longer admissible");
  return *t;
}

ReferenceIndex::QueryResult ReferenceIndex::query_candidates(const features::TupleFeature& q,
                                                             double delta_cr, double eps_abs,
                                                             std::uint64_t max_candidates) const {
  QueryResult result;
  // unique (bucket, row) hits over the assignment/orientation variants
  std::vector<std::pair<const features::BranchKey*, std::uint32_t>> hits;
  std::vector<std::uint32_t> rows;
  for (const bool swapped : {false, true}) {
    const features::BranchKey key = swapped ? q.key.swapped() : q.key;
    const auto it = buckets_.find(key);
    if (it == buckets_.end()) continue;
    const Bucket& bucket = it->second;
    if (bucket.dim == 0) {
      // no cross ratios to discriminate on: every record of the bucket passes
      if (bucket.records.size() > max_candidates) {
        result.capped = true;
        result.prefilter_count = bucket.records.size();
        return result;
      }
      for (std::uint32_t r = 0; r < bucket.records.size(); ++r) hits.emplace_back(&it->first, r);
      continue;
    }
    for (const auto o1 : {features::Orientation::CW, features::Orientation::CCW})
      for (const auto o2 : {features::Orientation::CW, features::Orientation::CCW}) {
        const std::vector<double> qd = q.descriptor(swapped, o1, o2);
        if (qd.size() != bucket.dim) continue;
        std::vector<double> lo(qd.size()), hi(qd.size());
        for (std::size_t i = 0; i < qd.size(); ++i) {
          const double half = delta_cr * std::max(std::abs(qd[i]), eps_abs);
          lo[i] = qd[i] - half;
          hi[i] = qd[i] + half;
        }
        rows.clear();
        bucket.range_query(lo, hi, rows);
        if (rows.size() > max_candidates) {
          result.capped = true;
          result.prefilter_count = rows.size();
          return result;
        }
        for (std::uint32_t r : rows) hits.emplace_back(&it->first, r);
      }
  }
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
    return std::tie(*a.first, a.second) < std::tie(*b.first, b.second);
  });
  hits.erase(std::unique(hits.begin(), hits.end()), hits.end());

  result.prefilter_count = hits.size();
  if (result.prefilter_count > max_candidates) {
    result.capped = true;
    return result;
  }
  for (const auto& [key, row] : hits) {
    const Bucket& bucket = buckets_.at(*key);
    const TupleRecord rec = bucket.records[row];
    features::TupleFeature tuple = rebuild_tuple(rec);
    auto matches = features::tuple_match_check(q, tuple, delta_cr, eps_abs);
    if (matches.empty()) continue;
    result.candidates.push_back({rec, std::move(tuple), std::move(matches)});
  }
  return result;
}

std::vector<ReferenceIndex::BucketStat> ReferenceIndex::bucket_stats() const {
  std::vector<BucketStat> out;
  for (const auto& [key, bucket] : buckets_)
    out.push_back({key, bucket.dim, bucket.records.size()});
  return out;
}

std::vector<TupleRecord> ReferenceIndex::bucket_records(const features::BranchKey& key) const {
  const auto it = buckets_.find(key);
  return it == buckets_.end() ? std::vector<TupleRecord>{} : it->second.records;
}

bool ReferenceIndex::content_equals(const ReferenceIndex& other) const {
  if (cfg_.d_max != other.cfg_.d_max || cfg_.delta_sep_rad != other.cfg_.delta_sep_rad ||
      cfg_.grid_cell != other.cfg_.grid_cell ||
      cfg_.tree_linear_threshold != other.cfg_.tree_linear_threshold)
    return false;
  if (xs_.size() != other.xs_.size()) return false;
  for (std::size_t i = 0; i < xs_.size(); ++i) {
    const auto& a = xs_[i];
    const auto& b = other.xs_[i];
    if (a.id != b.id || a.center != b.center || a.n_branches != b.n_branches ||
        a.tangents.size() != b.tangents.size())
      return false;
    for (std::size_t j = 0; j < a.tangents.size(); ++j)
      if (a.tangents[j].coeffs() != b.tangents[j].coeffs()) return false;
  }
  if (buckets_.size() != other.buckets_.size()) return false;
  auto ita = buckets_.begin();
  auto itb = other.buckets_.begin();
  for (; ita != buckets_.end(); ++ita, ++itb) {
    if (ita->first != itb->first || ita->second.dim != itb->second.dim ||
        ita->second.records != itb->second.records || ita->second.dc != itb->second.dc)
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// persistence: "RLIX" magic, version, little-endian payload, trailing CRC32
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'L', 'I', 'X'};
constexpr std::uint32_t kVersion = 1;

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xffffffffu;
  for (std::uint8_t byte : data) c = table[(c ^ byte) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

struct Writer {
  std::vector<std::uint8_t> buf;
  void u16(std::uint16_t v) {
    buf.push_back(static_cast<std::uint8_t>(v));
    buf.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
};

struct Reader {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > data.size()) throw CorruptFile("unexpected end of index file");
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(data[pos] | (data[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
};

}  // namespace

void save_index(const ReferenceIndex& index, const std::string& path) {
  Writer w;
  w.u32(kVersion);
  w.f64(index.cfg_.d_max);
  w.f64(index.cfg_.delta_sep_rad);
  w.f64(index.cfg_.grid_cell);
  w.u32(index.cfg_.tree_linear_threshold);

  w.u32(static_cast<std::uint32_t>(index.xs_.size()));
  for (const auto& x : index.xs_) {
    w.f64(x.center.x());
    w.f64(x.center.y());
    w.u16(static_cast<std::uint16_t>(x.n_branches));
    w.u16(static_cast<std::uint16_t>(x.tangents.size()));
    for (const auto& t : x.tangents) {
      w.f64(t.coeffs().x());
      w.f64(t.coeffs().y());
      w.f64(t.coeffs().z());
    }
  }

  w.u32(static_cast<std::uint32_t>(index.buckets_.size()));
  for (const auto& [key, bucket] : index.buckets_) {
    const std::uint64_t body =
        8 + 4 + 4 + bucket.records.size() * (8 + static_cast<std::uint64_t>(bucket.dim) * 8);
    w.u64(body);  // length prefix for the bucket record
    for (std::uint16_t k : key.v) w.u16(k);
    w.u32(bucket.dim);
    w.u32(static_cast<std::uint32_t>(bucket.records.size()));
    for (std::size_t i = 0; i < bucket.records.size(); ++i) {
      w.u32(bucket.records[i].a);
      w.u32(bucket.records[i].b);
      for (std::uint32_t d = 0; d < bucket.dim; ++d) w.f64(bucket.dc[i * bucket.dim + d]);
    }
  }

  const std::uint32_t crc = crc32(w.buf);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
  Writer tail;
  tail.u32(crc);
  out.write(reinterpret_cast<const char*>(tail.buf.data()), 4);
  if (!out) throw IoFailure("failed writing " + path);
}

ReferenceIndex load_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CorruptFile("bad magic");
  const std::span<const std::uint8_t> payload(bytes.data() + 4, bytes.size() - 8);
  Reader crc_reader{std::span<const std::uint8_t>(bytes.data() + bytes.size() - 4, 4)};
  if (crc32(payload) != crc_reader.u32()) throw CorruptFile("checksum mismatch");

  Reader r{payload};
  if (r.u32() != kVersion) throw CorruptFile("unsupported version");

  ReferenceIndex idx;
  idx.cfg_.d_max = r.f64();
  idx.cfg_.delta_sep_rad = r.f64();
  idx.cfg_.grid_cell = r.f64();
  idx.cfg_.tree_linear_threshold = r.u32();

  const std::uint32_t n_xs = r.u32();
  idx.xs_.reserve(n_xs);
  for (std::uint32_t i = 0; i < n_xs; ++i) {
    features::Intersection x;
    x.id = i;
    const double cx = r.f64();
    const double cy = r.f64();
    x.center = {cx, cy};
    x.n_branches = r.u16();
    const std::uint16_t nq = r.u16();
    for (std::uint16_t j = 0; j < nq; ++j) {
      const double a = r.f64(), b = r.f64(), c = r.f64();
      x.tangents.push_back(geom::HomogLine(Eigen::Vector3d(a, b, c)));
    }
    idx.xs_.push_back(std::move(x));
  }

  const std::uint32_t n_buckets = r.u32();
  for (std::uint32_t bi = 0; bi < n_buckets; ++bi) {
    const std::uint64_t body = r.u64();
    const std::size_t start = r.pos;
    features::BranchKey key;
    for (auto& k : key.v) k = r.u16();
    ReferenceIndex::Bucket bucket;
    bucket.dim = r.u32();
    const std::uint32_t n_records = r.u32();
    bucket.records.reserve(n_records);
    bucket.dc.reserve(static_cast<std::size_t>(n_records) * bucket.dim);
    for (std::uint32_t i = 0; i < n_records; ++i) {
      TupleRecord rec;
      rec.a = r.u32();
      rec.b = r.u32();
      if (rec.a >= n_xs || rec.b >= n_xs) throw CorruptFile("record references missing intersection");
      bucket.records.push_back(rec);
      for (std::uint32_t d = 0; d < bucket.dim; ++d) bucket.dc.push_back(r.f64());
    }
    if (r.pos - start != body) throw CorruptFile("bucket length mismatch");
    idx.buckets_.emplace(key, std::move(bucket));
  }
  idx.finalize();
  return idx;
}

}  // namespace roadloc::refindex
