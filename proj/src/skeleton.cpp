#include "roadloc/skeleton.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace roadloc::skeleton {

namespace {

// 8-neighborhood in the order N, NE, E, SE, S, SW, W, NW (clockwise from
// north, y growing downward). Thinning and transition counts rely on it.
constexpr int kNbr[8][2] = {{0, -1}, {1, -1}, {1, 0},  {1, 1},
                            {0, 1},  {-1, 1}, {-1, 0}, {-1, -1}};

std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> offs;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) offs.emplace_back(dx, dy);
  return offs;
}

RoadRaster erode(const RoadRaster& in, const std::vector<std::pair<int, int>>& offs) {
  RoadRaster out = in;
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      std::uint8_t v = 1;
      for (const auto& [dx, dy] : offs)
        if (!in.at(x + dx, y + dy)) {
          v = 0;
          break;
        }
      out.set(x, y, v);
    }
  return out;
}

RoadRaster dilate(const RoadRaster& in, const std::vector<std::pair<int, int>>& offs) {
  RoadRaster out = in;
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      std::uint8_t v = 0;
      for (const auto& [dx, dy] : offs)
        if (in.at(x + dx, y + dy)) {
          v = 1;
          break;
        }
      out.set(x, y, v);
    }
  return out;
}

int neighbor_count(const RoadRaster& r, int x, int y) {
  int n = 0;
  for (const auto& d : kNbr) n += r.at(x + d[0], y + d[1]);
  return n;
}

// Junction mask: skeleton pixels with 3 or more skeleton neighbors.
std::vector<std::uint8_t> junction_mask(const RoadRaster& skel) {
  std::vector<std::uint8_t> mask(skel.bits.size(), 0);
  for (int y = 0; y < skel.height; ++y)
    for (int x = 0; x < skel.width; ++x)
      if (skel.at(x, y) && neighbor_count(skel, x, y) >= 3)
        mask[static_cast<std::size_t>(y) * skel.width + x] = 1;
  return mask;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

std::vector<Branch> extract_branches_impl(const RoadRaster& skel,
                                          const std::vector<std::uint8_t>& jmask,
                                          const PixelCluster& cluster, int n_branch) {
  const auto idx = [&](int x, int y) { return static_cast<std::size_t>(y) * skel.width + x; };

  // Region to trace away from: the cluster's junction pixels plus skeleton
  // pixels lying on short paths between two of them (connector pixels left by
  // thinning between merged junction pixels).
  std::vector<std::uint8_t> in_region(skel.bits.size(), 0);
  for (const auto& p : cluster.pixels) in_region[idx(p.x, p.y)] = 1;
  int cap = 1;
  for (std::size_t i = 0; i < cluster.pixels.size(); ++i)
    for (std::size_t j = i + 1; j < cluster.pixels.size(); ++j) {
      const double dx = cluster.pixels[i].x - cluster.pixels[j].x;
      const double dy = cluster.pixels[i].y - cluster.pixels[j].y;
      cap = std::max(cap, static_cast<int>(std::ceil(std::hypot(dx, dy))) + 1);
    }
  if (cluster.pixels.size() > 1) {
    std::map<std::pair<int, int>, std::vector<int>> depth;  // pixel -> per-source depth
    for (std::size_t s = 0; s < cluster.pixels.size(); ++s) {
      std::vector<PixelCoord> frontier = {cluster.pixels[s]};
      std::map<std::pair<int, int>, int> dist{{{cluster.pixels[s].x, cluster.pixels[s].y}, 0}};
      for (int d = 1; d <= cap && !frontier.empty(); ++d) {
        std::vector<PixelCoord> next;
        for (const auto& p : frontier)
          for (const auto& nb : kNbr) {
            const int nx = p.x + nb[0], ny = p.y + nb[1];
            if (!skel.at(nx, ny)) continue;
            if (dist.count({nx, ny})) continue;
            dist[{nx, ny}] = d;
            next.push_back({nx, ny});
          }
        frontier = std::move(next);
      }
      for (const auto& [key, d] : dist) {
        auto& v = depth[key];
        v.resize(cluster.pixels.size(), -1);
        v[s] = d;
      }
    }
    for (const auto& [key, dists] : depth) {
      int best1 = -1, best2 = -1;
      for (int d : dists) {
        if (d < 0) continue;
        if (best1 < 0 || d < best1) {
          best2 = best1;
          best1 = d;
        } else if (best2 < 0 || d < best2) {
          best2 = d;
        }
      }
      if (best2 >= 0 && best1 + best2 <= cap) in_region[idx(key.first, key.second)] = 1;
    }
  }

  // Seeds: skeleton pixels adjacent to the region. Adjacent seeds belong to
  // the same arm, keep the first in scan order.
  std::vector<PixelCoord> region_px;
  for (int y = 0; y < skel.height; ++y)
    for (int x = 0; x < skel.width; ++x)
      if (in_region[idx(x, y)]) region_px.push_back({x, y});

  std::vector<PixelCoord> seeds;
  std::vector<std::uint8_t> seen(skel.bits.size(), 0);
  for (const auto& rp : region_px)
    for (const auto& nb : kNbr) {
      const int nx = rp.x + nb[0], ny = rp.y + nb[1];
      if (!skel.at(nx, ny) || in_region[idx(nx, ny)] || seen[idx(nx, ny)]) continue;
      if (jmask[idx(nx, ny)]) continue;  // touches a foreign junction directly
      bool next_to_seed = false;
      for (const auto& nb2 : kNbr)
        if (skel.inside(nx + nb2[0], ny + nb2[1]) && seen[idx(nx + nb2[0], ny + nb2[1])])
          next_to_seed = true;
      seen[idx(nx, ny)] = 1;
      if (!next_to_seed) seeds.push_back({nx, ny});
    }
  std::sort(seeds.begin(), seeds.end(),
            [](const PixelCoord& a, const PixelCoord& b) { return std::tie(a.y, a.x) < std::tie(b.y, b.x); });

  std::vector<std::uint8_t> visited = in_region;
  for (const auto& s : seeds) visited[idx(s.x, s.y)] = 1;

  std::vector<Branch> branches;
  for (const auto& seed : seeds) {
    Branch br;
    br.pixels.push_back(seed);
    // previous pixel for direction continuity: the adjacent region pixel
    PixelCoord prev = seed;
    for (const auto& nb : kNbr) {
      const int nx = seed.x + nb[0], ny = seed.y + nb[1];
      if (skel.inside(nx, ny) && in_region[idx(nx, ny)]) {
        prev = {nx, ny};
        break;
      }
    }
    PixelCoord cur = seed;
    while (static_cast<int>(br.pixels.size()) < n_branch) {
      PixelCoord best{};
      double best_dot = -2.0;
      bool found = false;
      const double px = cur.x - prev.x, py = cur.y - prev.y;
      const double pn = std::hypot(px, py);
      for (const auto& nb : kNbr) {
        const int nx = cur.x + nb[0], ny = cur.y + nb[1];
        if (!skel.at(nx, ny) || visited[idx(nx, ny)] || jmask[idx(nx, ny)]) continue;
        const double cx = nx - cur.x, cy = ny - cur.y;
        const double dot = pn > 0 ? (px * cx + py * cy) / (pn * std::hypot(cx, cy)) : 0.0;
        if (!found || dot > best_dot + 1e-12) {
          best = {nx, ny};
          best_dot = dot;
          found = true;
        }
      }
      if (!found) break;
      visited[idx(best.x, best.y)] = 1;
      br.pixels.push_back(best);
      prev = cur;
      cur = best;
    }
    br.too_short = static_cast<int>(br.pixels.size()) < n_branch;
    branches.push_back(std::move(br));
  }
  return branches;
}

struct LineFit {
  geometry::HomogLine line{0, 1, 0};
  double rms = 0.0;
  bool ok = false;
};

LineFit tls_fit(std::span<const PixelCoord> pixels) {
  LineFit fit;
  if (pixels.size() < 2) return fit;
  Eigen::Vector2d mean(0, 0);
  for (const auto& p : pixels) mean += Eigen::Vector2d(p.x, p.y);
  mean /= static_cast<double>(pixels.size());
  Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
  for (const auto& p : pixels) {
    const Eigen::Vector2d d = Eigen::Vector2d(p.x, p.y) - mean;
    scatter += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(scatter);
  if (eig.eigenvalues()(1) <= 1e-12) return fit;  // all pixels coincide
  const Eigen::Vector2d dir = eig.eigenvectors().col(1);
  fit.line = geometry::HomogLine::through_point_at_angle(mean, std::atan2(dir.y(), dir.x()));
  fit.rms = std::sqrt(std::max(0.0, eig.eigenvalues()(0)) / static_cast<double>(pixels.size()));
  fit.ok = true;
  return fit;
}

}  // namespace

RoadRaster RoadRaster::blank(int w, int h, double res, Eigen::Vector2d org) {
  RoadRaster r;
  r.width = w;
  r.height = h;
  r.resolution = res;
  r.origin = org;
  r.bits.assign(static_cast<std::size_t>(w) * h, 0);
  return r;
}

void stamp_segment(RoadRaster& raster, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                   double width_px) {
  const double half = width_px / 2.0;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - half - 1)));
  const int x1 = std::min(raster.width - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + half + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - half - 1)));
  const int y1 = std::min(raster.height - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + half + 1)));
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const Eigen::Vector2d p(x, y);
      double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      if ((p - (a + t * ab)).norm() <= half) raster.set(x, y, 1);
    }
}

RoadRaster clean_binary(const RoadRaster& raster, int open_radius, int close_radius) {
  RoadRaster out = raster;
  if (open_radius > 0) {
    const auto offs = disk_offsets(open_radius);
    out = dilate(erode(out, offs), offs);
  }
  if (close_radius > 0) {
    const auto offs = disk_offsets(close_radius);
    out = erode(dilate(out, offs), offs);
  }
  return out;
}

namespace {

void thin_zhang_suen(RoadRaster& img) {
  std::vector<std::size_t> marked;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int phase = 0; phase < 2; ++phase) {
      marked.clear();
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          if (!img.at(x, y)) continue;
          int nb[8];
          for (int k = 0; k < 8; ++k) nb[k] = img.at(x + kNbr[k][0], y + kNbr[k][1]);
          const int b = nb[0] + nb[1] + nb[2] + nb[3] + nb[4] + nb[5] + nb[6] + nb[7];
          if (b < 2 || b > 6) continue;
          int transitions = 0;
          for (int k = 0; k < 8; ++k)
            if (!nb[k] && nb[(k + 1) % 8]) ++transitions;
          if (transitions != 1) continue;
          // nb indices: 0=N 2=E 4=S 6=W
          if (phase == 0) {
            if (nb[0] && nb[2] && nb[4]) continue;
            if (nb[2] && nb[4] && nb[6]) continue;
          } else {
            if (nb[0] && nb[2] && nb[6]) continue;
            if (nb[0] && nb[4] && nb[6]) continue;
          }
          marked.push_back(static_cast<std::size_t>(y) * img.width + x);
        }
      for (std::size_t i : marked) img.bits[i] = 0;
      changed = changed || !marked.empty();
    }
  }
}

// Yokoi connectivity number for 8-connected foreground. A pixel with value 1
// is a simple point: deleting it preserves the topology.
int yokoi8(const int nb[8]) {
  int c = 0;
  for (int k = 0; k < 8; k += 2) {
    const int b0 = 1 - nb[k];
    const int b1 = 1 - nb[(k + 1) % 8];
    const int b2 = 1 - nb[(k + 2) % 8];
    c += b0 - b0 * b1 * b2;
  }
  return c;
}

// Sequential removal of simple non-endpoint pixels until stable. Strips the
// staircase pixels parallel thinning leaves behind, so junction pixels are
// exactly the skeleton pixels of degree >= 3.
void prune_simple_points(RoadRaster& img) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        if (!img.at(x, y)) continue;
        int nb[8];
        for (int k = 0; k < 8; ++k) nb[k] = img.at(x + kNbr[k][0], y + kNbr[k][1]);
        const int b = nb[0] + nb[1] + nb[2] + nb[3] + nb[4] + nb[5] + nb[6] + nb[7];
        if (b < 2) continue;  // keep endpoints
        if (yokoi8(nb) != 1) continue;
        img.set(x, y, 0);
        changed = true;
      }
  }
}

RoadRaster rotate90cw(const RoadRaster& r) {
  RoadRaster out = RoadRaster::blank(r.height, r.width, r.resolution, r.origin);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      if (r.at(x, y)) out.set(r.height - 1 - y, x, 1);
  return out;
}

// Index of the lexicographically smallest of the four 90-degree rotations.
// Thinning in this canonical orientation makes the result exactly equivariant
// under 90-degree rotations of the input.
int canonical_rotation(const RoadRaster& r) {
  RoadRaster cur = r;
  int best = 0;
  RoadRaster best_raster = r;
  for (int k = 1; k < 4; ++k) {
    cur = rotate90cw(cur);
    const auto key = [](const RoadRaster& a) { return std::tie(a.width, a.height, a.bits); };
    if (key(cur) < key(best_raster)) {
      best = k;
      best_raster = cur;
    }
  }
  return best;
}

}  // namespace

RoadRaster skeletonize(const RoadRaster& raster) {
  RoadRaster img = raster;
  for (auto& b : img.bits) b = b ? 1 : 0;
  const int k = canonical_rotation(img);
  for (int i = 0; i < k; ++i) img = rotate90cw(img);
  thin_zhang_suen(img);
  prune_simple_points(img);
  for (int i = k; i % 4 != 0; ++i) img = rotate90cw(img);
  img.resolution = raster.resolution;
  img.origin = raster.origin;
  return img;
}

std::vector<PixelCluster> detect_intersections(const RoadRaster& skel, double merge_radius) {
  std::vector<PixelCoord> junctions;
  const auto jmask = junction_mask(skel);
  for (int y = 0; y < skel.height; ++y)
    for (int x = 0; x < skel.width; ++x)
      if (jmask[static_cast<std::size_t>(y) * skel.width + x]) junctions.push_back({x, y});

  // single linkage via a coarse grid
  UnionFind uf(static_cast<int>(junctions.size()));
  const double cell = std::max(merge_radius, 1.0);
  std::map<std::pair<int, int>, std::vector<int>> grid;
  for (std::size_t i = 0; i < junctions.size(); ++i)
    grid[{static_cast<int>(std::floor(junctions[i].x / cell)),
          static_cast<int>(std::floor(junctions[i].y / cell))}]
        .push_back(static_cast<int>(i));
  for (const auto& [key, ids] : grid)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const auto it = grid.find({key.first + dx, key.second + dy});
        if (it == grid.end()) continue;
        for (int a : ids)
          for (int b : it->second) {
            if (b <= a) continue;
            const double d = std::hypot(junctions[a].x - junctions[b].x,
                                        junctions[a].y - junctions[b].y);
            if (d <= merge_radius) uf.unite(a, b);
          }
      }

  std::map<int, PixelCluster> clusters;
  for (std::size_t i = 0; i < junctions.size(); ++i)
    clusters[uf.find(static_cast<int>(i))].pixels.push_back(junctions[i]);
  std::vector<PixelCluster> out;
  for (auto& [root, cluster] : clusters) {
    Eigen::Vector2d c(0, 0);
    for (const auto& p : cluster.pixels) c += Eigen::Vector2d(p.x, p.y);
    cluster.centroid = c / static_cast<double>(cluster.pixels.size());
    out.push_back(std::move(cluster));
  }
  std::sort(out.begin(), out.end(), [](const PixelCluster& a, const PixelCluster& b) {
    return std::tie(a.centroid.y(), a.centroid.x()) < std::tie(b.centroid.y(), b.centroid.x());
  });
  return out;
}

std::vector<Branch> extract_branches(const RoadRaster& skel, const PixelCluster& cluster,
                                     int n_branch) {
  return extract_branches_impl(skel, junction_mask(skel), cluster, n_branch);
}

std::optional<geometry::HomogLine> fit_tangent(const Branch& branch, double fit_tol,
                                               double* rms_out) {
  const LineFit fit = tls_fit(branch.pixels);
  if (!fit.ok) throw TooFewPoints();
  if (rms_out) *rms_out = fit.rms;
  if (branch.too_short || fit.rms > fit_tol) return std::nullopt;
  return fit.line;
}

std::vector<geometry::HomogLine> merge_tangents(std::span<const Branch> branches,
                                                double delta_angle) {
  std::vector<geometry::HomogLine> lines;
  std::vector<std::size_t> owner;  // branch index behind each line
  for (std::size_t i = 0; i < branches.size(); ++i) {
    if (branches[i].tangent) {
      lines.push_back(*branches[i].tangent);
    } else {
      const LineFit fit = tls_fit(branches[i].pixels);
      if (!fit.ok) continue;
      lines.push_back(fit.line);
    }
    owner.push_back(i);
  }
  if (lines.empty()) return {};

  UnionFind uf(static_cast<int>(lines.size()));
  for (std::size_t i = 0; i < lines.size(); ++i)
    for (std::size_t j = i + 1; j < lines.size(); ++j)
      if (geometry::angle_between(lines[i].direction(), lines[j].direction()) < delta_angle)
        uf.unite(static_cast<int>(i), static_cast<int>(j));

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < lines.size(); ++i)
    groups[uf.find(static_cast<int>(i))].push_back(i);

  std::vector<std::pair<std::size_t, geometry::HomogLine>> merged;
  for (const auto& [root, members] : groups) {
    std::vector<PixelCoord> pool;
    for (std::size_t m : members) {
      const auto& px = branches[owner[m]].pixels;
      pool.insert(pool.end(), px.begin(), px.end());
    }
    const LineFit refit = tls_fit(pool);
    merged.emplace_back(*std::min_element(members.begin(), members.end()),
                        refit.ok ? refit.line : lines[members.front()]);
  }
  std::sort(merged.begin(), merged.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<geometry::HomogLine> out;
  for (auto& [first, line] : merged) out.push_back(line);
  return out;
}

geometry::HomogPoint refine_center(std::span<const geometry::HomogLine> tangents) {
  return geometry::meet_lines_lsq(tangents);
}

std::vector<DetectedIntersection> extract_all(const RoadRaster& raster,
                                              const SkeletonConfig& cfg) {
  const RoadRaster cleaned = clean_binary(raster, cfg.open_radius, cfg.close_radius);
  const RoadRaster skel = skeletonize(cleaned);
  const auto jmask = junction_mask(skel);
  const auto clusters = detect_intersections(skel, cfg.merge_radius_px);

  Eigen::Matrix3d to_map = Eigen::Matrix3d::Identity();
  to_map(0, 0) = to_map(1, 1) = raster.resolution;
  to_map(0, 2) = raster.origin.x();
  to_map(1, 2) = raster.origin.y();
  const geometry::Homography map_tf(to_map);

  std::vector<DetectedIntersection> out;
  for (const auto& cluster : clusters) {
    auto branches = extract_branches_impl(skel, jmask, cluster, cfg.n_branch);
    if (branches.size() < 3) continue;
    bool usable = true;
    for (auto& br : branches) {
      if (br.too_short) {
        usable = false;
        break;
      }
      double rms = 0.0;
      auto fit = fit_tangent(br, cfg.fit_tol_px, &rms);
      br.fit_rms = rms;
      if (!fit) {
        usable = false;
        break;
      }
      br.tangent = fit;
    }
    if (!usable) continue;

    const auto merged = merge_tangents(branches, cfg.delta_angle_rad);
    if (merged.size() < 2) continue;

    geometry::HomogPoint center_px;
    try {
      center_px = refine_center(merged);
    } catch (const DegeneratePencil&) {
      continue;
    }
    if (center_px.at_infinity(1e-9)) continue;
    const Eigen::Vector2d cpx = center_px.dehom();
    bool concurrent = true;
    for (const auto& line : merged)
      if (std::abs(line.signed_distance(cpx)) > cfg.refine_tol_px) concurrent = false;
    if (!concurrent) continue;

    DetectedIntersection di;
    di.center_raw_px = cluster.centroid;
    di.branches = std::move(branches);
    di.n_branches = static_cast<int>(di.branches.size());
    di.n_tangents = static_cast<int>(merged.size());
    const Eigen::Vector2d cmap = raster.pixel_to_map(cpx);
    di.center_refined = geometry::HomogPoint(cmap.x(), cmap.y());
    for (const auto& line : merged) di.tangents.push_back(geometry::transform_line(map_tf, line));
    out.push_back(std::move(di));
  }
  return out;
}

}  // namespace roadloc::skeleton
