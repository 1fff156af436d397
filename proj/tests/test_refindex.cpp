#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "roadloc/refindex.hpp"
#include "roadloc/rng.hpp"
#include "test_support.hpp"

using namespace roadloc;
using namespace roadloc::refindex;
namespace geom = roadloc::geometry;
namespace feat = roadloc::features;

namespace {

double deg(double d) { return d * geom::kPi / 180.0; }

VectorMap cross_map() {
  VectorMap m;
  m.polylines.push_back({{200, 500}, {800, 500}});
  m.polylines.push_back({{500, 200}, {500, 800}});
  return m;
}

VectorMap grid_map(int lines = 3, double spacing = 300.0, double margin = 150.0) {
  VectorMap m;
  const double lo = 0.0, hi = margin * 2 + (lines - 1) * spacing;
  for (int i = 0; i < lines; ++i) {
    const double pos = margin + i * spacing;
    m.polylines.push_back({{lo, pos}, {hi, pos}});
    m.polylines.push_back({{pos, lo}, {pos, hi}});
  }
  return m;
}

using testsupport::random_intersections;

}  // namespace

TEST_CASE("ingest exact: perpendicular cross") {
  IngestConfig cfg;
  const auto xs = ingest_vector_map(cross_map(), cfg);
  REQUIRE(xs.size() == 1);
  CHECK((xs[0].center - Eigen::Vector2d(500, 500)).norm() < 1e-9);
  CHECK(xs[0].n_branches == 4);
  CHECK(xs[0].n_tangents() == 2);
}

TEST_CASE("ingest raster agrees with exact on the cross") {
  IngestConfig exact;
  IngestConfig raster;
  raster.mode = IngestMode::Raster;
  raster.resolution = 1.0;
  const auto xe = ingest_vector_map(cross_map(), exact);
  const auto xr = ingest_vector_map(cross_map(), raster);
  REQUIRE(xe.size() == 1);
  REQUIRE(xr.size() == 1);
  CHECK((xe[0].center - xr[0].center).norm() < 2.0);
  CHECK(xe[0].n_branches == xr[0].n_branches);
  CHECK(xe[0].n_tangents() == xr[0].n_tangents());
}

TEST_CASE("ingest exact: 3x3 street grid") {
  IngestConfig cfg;
  const auto xs = ingest_vector_map(grid_map(), cfg);
  CHECK(xs.size() == 9);
  for (const auto& x : xs) {
    CHECK(x.n_branches == 4);
    CHECK(x.n_tangents() == 2);
  }
}

TEST_CASE("ingest exact: T junction and 5-way") {
  VectorMap m;
  m.polylines.push_back({{0, 0}, {1000, 0}});
  m.polylines.push_back({{500, 0}, {500, 600}});  // T at (500, 0)
  m.polylines.push_back({{200, -400}, {200, 400}});
  m.polylines.push_back({{200, 0}, {-300, 500}});  // diagonal from the 4-way at (200, 0)
  IngestConfig cfg;
  const auto xs = ingest_vector_map(m, cfg);
  REQUIRE(xs.size() == 2);
  CHECK(xs[0].center.x() == doctest::Approx(200.0));
  CHECK(xs[0].n_branches == 5);
  CHECK(xs[0].n_tangents() == 3);
  CHECK(xs[1].center.x() == doctest::Approx(500.0));
  CHECK(xs[1].n_branches == 3);
  CHECK(xs[1].n_tangents() == 2);
}

TEST_CASE("ingest rejects an empty map") {
  CHECK_THROWS_AS(ingest_vector_map(VectorMap{}, IngestConfig{}), EmptyMap);
}

TEST_CASE("spatial grid pair enumeration equals brute force") {
  Rng rng(41);
  const auto xs = random_intersections(rng, 500, 5000.0);
  SpatialGrid grid(xs, 100.0);
  for (const double d : {150.0, 600.0, 2500.0}) {
    auto got = grid.pairs_within(d);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> want;
    for (std::uint32_t i = 0; i < xs.size(); ++i)
      for (std::uint32_t j = i + 1; j < xs.size(); ++j)
        if ((xs[i].center - xs[j].center).norm() < d) want.emplace_back(i, j);
    CHECK(got == want);
  }
}

TEST_CASE("spatial grid nearest_same_type") {
  Rng rng(42);
  const auto xs = random_intersections(rng, 300, 3000.0);
  SpatialGrid grid(xs, 100.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Vector2d p(rng.uniform(0, 3000), rng.uniform(0, 3000));
    const int nb = 3 + static_cast<int>(rng.uniform_int(3));
    const int nq = 2 + static_cast<int>(rng.uniform_int(3));
    const double radius = rng.uniform(20, 400);
    const auto got = grid.nearest_same_type(p, nb, nq, radius);
    // brute force
    std::optional<std::pair<std::uint32_t, double>> want;
    for (std::uint32_t i = 0; i < xs.size(); ++i) {
      if (xs[i].n_branches != nb || xs[i].n_tangents() != nq) continue;
      const double d = (xs[i].center - p).norm();
      if (d > radius) continue;
      if (!want || d < want->second) want = std::make_pair(i, d);
    }
    CHECK(got.has_value() == want.has_value());
    if (got && want) {
      CHECK(got->first == want->first);
      CHECK(got->second == doctest::Approx(want->second));
    }
  }
}

TEST_CASE("build_index rejects when no pair is admissible") {
  Rng rng(43);
  auto xs = random_intersections(rng, 2, 100.0);
  xs[0].center = {0, 0};
  xs[1].center = {10000, 0};
  IndexConfig cfg;
  cfg.d_max = 3000.0;
  CHECK_THROWS_AS(build_index(xs, cfg), NoTuples);
}

TEST_CASE("build_index bucket sizes match brute-force tuple enumeration") {
  Rng rng(44);
  const auto xs = random_intersections(rng, 10, 2000.0);
  IndexConfig cfg;
  cfg.d_max = 1e7;  // all 45 pairs in range
  const feat::TupleConfig tcfg{cfg.d_max, cfg.delta_sep_rad};

  std::map<feat::BranchKey, std::uint64_t> want;
  std::uint64_t accepted = 0;
  for (std::uint32_t i = 0; i < xs.size(); ++i)
    for (std::uint32_t j = i + 1; j < xs.size(); ++j)
      if (const auto t = feat::build_tuple(xs[i], xs[j], tcfg)) {
        ++accepted;
        ++want[t->key];
      }
  REQUIRE(accepted > 0);

  const ReferenceIndex idx = build_index(xs, cfg);
  CHECK(idx.tuple_count() == accepted);
  std::uint64_t bucket_sum = 0;
  for (const auto& st : idx.bucket_stats()) {
    CHECK(st.size == want.at(st.key));
    CHECK(idx.rarity(st.key) == st.size);
    bucket_sum += st.size;
  }
  CHECK(bucket_sum == accepted);
  CHECK(idx.rarity(feat::BranchKey{{99, 99, 99, 99}}) == 0);
}

namespace {

// Linear-scan oracle: run the full matching check over every stored tuple.
std::vector<TupleRecord> oracle_candidates(const ReferenceIndex& idx,
                                           const feat::TupleFeature& q, double delta_cr) {
  std::vector<TupleRecord> out;
  for (const auto& st : idx.bucket_stats())
    for (const auto& rec : idx.bucket_records(st.key)) {
      const auto tuple = idx.rebuild_tuple(rec);
      if (!feat::tuple_match_check(q, tuple, delta_cr).empty()) out.push_back(rec);
    }
  std::sort(out.begin(), out.end(), [](const TupleRecord& a, const TupleRecord& b) {
    return std::tie(a.a, a.b) < std::tie(b.a, b.b);
  });
  return out;
}

std::vector<TupleRecord> returned_records(const ReferenceIndex::QueryResult& r) {
  std::vector<TupleRecord> out;
  for (const auto& c : r.candidates) out.push_back(c.record);
  std::sort(out.begin(), out.end(), [](const TupleRecord& a, const TupleRecord& b) {
    return std::tie(a.a, a.b) < std::tie(b.a, b.b);
  });
  return out;
}

}  // namespace

TEST_CASE("query_candidates equals the linear-scan oracle") {
  Rng rng(45);
  const auto xs = random_intersections(rng, 64, 2500.0);
  IndexConfig cfg;
  cfg.d_max = 2000.0;
  cfg.tree_linear_threshold = 8;  // exercise the tree path
  const ReferenceIndex idx = build_index(xs, cfg);
  REQUIRE(idx.tuple_count() > 300);

  const feat::TupleConfig tcfg{cfg.d_max, cfg.delta_sep_rad};
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 60; ++trial) {
    // queries: stored tuples, perturbed copies, and unrelated tuples
    const std::uint32_t i = static_cast<std::uint32_t>(rng.uniform_int(xs.size()));
    std::uint32_t j = static_cast<std::uint32_t>(rng.uniform_int(xs.size()));
    if (i == j) continue;
    auto a = xs[i];
    auto b = xs[j];
    if (trial % 3 == 1) {
      // jitter the tangent angles a little
      for (auto& t : a.tangents)
        t = geom::HomogLine::through_point_at_angle(
            a.center, t.direction().radians() + rng.normal(0.0, deg(1)));
    }
    if (trial % 3 == 2) {
      a = random_intersections(rng, 1, 2500.0)[0];
      a.id = 1000;
    }
    const auto q = feat::build_tuple(a, b, tcfg);
    if (!q) continue;
    for (const double delta : {0.05, 0.3}) {
      const auto got = returned_records(idx.query_candidates(*q, delta));
      const auto want = oracle_candidates(idx, *q, delta);
      CHECK(got == want);
    }
    ++checked;
  }
  CHECK(checked >= 60);
}

TEST_CASE("query_candidates finds the exact stored tuple and misses absent keys") {
  Rng rng(46);
  const auto xs = random_intersections(rng, 40, 2000.0);
  IndexConfig cfg;
  cfg.d_max = 1500.0;
  const ReferenceIndex idx = build_index(xs, cfg);

  bool found_one = false;
  for (const auto& st : idx.bucket_stats()) {
    const auto recs = idx.bucket_records(st.key);
    if (recs.empty()) continue;
    const auto q = idx.rebuild_tuple(recs.front());
    const auto result = idx.query_candidates(q, 1e-9);
    bool present = false;
    for (const auto& c : result.candidates)
      if (c.record == recs.front()) present = true;
    CHECK(present);
    found_one = true;
    break;
  }
  CHECK(found_one);

  // a key no map produces
  feat::Intersection weird_a, weird_b;
  weird_a.id = 0;
  weird_a.center = {0, 0};
  weird_a.n_branches = 9;
  weird_b.id = 1;
  weird_b.center = {500, 0};
  weird_b.n_branches = 9;
  for (double ang : {deg(30), deg(60), deg(100), deg(130), deg(160)}) {
    weird_a.tangents.push_back(geom::HomogLine::through_point_at_angle(weird_a.center, ang));
    weird_b.tangents.push_back(geom::HomogLine::through_point_at_angle(weird_b.center, ang));
  }
  const auto q = feat::build_tuple(weird_a, weird_b, feat::TupleConfig{cfg.d_max, cfg.delta_sep_rad});
  REQUIRE(q.has_value());
  const auto result = idx.query_candidates(*q, 0.3);
  CHECK(result.candidates.empty());
  CHECK(result.prefilter_count == 0);
}

TEST_CASE("query_candidates cap reports instead of materializing") {
  Rng rng(47);
  // many same-type intersections: the (4,4,2,2) bucket gets big
  std::vector<feat::Intersection> xs;
  for (int i = 0; i < 60; ++i) {
    feat::Intersection x;
    x.id = static_cast<std::uint32_t>(i);
    x.center = {rng.uniform(0, 1500), rng.uniform(0, 1500)};
    x.n_branches = 4;
    const double base = rng.uniform(0.0, geom::kPi);
    x.tangents.push_back(geom::HomogLine::through_point_at_angle(x.center, base));
    x.tangents.push_back(geom::HomogLine::through_point_at_angle(x.center, geom::wrap_pi(base + deg(80))));
    xs.push_back(x);
  }
  IndexConfig cfg;
  cfg.d_max = 3000.0;
  const ReferenceIndex idx = build_index(xs, cfg);
  const auto recs = idx.bucket_records(feat::BranchKey{{4, 4, 2, 2}});
  REQUIRE(recs.size() > 100);
  const auto q = idx.rebuild_tuple(recs.front());
  const auto capped = idx.query_candidates(q, 0.3, 1e-3, 50);
  CHECK(capped.capped);
  CHECK(capped.prefilter_count > 50);
  CHECK(capped.candidates.empty());
  const auto full = idx.query_candidates(q, 0.3);
  CHECK_FALSE(full.capped);
  CHECK(full.candidates.size() == recs.size());  // empty descriptors: whole bucket matches
}

TEST_CASE("save/load round trip") {
  Rng rng(48);
  const auto xs = random_intersections(rng, 50, 2000.0);
  IndexConfig cfg;
  cfg.d_max = 1500.0;
  cfg.tree_linear_threshold = 16;
  const ReferenceIndex idx = build_index(xs, cfg);

  const std::string path = (std::filesystem::temp_directory_path() / "roadloc_test.rlix").string();
  save_index(idx, path);
  const ReferenceIndex loaded = load_index(path);
  CHECK(idx.content_equals(loaded));
  CHECK(loaded.tuple_count() == idx.tuple_count());

  // replay: identical candidate lists before and after the round trip
  const feat::TupleConfig tcfg{cfg.d_max, cfg.delta_sep_rad};
  int replayed = 0;
  for (int trial = 0; trial < 50 && replayed < 20; ++trial) {
    const std::uint32_t i = static_cast<std::uint32_t>(rng.uniform_int(xs.size()));
    const std::uint32_t j = static_cast<std::uint32_t>(rng.uniform_int(xs.size()));
    if (i == j) continue;
    const auto q = feat::build_tuple(xs[i], xs[j], tcfg);
    if (!q) continue;
    const auto before = returned_records(idx.query_candidates(*q, 0.3));
    const auto after = returned_records(loaded.query_candidates(*q, 0.3));
    CHECK(before == after);
    ++replayed;
  }
  CHECK(replayed >= 20);
  std::filesystem::remove(path);
}

TEST_CASE("load rejects corrupt files") {
  Rng rng(49);
  const auto xs = random_intersections(rng, 20, 1000.0);
  IndexConfig cfg;
  cfg.d_max = 1500.0;
  const ReferenceIndex idx = build_index(xs, cfg);
  const auto dir = std::filesystem::temp_directory_path();
  const std::string path = (dir / "roadloc_corrupt.rlix").string();
  save_index(idx, path);

  // truncation
  std::vector<char> bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_index(path), CorruptFile);

  // flipped byte in the middle
  {
    auto flipped = bytes;
    flipped[flipped.size() / 2] = static_cast<char>(~flipped[flipped.size() / 2]);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(flipped.data(), static_cast<std::streamsize>(flipped.size()));
  }
  CHECK_THROWS_AS(load_index(path), CorruptFile);

  // bad magic
  {
    auto bad = bytes;
    bad[0] = 'X';
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
  }
  CHECK_THROWS_AS(load_index(path), CorruptFile);

  CHECK_THROWS_AS(load_index((dir / "missing_roadloc.rlix").string()), IoFailure);
  std::filesystem::remove(path);
}
