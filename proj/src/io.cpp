#include "roadloc/io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace roadloc::io {

namespace geom = roadloc::geometry;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoFailure(path + ": " + e.what());
  }
  return j;
}

void store(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoFailure("failed writing " + path);
}

Eigen::Vector2d point_of(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw IoFailure(where + ": expected [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

refindex::VectorMap read_vector_map(const std::string& path) {
  const json j = load_json(path);
  if (!j.contains("polylines")) throw IoFailure(path + ": missing \"polylines\"");
  refindex::VectorMap map;
  for (const auto& pl : j.at("polylines")) {
    std::vector<Eigen::Vector2d> line;
    for (const auto& p : pl) line.push_back(point_of(p, path));
    if (line.size() >= 2) map.polylines.push_back(std::move(line));
  }
  return map;
}

void write_vector_map(const refindex::VectorMap& map, const std::string& path) {
  json polylines = json::array();
  for (const auto& pl : map.polylines) {
    json line = json::array();
    for (const auto& p : pl) line.push_back({p.x(), p.y()});
    polylines.push_back(std::move(line));
  }
  store(path, json{{"polylines", std::move(polylines)}});
}

std::vector<features::Intersection> read_intersections(const std::string& path) {
  const json j = load_json(path);
  if (!j.contains("intersections")) throw IoFailure(path + ": missing \"intersections\"");
  std::vector<features::Intersection> out;
  for (const auto& item : j.at("intersections")) {
    features::Intersection x;
    x.id = static_cast<std::uint32_t>(out.size());
    x.center = point_of(item.at("center"), path);
    x.n_branches = item.at("n_branches").get<int>();
    for (const auto& a : item.at("tangent_angles_rad"))
      x.tangents.push_back(
          geom::HomogLine::through_point_at_angle(x.center, a.get<double>()));
    out.push_back(std::move(x));
  }
  return out;
}

void write_intersections(std::span<const features::Intersection> xs, const std::string& path) {
  json arr = json::array();
  for (const auto& x : xs) {
    json angles = json::array();
    for (const auto& t : x.tangents) angles.push_back(t.direction().radians());
    arr.push_back({{"center", {x.center.x(), x.center.y()}},
                   {"tangent_angles_rad", std::move(angles)},
                   {"n_branches", x.n_branches}});
  }
  store(path, json{{"intersections", std::move(arr)}});
}

synth::QueryTruth read_truth(const std::string& path) {
  const json j = load_json(path);
  const auto& h = j.at("h_true");
  if (!h.is_array() || h.size() != 9) throw IoFailure(path + ": h_true must have 9 entries");
  Eigen::Matrix3d m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = h[static_cast<std::size_t>(i)].get<double>();
  synth::QueryTruth truth;
  truth.h_true = geom::Homography(m);
  truth.scene_center_map = point_of(j.at("center_map"), path);
  return truth;
}

void write_truth(const synth::QueryTruth& truth, const std::string& path) {
  json h = json::array();
  for (int i = 0; i < 9; ++i) h.push_back(truth.h_true.matrix()(i / 3, i % 3));
  store(path, json{{"h_true", std::move(h)},
                   {"center_map", {truth.scene_center_map.x(), truth.scene_center_map.y()}}});
}

void write_result(const matcher::LocalizationResult& result, const std::string& path,
                  bool include_timing) {
  json j;
  j["verdict"] = matcher::to_string(result.verdict);
  j["inlier_ratio"] = result.inlier_ratio;
  if (result.best_h) {
    json h = json::array();
    for (int i = 0; i < 9; ++i) h.push_back(result.best_h->matrix()(i / 3, i % 3));
    j["h"] = std::move(h);
  } else {
    j["h"] = nullptr;
  }
  json matches = json::array();
  for (const auto& [q, r] : result.matches) matches.push_back({q, r});
  j["matches"] = std::move(matches);
  j["samples"] = {{"query_used", result.query_samples_used},
                  {"reference_used", result.ref_samples_used},
                  {"query_budget", result.query_budget}};
  if (result.verdict == matcher::Verdict::NotInMap) j["confidence"] = result.confidence;
  if (include_timing) j["elapsed_ms"] = result.elapsed_ms;
  store(path, j);
}

matcher::LocalizationResult read_result(const std::string& path) {
  const json j = load_json(path);
  matcher::LocalizationResult result;
  const std::string verdict = j.at("verdict").get<std::string>();
  if (verdict == "Located")
    result.verdict = matcher::Verdict::Located;
  else if (verdict == "NotInMap")
    result.verdict = matcher::Verdict::NotInMap;
  else
    result.verdict = matcher::Verdict::BudgetExhausted;
  result.inlier_ratio = j.at("inlier_ratio").get<double>();
  if (j.contains("h") && !j.at("h").is_null()) {
    Eigen::Matrix3d m;
    for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = j.at("h")[static_cast<std::size_t>(i)].get<double>();
    result.best_h = geom::Homography(m);
  }
  if (j.contains("matches"))
    for (const auto& pair : j.at("matches"))
      result.matches.emplace_back(pair[0].get<std::uint32_t>(), pair[1].get<std::uint32_t>());
  if (j.contains("samples")) {
    result.query_samples_used = j["samples"].value("query_used", std::uint64_t{0});
    result.ref_samples_used = j["samples"].value("reference_used", std::uint64_t{0});
    result.query_budget = j["samples"].value("query_budget", std::uint64_t{0});
  }
  result.confidence = j.value("confidence", 0.0);
  result.elapsed_ms = j.value("elapsed_ms", 0.0);
  return result;
}

matcher::MatcherConfig read_matcher_config(const std::string& path) {
  const json j = load_json(path);
  matcher::MatcherConfig cfg;
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.lambda1 = j.value("lambda1", cfg.lambda1);
  cfg.p_query = j.value("p_query", cfg.p_query);
  cfg.delta_inlier = j.value("delta_inlier", cfg.delta_inlier);
  cfg.delta_dist = j.value("delta_dist_m", cfg.delta_dist);
  cfg.delta_cr = j.value("delta_cr", cfg.delta_cr);
  cfg.eps_abs = j.value("eps_abs", cfg.eps_abs);
  cfg.d_max = j.value("d_max_m", cfg.d_max);
  cfg.delta_sep_rad = j.value("delta_sep_rad", cfg.delta_sep_rad);
  cfg.min_intersections = j.value("min_intersections", cfg.min_intersections);
  cfg.rng_seed = j.value("rng_seed", cfg.rng_seed);
  cfg.n_match_cap = j.value("n_match_cap", cfg.n_match_cap);
  cfg.refine_homography = j.value("refine_homography", cfg.refine_homography);
  return cfg;
}

skeleton::RoadRaster read_pgm_with_meta(const std::string& pgm_path, const std::string& meta_path) {
  std::ifstream in(pgm_path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + pgm_path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoFailure(pgm_path + ": expected binary PGM (P5)");
  const auto next_int = [&]() {
    // skip whitespace and '#' comments
    while (true) {
      const int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    int v = -1;
    in >> v;
    if (!in) throw IoFailure(pgm_path + ": malformed header");
    return v;
  };
  const int width = next_int();
  const int height = next_int();
  const int maxval = next_int();
  if (width <= 0 || height <= 0 || maxval != 255)
    throw IoFailure(pgm_path + ": expected maxval 255");
  in.get();  // single whitespace after header

  const json meta = load_json(meta_path);
  skeleton::RoadRaster raster = skeleton::RoadRaster::blank(width, height);
  raster.origin = point_of(meta.at("origin"), meta_path);
  raster.resolution = meta.at("resolution").get<double>();
  if (!(raster.resolution > 0)) throw IoFailure(meta_path + ": resolution must be positive");

  std::vector<char> bytes(static_cast<std::size_t>(width) * height);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw IoFailure(pgm_path + ": truncated pixel data");
  for (std::size_t i = 0; i < bytes.size(); ++i)
    raster.bits[i] = bytes[i] ? 1 : 0;
  return raster;
}

void write_pgm_with_meta(const skeleton::RoadRaster& raster, const std::string& pgm_path,
                         const std::string& meta_path) {
  std::ofstream out(pgm_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + pgm_path + " for writing");
  out << "P5\n" << raster.width << ' ' << raster.height << "\n255\n";
  std::vector<char> bytes(raster.bits.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = raster.bits[i] ? static_cast<char>(255) : 0;
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoFailure("failed writing " + pgm_path);
  store(meta_path, json{{"origin", {raster.origin.x(), raster.origin.y()}},
                        {"resolution", raster.resolution}});
}

}  // namespace roadloc::io
