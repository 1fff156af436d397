#include <CLI11.hpp>

#include <Eigen/Core>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "roadloc/eval.hpp"
#include "roadloc/io.hpp"
#include "roadloc/matcher.hpp"
#include "roadloc/refindex.hpp"
#include "roadloc/synth.hpp"

namespace fs = std::filesystem;
using namespace roadloc;

namespace {

// exit codes: 0 success/Located, 2 NotInMap, 3 usage error, 4 input error
constexpr int kExitOk = 0;
constexpr int kExitNotInMap = 2;
constexpr int kExitUsage = 3;
constexpr int kExitInput = 4;

int cmd_build_index(const std::string& map_path, const std::string& out_path, double d_max,
                    const std::string& mode, double resolution, double stroke) {
  const refindex::VectorMap map = io::read_vector_map(map_path);
  refindex::IngestConfig icfg;
  icfg.mode = mode == "raster" ? refindex::IngestMode::Raster : refindex::IngestMode::Exact;
  icfg.resolution = resolution;
  icfg.stroke_width_m = stroke;
  const auto xs = ingest_vector_map(map, icfg);

  refindex::IndexConfig cfg;
  cfg.d_max = d_max;
  const refindex::ReferenceIndex index = build_index(xs, cfg);
  save_index(index, out_path);

  std::printf("indexed %zu intersections, %llu tuples in %zu buckets -> %s\n", xs.size(),
              static_cast<unsigned long long>(index.tuple_count()), index.bucket_stats().size(),
              out_path.c_str());
  std::printf("junction types:");
  for (const auto& [type, count] : synth::type_histogram(xs))
    std::printf(" (%d,%d)x%zu", type.first, type.second, count);
  std::printf("\n");
  return kExitOk;
}

int cmd_extract(const std::string& mask, const std::string& meta, const std::string& out) {
  const skeleton::RoadRaster raster = io::read_pgm_with_meta(mask, meta);
  const auto detected = skeleton::extract_all(raster, skeleton::SkeletonConfig{});
  std::vector<features::Intersection> xs;
  for (const auto& di : detected) {
    features::Intersection x;
    x.id = static_cast<std::uint32_t>(xs.size());
    x.center = di.center_refined.dehom();
    x.n_branches = di.n_branches;
    x.tangents = di.tangents;
    xs.push_back(std::move(x));
  }
  io::write_intersections(xs, out);
  std::printf("extracted %zu intersections -> %s\n", xs.size(), out.c_str());
  return kExitOk;
}

int cmd_locate(const std::string& index_path, const std::string& query_json,
               const std::string& mask, const std::string& meta, const std::string& config_path,
               std::uint64_t seed, bool seed_set, const std::string& out, bool timing) {
  const refindex::ReferenceIndex index = refindex::load_index(index_path);

  std::vector<features::Intersection> query;
  if (!query_json.empty()) {
    query = io::read_intersections(query_json);
  } else {
    const skeleton::RoadRaster raster = io::read_pgm_with_meta(mask, meta);
    for (const auto& di : skeleton::extract_all(raster, skeleton::SkeletonConfig{})) {
      features::Intersection x;
      x.id = static_cast<std::uint32_t>(query.size());
      x.center = di.center_refined.dehom();
      x.n_branches = di.n_branches;
      x.tangents = di.tangents;
      query.push_back(std::move(x));
    }
  }

  matcher::MatcherConfig cfg;
  if (!config_path.empty()) cfg = io::read_matcher_config(config_path);
  if (seed_set) cfg.rng_seed = seed;

  const matcher::LocalizationResult result = matcher::localize(query, index, cfg);
  io::write_result(result, out, timing);

  std::printf("%s theta=%.3f samples=(%llu,%llu) elapsed=%.1fms -> %s\n",
              matcher::to_string(result.verdict), result.inlier_ratio,
              static_cast<unsigned long long>(result.query_samples_used),
              static_cast<unsigned long long>(result.ref_samples_used), result.elapsed_ms,
              out.c_str());
  return result.verdict == matcher::Verdict::Located ? kExitOk : kExitNotInMap;
}

int cmd_synth_map(const std::string& out, std::uint64_t seed, double extent_km, double density,
                  const std::string& style) {
  synth::MapParams params;
  params.seed = seed;
  params.extent_x = params.extent_y = extent_km * 1000.0;
  params.density_per_km2 = density;
  params.style = style == "grid-only" ? synth::MapStyle::GridOnly : synth::MapStyle::Mixed;
  const auto map = synth::gen_synth_map(params);
  io::write_vector_map(map, out);
  std::printf("synthetic map with %zu polylines -> %s\n", map.polylines.size(), out.c_str());
  return kExitOk;
}

int cmd_synth_queries(const std::string& map_path, const std::string& out_dir, int count,
                      std::uint64_t seed, const synth::ScenarioParams& scenario) {
  const refindex::VectorMap map = io::read_vector_map(map_path);
  const auto xs = ingest_vector_map(map, refindex::IngestConfig{});
  fs::create_directories(out_dir);
  Rng rng(seed);
  for (int k = 0; k < count; ++k) {
    const synth::SynthQuery q = synth::gen_query(xs, map.bounds(), scenario, rng);
    const std::string id = std::to_string(k);
    io::write_intersections(q.intersections, (fs::path(out_dir) / ("query_" + id + ".json")).string());
    io::write_truth(q.truth, (fs::path(out_dir) / ("truth_" + id + ".json")).string());
  }
  std::printf("wrote %d query/truth pairs -> %s\n", count, out_dir.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& results_dir, const std::string& truth_dir, double radius,
             const std::string& csv_out, const std::string& json_out) {
  std::vector<eval::EvalInput> inputs;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(results_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("result_", 0) == 0 && entry.path().extension() == ".json")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    const std::string stem = file.stem().string();  // result_<id>
    const std::string id = stem.substr(7);
    eval::EvalInput in;
    in.scenario_id = id;
    in.result = io::read_result(file.string());
    const fs::path truth_path = fs::path(truth_dir) / ("truth_" + id + ".json");
    if (fs::exists(truth_path)) in.truth = io::read_truth(truth_path.string());
    inputs.push_back(std::move(in));
  }
  if (inputs.empty()) throw IoFailure("no result_*.json files in " + results_dir);

  const eval::EvalReport report = eval::evaluate(inputs, radius);
  {
    std::ofstream out(csv_out, std::ios::trunc);
    if (!out) throw IoFailure("cannot open " + csv_out + " for writing");
    out << eval::to_csv(report);
  }
  if (!json_out.empty()) {
    std::ofstream out(json_out, std::ios::trunc);
    if (!out) throw IoFailure("cannot open " + json_out + " for writing");
    out << eval::to_json(report) << '\n';
  }
  std::printf("queries=%zu tp=%llu fp=%llu fn=%llu tn=%llu precision=%.3f recall=%.3f -> %s\n",
              report.rows.size(), static_cast<unsigned long long>(report.tp),
              static_cast<unsigned long long>(report.fp),
              static_cast<unsigned long long>(report.fn),
              static_cast<unsigned long long>(report.tn), report.precision, report.recall,
              csv_out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"road-network geolocalization"};
  app.require_subcommand(1);

  // build-index
  auto* build = app.add_subcommand("build-index", "build a reference index from a vector map");
  std::string map_path, index_out = "index.rlix", mode = "exact";
  double d_max = 3000.0, resolution = 1.0, stroke = 5.0;
  build->add_option("map", map_path, "vector map JSON")->required();
  build->add_option("-o,--output", index_out, "index output path");
  build->add_option("--d-max", d_max, "max tuple span, meters");
  build->add_option("--mode", mode, "ingestion mode")->check(CLI::IsMember({"exact", "raster"}));
  build->add_option("--resolution", resolution, "raster mode: meters per pixel");
  build->add_option("--stroke", stroke, "raster mode: road stroke width, meters");

  // extract
  auto* extract = app.add_subcommand("extract", "extract intersections from a road mask");
  std::string ex_mask, ex_meta, ex_out = "intersections.json";
  extract->add_option("--mask", ex_mask, "binary road mask (P5 PGM)")->required();
  extract->add_option("--meta", ex_meta, "sidecar JSON with origin/resolution")->required();
  extract->add_option("-o,--output", ex_out, "intersections output path");

  // locate
  auto* locate = app.add_subcommand("locate", "localize a query against an index");
  std::string loc_index, loc_query, loc_mask, loc_meta, loc_config, loc_out = "result.json";
  std::uint64_t loc_seed = 0;
  bool loc_timing = false;
  locate->add_option("index", loc_index, "reference index (.rlix)")->required();
  auto* qj = locate->add_option("--query-json", loc_query, "query intersections JSON");
  auto* qm = locate->add_option("--mask", loc_mask, "query road mask (P5 PGM)");
  locate->add_option("--meta", loc_meta, "sidecar JSON for --mask");
  locate->add_option("--config", loc_config, "matcher config JSON");
  auto* seed_opt = locate->add_option("--seed", loc_seed, "rng seed (default 0)");
  locate->add_option("-o,--output", loc_out, "result output path");
  locate->add_flag("--timing", loc_timing, "include elapsed_ms in the result JSON");
  qj->excludes(qm);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "synthetic data generation");
  synth_cmd->require_subcommand(1);
  auto* synth_map = synth_cmd->add_subcommand("map", "generate a synthetic road map");
  std::string sm_out = "map.json", sm_style = "mixed";
  std::uint64_t sm_seed = 0;
  double sm_extent_km = 4.0, sm_density = 200.0;
  synth_map->add_option("-o,--output", sm_out, "map output path");
  synth_map->add_option("--seed", sm_seed, "map seed");
  synth_map->add_option("--extent-km", sm_extent_km, "square side, kilometers");
  synth_map->add_option("--density", sm_density, "junctions per square kilometer");
  synth_map->add_option("--style", sm_style, "network style")
      ->check(CLI::IsMember({"mixed", "grid-only"}));

  auto* synth_q = synth_cmd->add_subcommand("queries", "generate query/truth pairs from a map");
  std::string sq_map, sq_out = "queries";
  int sq_count = 10;
  std::uint64_t sq_seed = 0;
  synth::ScenarioParams scenario;
  double sq_tangent_sigma_deg = 0.0;
  bool sq_identity = false;
  synth_q->add_option("map", sq_map, "vector map JSON")->required();
  synth_q->add_option("-o,--output", sq_out, "output directory");
  synth_q->add_option("--count", sq_count, "number of queries");
  synth_q->add_option("--seed", sq_seed, "rng seed");
  synth_q->add_option("--scene-size", scenario.scene_size, "scene side, meters");
  synth_q->add_option("--subset", scenario.subset_size, "intersections per query");
  synth_q->add_option("--tangent-sigma-deg", sq_tangent_sigma_deg, "tangent angle noise, degrees");
  synth_q->add_option("--center-sigma", scenario.noise.center_sigma, "center noise, meters");
  synth_q->add_option("--dropout", scenario.noise.dropout_rate, "dropout rate");
  synth_q->add_option("--clutter", scenario.noise.clutter_rate, "clutter rate");
  synth_q->add_flag("--identity", sq_identity, "no transform, keep map coordinates");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score result files against ground truth");
  std::string ev_results, ev_truth, ev_csv = "report.csv", ev_json;
  double ev_radius = 100.0;
  eval_cmd->add_option("results", ev_results, "directory with result_<id>.json files")->required();
  eval_cmd->add_option("--truth", ev_truth, "directory with truth_<id>.json files")->required();
  eval_cmd->add_option("--radius", ev_radius, "success radius, meters");
  eval_cmd->add_option("-o,--output", ev_csv, "CSV report path");
  eval_cmd->add_option("--json", ev_json, "JSON aggregate path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (build->parsed())
      return cmd_build_index(map_path, index_out, d_max, mode, resolution, stroke);
    if (extract->parsed()) return cmd_extract(ex_mask, ex_meta, ex_out);
    if (locate->parsed()) {
      if (loc_query.empty() && (loc_mask.empty() || loc_meta.empty())) {
        std::fprintf(stderr, "locate: need --query-json or --mask with --meta\n");
        return kExitUsage;
      }
      return cmd_locate(loc_index, loc_query, loc_mask, loc_meta, loc_config, loc_seed,
                        seed_opt->count() > 0, loc_out, loc_timing);
    }
    if (synth_map->parsed())
      return cmd_synth_map(sm_out, sm_seed, sm_extent_km, sm_density, sm_style);
    if (synth_q->parsed()) {
      scenario.noise.tangent_angle_sigma = sq_tangent_sigma_deg * geometry::kPi / 180.0;
      scenario.random_transform = !sq_identity;
      return cmd_synth_queries(sq_map, sq_out, sq_count, sq_seed, scenario);
    }
    if (eval_cmd->parsed()) return cmd_eval(ev_results, ev_truth, ev_radius, ev_csv, ev_json);
  } catch (const NotEnoughIntersections& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  }
  return kExitUsage;
}
