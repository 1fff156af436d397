#include "roadloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace roadloc::eval {

EvalReport evaluate(std::span<const EvalInput> inputs, double success_radius_m) {
  EvalReport report;
  std::vector<double> runtimes;
  std::uint64_t with_truth = 0;
  for (const auto& in : inputs) {
    EvalRow row;
    row.scenario_id = in.scenario_id;
    row.verdict = in.result.verdict;
    row.theta = in.result.inlier_ratio;
    row.l_used = in.result.query_samples_used;
    row.k_used_total = in.result.ref_samples_used;
    row.elapsed_ms = in.result.elapsed_ms;
    runtimes.push_back(in.result.elapsed_ms);

    if (in.truth) ++with_truth;
    const bool located = in.result.verdict == matcher::Verdict::Located;
    if (located && in.result.best_h && in.truth) {
      const Eigen::Vector2d est = in.result.best_h->apply(in.truth->scene_center_query());
      row.center_error_m = (est - in.truth->scene_center_map).norm();
      row.true_positive = row.center_error_m <= success_radius_m;
      row.false_positive = !row.true_positive;
    } else if (located) {
      row.false_positive = true;  // confidently located where nothing exists
    }
    report.tp += row.true_positive;
    report.fp += row.false_positive;
    if (!located) (in.truth ? report.fn : report.tn) += 1;
    report.rows.push_back(std::move(row));
  }

  if (report.tp + report.fp > 0)
    report.precision = static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fp);
  if (with_truth > 0)
    report.recall = static_cast<double>(report.tp) / static_cast<double>(with_truth);

  if (!runtimes.empty()) {
    std::sort(runtimes.begin(), runtimes.end());
    const auto quantile = [&](double q) {
      const std::size_t i = static_cast<std::size_t>(q * (runtimes.size() - 1));
      return runtimes[i];
    };
    report.runtime_ms_p50 = quantile(0.5);
    report.runtime_ms_p90 = quantile(0.9);
    report.runtime_ms_max = runtimes.back();
    double sum = 0;
    for (double r : runtimes) sum += r;
    report.runtime_ms_mean = sum / static_cast<double>(runtimes.size());
  }
  return report;
}

std::string to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "scenario_id,verdict,theta,center_error_m,l_used,k_used_total,elapsed_ms\n";
  out.precision(10);
  for (const auto& row : report.rows) {
    out << row.scenario_id << ',' << matcher::to_string(row.verdict) << ',' << row.theta << ',';
    if (std::isnan(row.center_error_m))
      out << "";
    else
      out << row.center_error_m;
    out << ',' << row.l_used << ',' << row.k_used_total << ',' << row.elapsed_ms << '\n';
  }
  return out.str();
}

std::string to_json(const EvalReport& report) {
  nlohmann::json j;
  j["tp"] = report.tp;
  j["fp"] = report.fp;
  j["fn"] = report.fn;
  j["tn"] = report.tn;
  j["precision"] = std::isnan(report.precision) ? nlohmann::json() : nlohmann::json(report.precision);
  j["recall"] = std::isnan(report.recall) ? nlohmann::json() : nlohmann::json(report.recall);
  j["runtime_ms"] = {{"p50", report.runtime_ms_p50},
                     {"p90", report.runtime_ms_p90},
                     {"max", report.runtime_ms_max},
                     {"mean", report.runtime_ms_mean}};
  j["queries"] = report.rows.size();
  return j.dump(2);
}

}  // namespace roadloc::eval
