#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "roadloc/matcher.hpp"
#include "roadloc/synth.hpp"

namespace roadloc::eval {

struct EvalInput {
  std::string scenario_id;
  matcher::LocalizationResult result;
  std::optional<synth::QueryTruth> truth;  // absent for queries with no true location
};

struct EvalRow {
  std::string scenario_id;
  matcher::Verdict verdict = matcher::Verdict::BudgetExhausted;
  double theta = 0.0;
  double center_error_m = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t l_used = 0;
  std::uint64_t k_used_total = 0;
  double elapsed_ms = 0.0;
  bool true_positive = false;
  bool false_positive = false;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = std::numeric_limits<double>::quiet_NaN();  // tp / (tp + fp)
  double recall = std::numeric_limits<double>::quiet_NaN();     // tp / queries with a truth
  double runtime_ms_p50 = 0.0, runtime_ms_p90 = 0.0, runtime_ms_max = 0.0, runtime_ms_mean = 0.0;
};

// A Located verdict counts as a true positive when the estimated scene center
// (the query-frame truth center mapped by the reported homography) lies
// within success_radius_m of the true map center; Located without a truth or
// beyond the radius is a false positive.
EvalReport evaluate(std::span<const EvalInput> inputs, double success_radius_m);

// scenario_id, verdict, theta, center_error_m, l_used, k_used_total, elapsed_ms
std::string to_csv(const EvalReport& report);
std::string to_json(const EvalReport& report);

}  // namespace roadloc::eval
