#pragma once

// The acceptance suite: ten self-contained criteria, each simulating its own
// fixtures and checking a hard tolerance plus a wall-time budget.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace plcgrid::app {

struct CriterionInfo {
  int id = 0;
  std::string name;
  double budget_s = 0.0;
};

const std::vector<CriterionInfo>& acceptance_criteria();

struct AcceptanceOptions {
  /// Criterion ids to run; empty runs all.
  std::vector<int> only;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  /// Swaps in a deliberately broken DTW so the DTW oracle must fail.
  bool plant_dtw_fault = false;
  /// Scratch space for criteria that write artifacts.
  std::filesystem::path work_dir;
  /// A criterion over its wall-time budget fails.
  bool enforce_budget = true;
};

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double budget_s = 0.0;
  std::map<std::string, double> metrics;
};

CriterionResult run_criterion(int id, const AcceptanceOptions& options);

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options,
                                            const std::function<void(const CriterionResult&)>& on_result = {});

/// "PASS  2 dtw-oracle  ...  (1.2 s / 60 s)".
std::string format_result_line(const CriterionResult& result);
std::string acceptance_results_to_json(const std::vector<CriterionResult>& results);

}  // namespace plcgrid::app
