// Standalone acceptance runner: one PASS/FAIL line per criterion, non-zero
// exit when any criterion fails.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

#include "acceptance.hpp"

int main(int argc, char** argv) {
  using namespace plcgrid::app;
  CLI::App app{"plcgrid acceptance criteria"};
  std::vector<int> only;
  std::vector<std::uint64_t> seeds;
  std::string plant;
  std::string work_dir = "acceptance_work";
  bool no_budget = false;
  app.add_option("--only", only, "Criterion ids to run (default: all)")->delimiter(',');
  app.add_option("--seeds", seeds, "Seeds to sweep")->delimiter(',');
  app.add_option("--plant-fault", plant, "Deliberately break a component (dtw)")->check(CLI::IsMember({"dtw"}));
  app.add_option("--work-dir", work_dir, "Scratch directory");
  app.add_flag("--no-budget", no_budget, "Do not fail criteria over their time budget");
  CLI11_PARSE(app, argc, argv);

  if (const char* level = std::getenv("PLCGRID_LOG")) spdlog::set_level(spdlog::level::from_str(level));
  else spdlog::set_level(spdlog::level::warn);

  AcceptanceOptions opt;
  opt.only = only;
  if (!seeds.empty()) opt.seeds = seeds;
  opt.plant_dtw_fault = plant == "dtw";
  opt.enforce_budget = !no_budget;
  opt.work_dir = work_dir;
  try {
    const auto results = run_acceptance(opt, [](const CriterionResult& r) {
      std::cout << format_result_line(r) << std::endl;
    });
    bool all = !results.empty();
    for (const auto& r : results) all = all && r.passed;
    return all ? 0 : 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
