// plcgrid: simulate PLC grids and run the analysis pipeline on them.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "acceptance.hpp"
#include "config.hpp"
#include "pipeline.hpp"

namespace {

using namespace plcgrid;
using namespace plcgrid::app;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("plcgrid");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("PLCGRID_LOG")) {
    const auto parsed = spdlog::level::from_str(level);
    // from_str maps unknown names to "off"; only honour it when asked for.
    if (parsed != spdlog::level::off || std::string(level) == "off") spdlog::set_level(parsed);
    else spdlog::warn("PLCGRID_LOG={} is not a log level; keeping info", level);
  }
}

struct Common {
  std::optional<std::string> config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "Run configuration (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--out", c.out, "Output directory (overrides paths.out)");
  cmd->add_option("--seed", c.seed, "Top-level seed (overrides the configured one)");
}

RunConfig load(const Common& c) {
  auto config = load_run_config(*c.config, c.seed);
  if (c.out) config.out = *c.out;
  return config;
}

int run(int argc, char** argv) {
  CLI::App app{"Simulation and analysis of narrowband PLC grid measurements"};
  app.require_subcommand(1);

  Common sim_opts, pipe_opts, acc_opts, render_opts;
  auto* simulate = app.add_subcommand("simulate", "Simulate a grid and write its dataset");
  add_common(simulate, sim_opts, true);

  auto* pipeline = app.add_subcommand("pipeline", "Run one analysis stage");
  std::string stage;
  pipeline->add_option("stage", stage, "states | anomaly | joints | topo | radial")->required();
  add_common(pipeline, pipe_opts, true);

  auto* acceptance = app.add_subcommand("acceptance", "Run the acceptance criteria");
  add_common(acceptance, acc_opts, false);
  std::vector<int> only;
  std::string plant;
  bool no_budget = false;
  acceptance->add_option("--only", only, "Criterion ids to run (default: all)")->delimiter(',');
  acceptance->add_option("--plant-fault", plant, "Deliberately break a component (dtw)")
      ->check(CLI::IsMember({"dtw"}));
  acceptance->add_flag("--no-budget", no_budget, "Do not fail criteria over their time budget");

  auto* render = app.add_subcommand("render", "Render an artifact");
  render->require_subcommand(1);
  auto* radial = render->add_subcommand("radial", "Radial state diagram of one link as SVG");
  add_common(radial, render_opts, false);
  std::string link, period = "day";
  std::optional<std::string> sequence, file;
  radial->add_option("--link", link, "Connection id, e.g. n001-n002");
  radial->add_option("--sequence", sequence, "State sequence CSV to render instead of pipeline output");
  radial->add_option("--period", period, "day | year");
  radial->add_option("--file", file, "Write the SVG here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ExitCode::ok : ExitCode::config_error;
  }

  if (*simulate) {
    const auto s = cmd_simulate(load(sim_opts));
    spdlog::info("wrote {} links x {} slots ({} events) to {}", s.links, s.timesteps, s.events, s.dir.string());
    return ExitCode::ok;
  }
  if (*pipeline) {
    cmd_pipeline(load(pipe_opts), stage);
    return ExitCode::ok;
  }
  if (*acceptance) {
    AcceptanceOptions opt;
    opt.only = only;
    opt.plant_dtw_fault = plant == "dtw";
    opt.enforce_budget = !no_budget;
    std::filesystem::path out = "out";
    if (acc_opts.config) {
      const auto config = load(acc_opts);
      out = config.out;
      opt.seeds = {config.seed};
    } else if (acc_opts.out) {
      out = *acc_opts.out;
    }
    if (acc_opts.seed) opt.seeds = {*acc_opts.seed};
    opt.work_dir = out / "acceptance" / "work";
    const auto results = run_acceptance(opt, [](const CriterionResult& r) {
      std::cout << format_result_line(r) << std::endl;
    });
    std::filesystem::create_directories(out / "acceptance");
    sim::write_file(out / "acceptance" / "results.json", acceptance_results_to_json(results));
    bool all = !results.empty();
    for (const auto& r : results) all = all && r.passed;
    return all ? ExitCode::ok : ExitCode::acceptance_failure;
  }
  if (*radial) {
    if (link.empty() && !sequence) throw ConfigError("link", "--link or --sequence is required");
    std::optional<RunConfig> config;
    if (render_opts.config) config = load(render_opts);
    else if (!sequence) throw ConfigError("config", "--config is required to locate the link's sequence");
    std::optional<std::filesystem::path> seq_path;
    if (sequence) seq_path = *sequence;
    const auto svg = cmd_render_radial(config, link, seq_path, stateseq::parse_period(period));
    if (file) sim::write_file(*file, svg);
    else std::cout << svg;
    return ExitCode::ok;
  }
  return ExitCode::config_error;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  try {
    return run(argc, argv);
  } catch (const DependencyError& e) {
    spdlog::error("missing dependency ({}): {}", e.needed(), e.what());
    return ExitCode::dependency_error;
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return ExitCode::config_error;
  } catch (const sim::IoError& e) {
    spdlog::error("I/O error: {}", e.what());
    return ExitCode::io_error;
  } catch (const ParseError& e) {
    spdlog::error("unreadable input: {}", e.what());
    return ExitCode::io_error;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("I/O error: {}", e.what());
    return ExitCode::io_error;
  } catch (const InvalidArgument& e) {
    spdlog::error("invalid argument: {}", e.what());
    return ExitCode::config_error;
  } catch (const ValidationError& e) {
    spdlog::error("invalid input: {}", e.what());
    return ExitCode::config_error;
  } catch (const DivergenceError& e) {
    spdlog::error("training diverged: {}", e.what());
    return ExitCode::config_error;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return ExitCode::io_error;
  }
}
