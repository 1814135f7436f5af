#pragma once

// Commands behind the CLI. They throw; main() maps error types to exit codes.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "config.hpp"
#include "plcgrid/stateseq.hpp"
#include "plcgrid/topo.hpp"

namespace plcgrid::app {

/// A stage ran before the stage whose artifacts it needs.
class DependencyError : public Error {
 public:
  DependencyError(std::string needed, const std::string& what)
      : Error(what), needed_(std::move(needed)) {}
  const std::string& needed() const noexcept { return needed_; }

 private:
  std::string needed_;
};

enum ExitCode : int { ok = 0, config_error = 1, io_error = 2, dependency_error = 3, acceptance_failure = 4 };

struct SimulateSummary {
  std::size_t links = 0;
  std::size_t timesteps = 0;
  std::size_t events = 0;
  std::filesystem::path dir;
};

SimulateSummary cmd_simulate(const RunConfig& config);

inline constexpr std::string_view kStages[] = {"states", "anomaly", "joints", "topo", "radial"};

/// Runs one stage and returns its report (also written to <out>/<stage>/report.json).
std::string cmd_pipeline(const RunConfig& config, std::string_view stage);

/// Topology samples of one freshly simulated grid (`nodes` nodes over `days`
/// days) at `timestamps` evenly spaced instants.
std::vector<topo::TopoSample> topo_grid_samples(const sim::SimulationConfig& base, int nodes, int days,
                                                std::size_t timestamps, std::uint64_t seed,
                                                std::size_t max_neighborhood = 8, std::size_t min_neighborhood = 4);

/// "n003-n007" -> (3, 7).
std::pair<int, int> parse_connection_id(std::string_view id);

/// Windows that overlap an event affecting their link by at least half their
/// span count as event windows; windows touching no event are normal.
struct EventWindowStats {
  std::size_t event_windows = 0;
  std::size_t event_flagged = 0;
  std::size_t normal_windows = 0;
  std::size_t normal_flagged = 0;

  void add(const EventWindowStats& other);
  double recall() const;
  double false_positive_rate() const;
};

EventWindowStats score_event_windows(const stateseq::AnomalyReport& report,
                                     std::span<const sim::EventSpec> events, int from, int to);

/// SVG of one link's state sequence: read from `sequence_file` when given,
/// otherwise from the states stage output for `link`.
std::string cmd_render_radial(const std::optional<RunConfig>& config, const std::string& link,
                              const std::optional<std::filesystem::path>& sequence_file,
                              stateseq::RadialPeriod period);

}  // namespace plcgrid::app
