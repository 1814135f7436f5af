#pragma once

// Run configuration: one JSON file with a section per pipeline stage. Every
// stage derives its own RNG stream from the top-level seed.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "plcgrid/dataset_io.hpp"
#include "plcgrid/embed.hpp"
#include "plcgrid/joints.hpp"
#include "plcgrid/stateseq.hpp"
#include "plcgrid/topo.hpp"

namespace plcgrid::app {

using sim::ConfigError;

struct EmbedConfig {
  /// Spectra drawn across all links for the t-SNE reference set.
  std::size_t sample_size = 1000;
  embed::StateParams params;
};

struct AnomalyConfig {
  double split_ratio = 0.75;
  std::size_t window = kSlotsPerDay;
  /// DTW radius for template mining; L / 10 by default.
  double radius = 9.6;
  std::size_t min_support = 2;
  /// Anomaly score threshold; L / 4 by default.
  double threshold = 24.0;
  std::size_t stride = 24;
  stateseq::Metric metric = stateseq::Metric::mismatch01;
  /// Connection ids to score; empty means all.
  std::vector<std::string> links;
};

struct JointsConfig {
  joints::JointParams params;
  double val_fraction = 0.2;
  /// Windows whose |prediction - label| exceeds this are left out of the sensitivity profile.
  double err_tolerance = 0.5;
  std::size_t smooth_width = 5;
  std::size_t peaks = 3;
  std::size_t peak_separation = 20;
};

struct TopoConfig {
  topo::TopoParams params;
  /// Synthetic training grids drawn from the simulator section.
  int train_grids = 6;
  int grid_nodes = 12;
  int grid_days = 2;
  std::size_t train_timestamps = 24;
  /// Instants of the dataset the trained filter is evaluated on.
  std::size_t eval_timestamps = 12;
  std::size_t max_neighborhood = 8;
  std::size_t min_neighborhood = 4;
  double threshold = 0.5;
  topo::SymmetryRule symmetry = topo::SymmetryRule::mean;
};

struct RadialConfig {
  stateseq::RadialPeriod period = stateseq::RadialPeriod::day;
  std::vector<std::string> links;
  std::vector<std::string> palette;
};

struct RunConfig {
  std::uint64_t seed = 0;
  /// Set when the simulator section names its own topology seed.
  bool explicit_topology_seed = false;
  sim::SimulationConfig simulator;
  EmbedConfig embed;
  AnomalyConfig anomaly;
  JointsConfig joints;
  TopoConfig topo;
  RadialConfig radial;
  std::filesystem::path out = "out";
  /// Input dataset directory; defaults to <out>/dataset.
  std::optional<std::filesystem::path> dataset;

  std::filesystem::path dataset_dir() const { return dataset ? *dataset : out / "dataset"; }
  std::filesystem::path stage_dir(std::string_view stage) const { return out / stage; }
};

/// Parses a run configuration. `seed_override` replaces (or supplies) the
/// top-level seed. Relative paths are resolved against `base_dir`.
RunConfig parse_run_config(std::string_view json_text,
                           std::optional<std::uint64_t> seed_override = std::nullopt,
                           const std::filesystem::path& base_dir = {});

RunConfig load_run_config(const std::filesystem::path& path,
                          std::optional<std::uint64_t> seed_override = std::nullopt);

/// The configuration as JSON, embedded in stage reports.
std::string run_config_to_json(const RunConfig& config);

// Per-component seeds, all derived from the top-level one.
std::uint64_t topology_seed(const RunConfig& config);
std::uint64_t synthesis_seed(const RunConfig& config);
std::uint64_t states_seed(const RunConfig& config);
std::uint64_t joints_seed(const RunConfig& config);
std::uint64_t topo_seed(const RunConfig& config);

}  // namespace plcgrid::app
