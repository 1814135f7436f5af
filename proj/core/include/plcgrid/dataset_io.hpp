#pragma once

// On-disk layout of a simulated dataset:
//   <dir>/manifest.json      connection ids, endpoints, profile, row counts
//   <dir>/ground_truth.json  topology, direct/indirect labels, joints, event log
//   <dir>/series/<id>.csv    one measurement file per directed connection

#include <filesystem>
#include <string>
#include <string_view>

#include "plcgrid/error.hpp"
#include "plcgrid/sim.hpp"

namespace plcgrid::sim {

/// Invalid configuration; `field()` is a JSON-pointer-like path ("simulator.days").
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Every simulator parameter, as read from the "simulator" config section.
struct SimulationConfig {
  TopologyConfig topology;
  double base_loss_low_db_per_km = 10.0;
  double base_loss_high_db_per_km = 60.0;
  double joint_notch_depth_db = 6.0;
  double joint_notch_width_channels = 2.0;
  double tx_headroom_db = 38.0;
  NoiseModel noise;
  Timestamp start = 1609459200;  // 2021-01-01T00:00:00Z
  int days = 30;
  Profile profile = Profile::fin2;
  std::vector<EventSpec> events;

  TransferModel transfer() const;
  TimeRange time_range() const;
};

/// Parses a "simulator" JSON object. Missing keys keep their defaults; `prefix`
/// is prepended to field paths in errors.
SimulationConfig simulation_config_from_json(std::string_view json_text,
                                             const std::string& prefix = "simulator");
std::string simulation_config_to_json(const SimulationConfig& config);

std::string ground_truth_to_json(const GridTopology& topology, const GroundTruth& truth);
std::pair<GridTopology, GroundTruth> ground_truth_from_json(std::string_view json_text);

struct StoredDataset {
  Dataset dataset;
  GridTopology topology;
  GroundTruth truth;
};

/// Writes CSVs, manifest and ground truth. Throws plcgrid::IoError on failure.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                   const GridTopology& topology, const GroundTruth& truth);
StoredDataset read_dataset(const std::filesystem::path& dir);

class IoError : public Error {
 public:
  using Error::Error;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace plcgrid::sim
