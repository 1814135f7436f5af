#pragma once

// Generative model of a radial low-voltage PLC grid. Attenuation is a
// magnitude-only surrogate in dB: each cable section contributes a length-scaled
// base loss plus Gaussian notches at the channels its joints disturb, and a
// link's SNR is the transmit headroom minus the sum over its path minus noise.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "plcgrid/measurement.hpp"
#include "plcgrid/random.hpp"

namespace plcgrid::sim {

enum class NodeKind { substation, cabinet, household };

struct Node {
  int id = 0;
  NodeKind kind = NodeKind::household;
};

struct CableSection {
  int id = 0;
  int a = 0;
  int b = 0;
  double length_m = 0.0;
  /// One entry per joint; each lists the channels that joint imprints.
  std::vector<std::vector<int>> joint_channels;

  int joints() const noexcept { return static_cast<int>(joint_channels.size()); }
};

/// A measured PLC connection between two nodes (unordered; the dataset holds
/// both directions).
struct PlcLink {
  int a = 0;
  int b = 0;
  /// Section ids ordered from `a` to `b`.
  std::vector<int> path;
  bool direct = false;
};

struct GridTopology {
  std::vector<Node> nodes;
  std::vector<CableSection> sections;
  std::vector<PlcLink> plc_links;

  const CableSection& section(int id) const;
  /// Section ids on the unique path between two nodes, ordered from `from`.
  std::vector<int> section_path(int from, int to) const;
  /// Hop count, or nullopt when disconnected.
  std::optional<int> hops(int from, int to) const;
  const PlcLink* find_link(int a, int b) const;
};

struct TopologyConfig {
  int n_nodes = 8;
  int max_degree = 3;
  int min_joints = 0;
  int max_joints = 3;
  double min_length_m = 120.0;
  double max_length_m = 250.0;
  int hop_radius = 3;
  /// Characteristic channels imprinted by every joint.
  std::vector<int> joint_centers = {120, 430, 780};
  std::uint64_t seed = 1;
};

enum class EventKind { fuse_failure, transient_interferer, cable_degradation };

std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view name);

struct EventSpec {
  EventKind kind = EventKind::fuse_failure;
  /// Either a node (all links ending there) or a link (both directions).
  std::optional<int> node;
  std::optional<std::pair<int, int>> link;
  Timestamp start = 0;
  std::int64_t duration_s = 0;
  double severity_db = 0.0;
  /// Affected band for transient interferers (inclusive channel indices).
  int band_lo = 200;
  int band_hi = 260;
};

struct LinkLabel {
  int a = 0;
  int b = 0;
  bool direct = false;
  int hops = 0;
};

struct GroundTruth {
  std::vector<LinkLabel> links;
  /// section id -> joint count / joint channels.
  std::map<int, int> section_joints;
  std::map<int, std::vector<std::vector<int>>> section_joint_channels;
  std::vector<EventSpec> events;
};

GroundTruth ground_truth_of(const GridTopology& topology);

/// Random radial tree; deterministic per seed. Node 0 is the substation.
std::pair<GridTopology, GroundTruth> generate_topology(const TopologyConfig& config);

/// Builds plc_links for every node pair within `hop_radius` of a given tree.
void enumerate_links(GridTopology& topology, int hop_radius);

struct TransferModel {
  /// Per-channel loss in dB/km; non-decreasing with channel index.
  std::vector<double> base_loss_db_per_km;
  double joint_notch_depth_db = 6.0;
  double joint_notch_width_channels = 2.0;
  /// Transmit headroom S0.
  double tx_headroom_db = 38.0;

  static TransferModel linear(double low_db_per_km, double high_db_per_km);
  void validate() const;
};

struct Interferer {
  int band_lo = 0;
  int band_hi = 0;
  double depth_db = 0.0;
  /// Active hours of day [start_hour, end_hour); equal values mean always on.
  double start_hour = 0.0;
  double end_hour = 0.0;
  /// Receiving nodes affected; empty means every link.
  std::vector<int> nodes;

  bool active(Timestamp t) const;
  bool applies_to(int receiver) const;
};

struct NoiseModel {
  double daily_amp_db = 1.5;
  double seasonal_amp_db = 2.0;
  double awgn_sigma_db = 1.0;
  std::vector<Interferer> interferers;

  static NoiseModel none() { return {0.0, 0.0, 0.0, {}}; }
  void validate() const;
};

/// Per-channel attenuation of one section in dB.
std::vector<double> section_attenuation(const CableSection& section, const TransferModel& model);

/// Directed link between two nodes.
struct DirectedLink {
  int from = 0;
  int to = 0;
  std::vector<int> path;
};

std::string connection_id(int from, int to);

/// Deterministic (noise-free) part of a link's SNR before clamping.
std::vector<double> path_headroom(const GridTopology& topology, const std::vector<int>& path,
                                  const TransferModel& transfer);

/// Noise to subtract at time t on a link received at `receiver`.
void add_noise(std::vector<double>& noise, Timestamp t, int receiver, const NoiseModel& model,
               Rng& rng);

ChannelSpectrum path_snr(const GridTopology& topology, const DirectedLink& link, Timestamp t,
                         const TransferModel& transfer, const NoiseModel& noise, Profile profile,
                         Rng& rng);

/// Additive dB reduction of `event` on channel `channel` at time t (0 outside).
double event_drop_db(const EventSpec& event, std::size_t channel, Timestamp t,
                     const TransferModel& transfer);
bool event_affects(const EventSpec& event, int from, int to);

struct TimeRange {
  Timestamp start = 0;
  Timestamp end = 0;  // exclusive

  std::size_t steps() const { return static_cast<std::size_t>((end - start) / kSlotSeconds); }
};

/// Directional series keyed by connection id ("n<from>-n<to>").
struct Dataset {
  Profile profile = Profile::fin2;
  std::map<std::string, MeasurementSeries> series;
  /// connection id -> (from, to).
  std::map<std::string, std::pair<int, int>> endpoints;

  const MeasurementSeries* find(int from, int to) const;
};

/// Applies an event to an existing dataset, clamping to the profile range, and
/// records it in the ground truth log.
void inject_event(Dataset& dataset, GroundTruth& truth, const EventSpec& event,
                  const TransferModel& transfer);

struct SynthesisOptions {
  Profile profile = Profile::fin2;
  /// Applied before clamping, so overlapping effects add exactly.
  std::vector<EventSpec> events;
  bool with_tonemaps = true;
  /// Restrict synthesis to these directed connections (empty: all links).
  std::vector<std::pair<int, int>> only;
};

std::pair<Dataset, GroundTruth> synthesize_dataset(const GridTopology& topology,
                                                   const TransferModel& transfer,
                                                   const NoiseModel& noise, TimeRange range,
                                                   std::uint64_t seed,
                                                   const SynthesisOptions& options = {});

}  // namespace plcgrid::sim
