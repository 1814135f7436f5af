#pragma once

// Connection-state sequences: conversion from SNR series, DTW template mining,
// anomaly scoring and radial state diagrams.

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "plcgrid/embed.hpp"
#include "plcgrid/measurement.hpp"

namespace plcgrid::stateseq {

struct StateSequence {
  std::string connection_id;
  std::vector<Timestamp> timestamps;
  std::vector<int> states;

  std::size_t size() const noexcept { return states.size(); }
};

StateSequence to_state_sequence(const MeasurementSeries& series, const embed::StateModel& model);

/// "timestamp,state" rows with ISO-8601 timestamps, ascending.
std::string state_sequence_to_csv(const StateSequence& seq);
StateSequence state_sequence_from_csv(std::string_view text, std::string connection_id = {});

/// Train = first floor(ratio * t) symbols, eval = the rest.
std::pair<StateSequence, StateSequence> split_sequence(const StateSequence& seq,
                                                       double ratio = 0.75);

enum class Metric { mismatch01, centroid_euclidean, centroid_cosine };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view name);

/// Local distance between two state symbols.
///
/// mismatch01 is 0/1 equality. The centroid metrics compare the clusters' mean
/// spectra; the noise label (-1) and labels without a centroid sit at the
/// largest centroid distance from everything but themselves.
class SymbolDistance {
 public:
  SymbolDistance() = default;
  SymbolDistance(Metric metric, const std::map<int, std::vector<double>>& centroids);

  Metric metric() const noexcept { return metric_; }
  double operator()(int a, int b) const;

 private:
  Metric metric_ = Metric::mismatch01;
  std::map<std::pair<int, int>, double> table_;
  double unknown_ = 1.0;
};

struct DtwResult {
  double cost = 0.0;
  /// Monotone alignment from (0, 0) to (|a| - 1, |b| - 1).
  std::vector<std::pair<std::size_t, std::size_t>> path;
};

/// Classic DTW with steps (1,0), (0,1), (1,1).
DtwResult dtw(std::span<const int> a, std::span<const int> b, const SymbolDistance& dist = {});

/// Cost only. Returns +inf as soon as the cost provably exceeds `abandon_above`.
double dtw_cost(std::span<const int> a, std::span<const int> b, const SymbolDistance& dist = {},
                double abandon_above = std::numeric_limits<double>::infinity());

/// Maximal runs of equal symbols.
struct RunLengths {
  std::vector<int> symbols;
  std::vector<std::size_t> lengths;
};

RunLengths run_lengths(std::span<const int> seq);

/// Cost of the cheapest warping path that pairs one run with a consecutive
/// stretch of runs of the other sequence at a time. It is the cost of a real
/// path, so never below dtw_cost, and 0 whenever both sequences carry the
/// same symbols in the same order.
double run_path_cost(const RunLengths& a, const RunLengths& b, const SymbolDistance& dist = {});

struct TemplateSet {
  std::vector<std::vector<int>> templates;
  /// Windows within `radius` of each template (the template's own window included).
  std::vector<std::size_t> support;
  /// Start index of the window each template was taken from.
  std::vector<std::size_t> origin;
  std::size_t window = 0;
  double radius = 0.0;
  Metric metric = Metric::mismatch01;
  std::size_t total_windows = 0;
  std::size_t covered_windows = 0;

  double coverage() const {
    return total_windows == 0 ? 0.0 : static_cast<double>(covered_windows) / total_windows;
  }
};

/// Greedy cover of the stride-1 windows of `train`: candidates are visited in
/// order of descending match count, and a window becomes a template when at
/// least `min_support` other windows lie within `radius`.
TemplateSet mine_templates(const StateSequence& train, std::size_t window, double radius,
                           std::size_t min_support, const SymbolDistance& dist = {});

struct WindowScore {
  std::size_t start = 0;
  Timestamp start_ts = 0;
  /// Exclusive.
  Timestamp end_ts = 0;
  double score = 0.0;
  bool flagged = false;
};

struct AnomalyInterval {
  Timestamp start = 0;
  Timestamp end = 0;
  double max_score = 0.0;
  std::size_t windows = 0;
};

struct AnomalyReport {
  std::string connection_id;
  double threshold = 0.0;
  std::size_t stride = 0;
  std::vector<WindowScore> windows;
  /// Disjoint, time-ordered merges of overlapping or adjacent flagged windows.
  std::vector<AnomalyInterval> intervals;
};

/// Windows of the template length every `stride` symbols (the last window is
/// aligned to the end); score = min DTW over templates, flagged when > threshold.
AnomalyReport score_anomalies(const StateSequence& eval, const TemplateSet& templates,
                              double threshold, std::size_t stride,
                              const SymbolDistance& dist = {});

std::string anomaly_report_to_json(const AnomalyReport& report);

enum class RadialPeriod { day, year };

RadialPeriod parse_period(std::string_view name);

/// Standalone SVG: one ring per period (day: 96 slots, year: 365 per-day
/// majority states), one coloured arc per slot, and a state legend.
std::string render_radial(const StateSequence& seq, RadialPeriod period,
                          std::span<const std::string> palette = {});

}  // namespace plcgrid::stateseq
