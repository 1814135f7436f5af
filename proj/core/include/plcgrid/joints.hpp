#pragma once

// Cable-joint counting from one-day SNR windows with a small residual 1-d CNN:
// the 917 channels form the convolved axis and the 96 time slots are pooled.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plcgrid/measurement.hpp"
#include "plcgrid/nn.hpp"
#include "plcgrid/sim.hpp"

namespace plcgrid::joints {

struct JointSample {
  DayWindow window;
  int joint_count = 0;
  int section_id = 0;
};

struct JointDataset {
  std::vector<JointSample> train;
  std::vector<JointSample> val;
  std::vector<int> train_sections;
  std::vector<int> val_sections;
};

/// Day windows of every direct link (both directions), labelled with the
/// section's joint count. Sections are split between train and validation
/// so that none appears in both.
JointDataset build_joint_dataset(const sim::Dataset& dataset, const sim::GridTopology& topology,
                                 const sim::GroundTruth& truth, double val_fraction = 0.2,
                                 std::uint64_t seed = 0);

struct JointParams {
  /// Output channels of the stem and of each residual block.
  std::vector<std::size_t> channels = {16, 32, 64, 64};
  std::size_t kernel = 5;
  /// Time slots averaged together before the convolutions.
  std::size_t time_group = 12;
  double contrastive_weight = 0.1;
  double temperature = 0.1;
  std::size_t epochs = 12;
  std::size_t batch = 16;
  double learning_rate = 2e-3;
  std::uint64_t seed = 0;
};

struct JointModel {
  nn::Sequential net;
  /// Layers [0, embedding_end) produce the embedding fed to the contrastive term.
  std::size_t embedding_end = 0;
  JointParams params;
  /// Mean objective per epoch.
  std::vector<double> loss_curve;
};

JointModel build_joint_model(const JointParams& params);

/// Input tensor [B, 96, 917] of the given windows.
nn::Tensor windows_to_tensor(std::span<const JointSample> samples);
nn::Tensor window_to_tensor(const DayWindow& window);

JointModel train_joint_regressor(std::span<const JointSample> train, const JointParams& params);

struct JointPrediction {
  double raw = 0.0;
  /// max(0, raw rounded half to even).
  int rounded = 0;
};

int round_count(double raw);

JointPrediction predict_joints(JointModel& model, const DayWindow& window);
std::vector<JointPrediction> predict_all(JointModel& model, std::span<const JointSample> samples);

/// |d(raw output) / d(input)| for every slot and channel (96 x 917, row-major).
/// Parameter gradients are left as they were.
std::vector<double> regression_activation_map(JointModel& model, const DayWindow& window);

struct SensitivityProfile {
  std::vector<double> per_channel;
  std::size_t n_windows = 0;
  double err_tolerance = 0.0;
};

/// Mean saliency over time and over the samples whose |raw - label| is within
/// `err_tolerance`, normalized to sum 1.
SensitivityProfile channel_sensitivity(JointModel& model, std::span<const JointSample> samples,
                                       double err_tolerance);

/// Centred moving average of odd `width`, truncated at the edges.
std::vector<double> smooth_profile(std::span<const double> profile, std::size_t width = 5);

/// Channels of the `k` highest local maxima, each at least `min_separation`
/// channels from a higher one; descending by value.
std::vector<int> top_peaks(std::span<const double> profile, std::size_t k,
                           std::size_t min_separation = 20);

struct SectionReport {
  int section_id = 0;
  int joint_count = 0;
  std::size_t windows = 0;
  double mean_raw = 0.0;
  /// Variance of the per-window raw predictions: a quality signal, large
  /// values flag noisy days.
  double variance = 0.0;
  int rounded = 0;
};

struct JointEvaluation {
  /// Over windows, on the raw predictions.
  double mae = 0.0;
  double rounded_accuracy = 0.0;
  std::vector<SectionReport> sections;
};

JointEvaluation evaluate_joints(JointModel& model, std::span<const JointSample> samples);

std::string joint_evaluation_to_json(const JointEvaluation& eval);
/// "channel,sensitivity" with 917 data rows.
std::string sensitivity_to_csv(const SensitivityProfile& profile);

std::string save_joint_model(JointModel& model);
JointModel load_joint_model(std::string_view bytes);

}  // namespace plcgrid::joints
