#pragma once

// Direct vs. indirect PLC neighbours. A neighbourhood's directed SNR spectra
// form an n x n x 917 adjacency tensor; an MLP encoder (pretrained as an
// autoencoder) embeds each measured edge, the embeddings are laid out as a
// sequence in row-major order, and two dilated convolutions score every edge.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "plcgrid/nn.hpp"
#include "plcgrid/sim.hpp"

namespace plcgrid::topo {

struct Neighborhood {
  int center = 0;
  /// Ascending node ids; contains `center`.
  std::vector<int> members;

  std::size_t size() const noexcept { return members.size(); }
};

/// For every node: itself plus the nodes it shares a PLC link with, nearest
/// first (hops, then id), capped at `max_size` and kept when at least
/// `min_size` nodes remain. Members are then sorted ascending.
std::vector<Neighborhood> local_neighborhoods(const sim::GridTopology& topology,
                                              std::size_t max_size = 8, std::size_t min_size = 4);

struct AdjacencyTensor {
  std::size_t n = 0;
  /// n x n x 917, row-major; entry (i, j) is the spectrum received at
  /// members[j] from members[i].
  std::vector<double> values;
  /// n x n; 1 where a measurement is present. The diagonal is always 0.
  std::vector<std::uint8_t> mask;
  Timestamp timestamp = 0;
  std::vector<int> members;

  std::span<const double> entry(std::size_t i, std::size_t j) const {
    return std::span<const double>(values).subspan((i * n + j) * kChannels, kChannels);
  }
  std::size_t measured() const;
};

/// Masked entries hold the profile's range minimum.
AdjacencyTensor build_adjacency_tensor(const sim::Dataset& dataset, const Neighborhood& nb,
                                       Timestamp t);

/// n x n; 1 where members i and j are joined by a single cable section.
std::vector<std::uint8_t> direct_labels(const sim::GridTopology& topology, const Neighborhood& nb);

struct TopoSample {
  AdjacencyTensor tensor;
  std::vector<std::uint8_t> labels;
};

/// One sample per (neighbourhood, timestamp) that has at least one measured pair.
std::vector<TopoSample> build_topo_samples(const sim::Dataset& dataset,
                                           const sim::GridTopology& topology,
                                           std::span<const Neighborhood> neighborhoods,
                                           std::span<const Timestamp> timestamps);

struct TopoParams {
  std::size_t hidden = 128;
  std::size_t embedding = 64;
  std::size_t filter_channels = 32;
  std::size_t kernel = 5;
  /// Dilations of the two convolutions.
  std::size_t dilation1 = 1;
  std::size_t dilation2 = 2;
  std::size_t pretrain_epochs = 8;
  /// Edge spectra drawn (without replacement) for pretraining; 0 keeps all.
  std::size_t pretrain_samples = 8192;
  std::size_t pretrain_batch = 64;
  double pretrain_learning_rate = 1e-3;
  std::size_t epochs = 10;
  /// Samples whose gradients are accumulated per optimizer step.
  std::size_t batch = 8;
  double learning_rate = 1e-3;
  bool freeze_encoder = false;
  std::uint64_t seed = 0;
};

struct Encoder {
  /// Normalization, dense, relu, dense: 917 -> hidden -> embedding.
  nn::Sequential net;
  double initial_mse = 0.0;
  double final_mse = 0.0;
  std::vector<double> loss_curve;
};

/// Autoencoder 917 -> hidden -> embedding -> hidden -> 917 trained on
/// reconstruction MSE over a seeded subsample of the spectra; returns its
/// first two dense layers.
Encoder pretrain_encoder(const nn::Tensor& edge_spectra, const TopoParams& params);

/// Measured edge spectra of the samples, [m, 917], in sample then row-major order.
nn::Tensor edge_spectra(std::span<const TopoSample> samples);

struct TopoModel {
  nn::Sequential net;
  TopoParams params;
  std::vector<double> loss_curve;
};

/// Full network with the encoder's weights copied in.
TopoModel build_topo_model(Encoder& encoder, const TopoParams& params);

/// Measured edges of a tensor as the network input, [E, 917], row-major.
nn::Tensor edge_input(const AdjacencyTensor& tensor);

/// Masked binary cross-entropy of one sample under the model.
double sample_loss(TopoModel& model, const TopoSample& sample);

TopoModel train_topology_filter(std::span<const TopoSample> samples, Encoder& encoder,
                                const TopoParams& params);

struct TopologyPrediction {
  std::size_t n = 0;
  std::vector<int> members;
  Timestamp timestamp = 0;
  /// n x n in [0, 1]; 0 where masked.
  std::vector<double> confidence;
  std::vector<std::uint8_t> binary;
  std::vector<std::uint8_t> mask;
  double threshold = 0.5;
};

TopologyPrediction predict_topology(TopoModel& model, const AdjacencyTensor& tensor,
                                    double threshold = 0.5);

/// Recomputes `binary` from `confidence` at a new threshold.
TopologyPrediction rethreshold(const TopologyPrediction& pred, double threshold);

enum class SymmetryRule { mean, min, max };

SymmetryRule parse_symmetry_rule(std::string_view name);

/// Exactly symmetric confidences. A pair measured in one direction only takes
/// that direction's value; the mask becomes the union of both directions.
TopologyPrediction symmetrize(const TopologyPrediction& pred, SymmetryRule rule = SymmetryRule::mean);

struct EdgeVote {
  int a = 0;  // a < b
  int b = 0;
  double confidence = 0.0;
  std::size_t votes = 0;
  bool direct = false;
};

/// Mean confidence per unordered node pair over every prediction (and
/// direction) that measures it, thresholded at `threshold`.
std::map<std::pair<int, int>, EdgeVote> overlap_votes(std::span<const TopologyPrediction> preds,
                                                      double threshold = 0.5);

/// Vote for one edge; throws when no prediction covers it.
EdgeVote overlap_vote(std::span<const TopologyPrediction> preds, int a, int b, double threshold = 0.5);

/// Replaces each prediction's entries by the voted decisions.
std::vector<TopologyPrediction> apply_votes(std::span<const TopologyPrediction> preds,
                                            const std::map<std::pair<int, int>, EdgeVote>& votes);

struct TopologyScore {
  double entrywise_acc = 0.0;
  double exact_matrix_acc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t entries = 0;
  std::size_t matrices = 0;
};

/// Over unmasked off-diagonal entries; a matrix is exact when all of them match.
TopologyScore eval_topology(std::span<const TopologyPrediction> preds,
                            std::span<const std::vector<std::uint8_t>> truth);

std::string votes_to_json(const std::map<std::pair<int, int>, EdgeVote>& votes);
/// Graphviz description of the voted direct edges.
std::string votes_to_dot(const std::map<std::pair<int, int>, EdgeVote>& votes);
std::string topology_score_to_json(const TopologyScore& score);

std::string save_topo_model(TopoModel& model);
TopoModel load_topo_model(std::string_view bytes);

}  // namespace plcgrid::topo
