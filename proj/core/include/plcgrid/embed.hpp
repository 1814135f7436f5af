#pragma once

// Connection-state discovery: PCA baseline, exact t-SNE, DBSCAN and the
// nearest-neighbour state assignment used for out-of-sample spectra.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "plcgrid/sim.hpp"

namespace plcgrid::embed {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data).subspan(r * cols, cols);
  }
  std::span<double> row(std::size_t r) { return std::span<double>(data).subspan(r * cols, cols); }

  bool operator==(const Matrix&) const = default;
};

struct PcaResult {
  /// k x d, orthonormal rows.
  Matrix components;
  /// Non-increasing; sample variance (n - 1 denominator) along each component.
  std::vector<double> explained_variance;
  /// n x k projection of the centered data.
  Matrix projected;
  std::vector<double> mean;
  /// Trace of the sample covariance.
  double total_variance = 0.0;
};

PcaResult pca(const Matrix& x, std::size_t k);

struct TsneParams {
  double perplexity = 30.0;
  int iters = 1000;
  double exaggeration = 12.0;
  int exaggeration_iters = 250;
  /// Zero or negative picks n / (4 * exaggeration); a fixed rate lets a
  /// duplicate pair (p_ij near 1/n) oscillate apart on small inputs.
  double learning_rate = 0.0;
  int kl_every = 50;
  std::uint64_t seed = 0;
};

struct EmbeddingResult {
  /// n x 2.
  Matrix points;
  /// KL(P || Q) every `kl_every` iterations; `kl_iters` holds the iteration numbers.
  std::vector<double> kl_trace;
  std::vector<int> kl_iters;
  TsneParams params;
};

/// Pairwise squared Euclidean distances (n x n).
Matrix squared_distances(const Matrix& x);

/// Conditional p(j|i) with a per-row bandwidth matching `perplexity`; rows sum
/// to 1 and the diagonal is 0. Entropy tolerance in nats.
Matrix conditional_probabilities(const Matrix& sq_dist, double perplexity, double tol = 1e-4);

/// Symmetrized joint P = (P + P^T) / 2n.
Matrix joint_probabilities(const Matrix& conditional);

EmbeddingResult tsne(const Matrix& x, const TsneParams& params);

/// Labels densely numbered from 0 in discovery order; -1 is noise.
std::vector<int> dbscan(const Matrix& points, double eps, std::size_t min_pts);

/// Sorted k-distance curve and its knee (maximum distance below the chord).
double kdistance_elbow(const Matrix& points, std::size_t min_pts);

struct StateParams {
  TsneParams tsne;
  /// DBSCAN radius in embedding units; chosen from the k-distance knee when unset.
  std::optional<double> eps;
  std::size_t min_pts = 10;
  /// Neighbours consulted by knn_assign.
  std::size_t k = 5;
};

struct StateModel {
  /// m x 917 raw spectra of the reference sample.
  Matrix reference_spectra;
  /// m x 2 embedding of the references.
  Matrix reference_points;
  std::vector<int> reference_labels;
  /// "connection_id@timestamp" of each reference.
  std::vector<std::string> reference_ids;
  /// label -> 917-d mean spectrum.
  std::map<int, std::vector<double>> centroids;
  std::size_t k = 5;
  double eps = 0.0;
  std::size_t min_pts = 0;
  TsneParams tsne;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return reference_labels.size(); }
  std::size_t cluster_count() const noexcept { return centroids.size(); }
};

/// Maps each query to the embedding coordinate of its nearest reference in raw
/// spectrum space, then takes a majority vote over the k nearest references in
/// the embedding (ties: smallest label).
int knn_assign(const StateModel& model, std::span<const float> spectrum);
std::vector<int> knn_assign_all(const StateModel& model, std::span<const float> spectra);

/// Majority label among the given neighbour labels, ties to the smallest.
int majority_label(std::span<const int> labels);

StateModel fit_connection_states(const sim::Dataset& dataset, std::size_t sample_size,
                                 const StateParams& params, std::uint64_t seed);

std::string state_model_to_json(const StateModel& model);
StateModel state_model_from_json(std::string_view text);

}  // namespace plcgrid::embed
