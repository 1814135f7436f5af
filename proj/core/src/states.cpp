#include <Eigen/Dense>
#include <algorithm>
#include <numeric>

#include "json.hpp"
#include "plcgrid/embed.hpp"
#include "plcgrid/error.hpp"
#include "plcgrid/random.hpp"

namespace plcgrid::embed {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Nearest reference (raw spectrum space) for each query row; ties to the lowest index.
std::vector<std::size_t> nearest_references(const StateModel& model, std::span<const float> spectra) {
  const auto m = static_cast<Eigen::Index>(model.reference_spectra.rows);
  const auto d = static_cast<Eigen::Index>(model.reference_spectra.cols);
  const auto q = static_cast<Eigen::Index>(spectra.size() / static_cast<std::size_t>(d));
  Eigen::Map<const RowMatrix> refs(model.reference_spectra.data.data(), m, d);
  const Eigen::VectorXd ref_norm = refs.rowwise().squaredNorm();

  std::vector<std::size_t> out(static_cast<std::size_t>(q));
  constexpr Eigen::Index kBlock = 256;
  for (Eigen::Index start = 0; start < q; start += kBlock) {
    const Eigen::Index rows = std::min(kBlock, q - start);
    RowMatrix block(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) {
        block(r, c) = spectra[static_cast<std::size_t>((start + r) * d + c)];
      }
    }
    const Eigen::MatrixXd cross = block * refs.transpose();
    const Eigen::VectorXd qn = block.rowwise().squaredNorm();
    for (Eigen::Index r = 0; r < rows; ++r) {
      double best = std::numeric_limits<double>::infinity();
      Eigen::Index arg = 0;
      for (Eigen::Index j = 0; j < m; ++j) {
        const double dist = qn(r) + ref_norm(j) - 2.0 * cross(r, j);
        if (dist < best) {
          best = dist;
          arg = j;
        }
      }
      out[static_cast<std::size_t>(start + r)] = static_cast<std::size_t>(arg);
    }
  }
  return out;
}

int vote_from(const StateModel& model, std::size_t anchor) {
  const std::size_t m = model.size();
  const std::size_t k = std::min(model.k, m);
  const double ax = model.reference_points(anchor, 0);
  const double ay = model.reference_points(anchor, 1);
  std::vector<std::pair<double, std::size_t>> dist(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double dx = model.reference_points(j, 0) - ax;
    const double dy = model.reference_points(j, 1) - ay;
    dist[j] = {dx * dx + dy * dy, j};
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<int> labels(k);
  for (std::size_t i = 0; i < k; ++i) labels[i] = model.reference_labels[dist[i].second];
  return majority_label(labels);
}

}  // namespace

int majority_label(std::span<const int> labels) {
  if (labels.empty()) throw InvalidArgument("majority of no labels");
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  int best = counts.begin()->first;
  std::size_t best_count = 0;
  for (auto [label, count] : counts) {  // ascending label: first maximum wins ties
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  }
  return best;
}

std::vector<int> knn_assign_all(const StateModel& model, std::span<const float> spectra) {
  if (model.size() == 0) throw InvalidArgument("knn_assign: empty state model");
  if (model.k < 1 || model.k > model.size()) throw InvalidArgument("knn_assign: k must be in 1..m");
  if (spectra.size() % kChannels != 0) throw InvalidArgument("knn_assign: spectra not 917-wide");
  const auto nearest = nearest_references(model, spectra);
  // Many queries share an anchor; the vote depends only on the anchor.
  std::map<std::size_t, int> cache;
  std::vector<int> out(nearest.size());
  for (std::size_t i = 0; i < nearest.size(); ++i) {
    auto it = cache.find(nearest[i]);
    if (it == cache.end()) it = cache.emplace(nearest[i], vote_from(model, nearest[i])).first;
    out[i] = it->second;
  }
  return out;
}

int knn_assign(const StateModel& model, std::span<const float> spectrum) {
  if (spectrum.size() != kChannels) throw InvalidArgument("knn_assign: spectrum must have 917 channels");
  return knn_assign_all(model, spectrum).front();
}

StateModel fit_connection_states(const sim::Dataset& dataset, std::size_t sample_size,
                                 const StateParams& params, std::uint64_t seed) {
  struct RowRef {
    const MeasurementSeries* series;
    std::size_t t;
  };
  std::vector<RowRef> rows;
  for (const auto& [id, s] : dataset.series) {
    for (std::size_t t = 0; t < s.size(); ++t) rows.push_back({&s, t});
  }
  if (rows.empty()) throw InvalidArgument("fit_connection_states: empty dataset");
  if (sample_size > rows.size()) {
    throw InvalidArgument("sample_size " + std::to_string(sample_size) + " exceeds " +
                          std::to_string(rows.size()) + " available spectra");
  }
  if (sample_size < 5) throw InvalidArgument("sample_size must be >= 5");

  std::vector<std::size_t> idx(rows.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "state-sample"));
  for (std::size_t i = 0; i < sample_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(sample_size);
  std::sort(idx.begin(), idx.end());

  StateModel model;
  model.seed = seed;
  model.k = params.k;
  model.min_pts = params.min_pts;
  model.tsne = params.tsne;
  model.tsne.seed = derive_seed(seed, "tsne");
  model.reference_spectra = Matrix(sample_size, kChannels);
  for (std::size_t i = 0; i < sample_size; ++i) {
    const auto& r = rows[idx[i]];
    auto s = r.series->spectrum(r.t);
    std::copy(s.begin(), s.end(), model.reference_spectra.row(i).begin());
    model.reference_ids.push_back(r.series->connection_id() + "@" +
                                  format_iso8601(r.series->timestamps()[r.t]));
  }

  auto emb = tsne(model.reference_spectra, model.tsne);
  model.reference_points = std::move(emb.points);
  model.eps = params.eps ? *params.eps : kdistance_elbow(model.reference_points, params.min_pts);
  model.reference_labels = dbscan(model.reference_points, model.eps, params.min_pts);

  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < sample_size; ++i) {
    const int l = model.reference_labels[i];
    if (l < 0) continue;
    auto& c = model.centroids[l];
    if (c.empty()) c.assign(kChannels, 0.0);
    auto row = model.reference_spectra.row(i);
    for (std::size_t ch = 0; ch < kChannels; ++ch) c[ch] += row[ch];
    ++counts[l];
  }
  for (auto& [l, c] : model.centroids) {
    for (auto& v : c) v /= static_cast<double>(counts[l]);
  }
  if (model.k > sample_size) model.k = sample_size;
  return model;
}

std::string state_model_to_json(const StateModel& model) {
  nlohmann::json j;
  j["format"] = "plcgrid-state-model";
  j["version"] = 1;
  j["seed"] = model.seed;
  j["k"] = model.k;
  j["eps"] = model.eps;
  j["min_pts"] = model.min_pts;
  j["tsne"] = {{"perplexity", model.tsne.perplexity},
               {"iters", model.tsne.iters},
               {"exaggeration", model.tsne.exaggeration},
               {"exaggeration_iters", model.tsne.exaggeration_iters},
               {"learning_rate", model.tsne.learning_rate},
               {"kl_every", model.tsne.kl_every},
               {"seed", model.tsne.seed}};
  j["labels"] = model.reference_labels;
  j["ids"] = model.reference_ids;
  j["points"] = model.reference_points.data;
  std::vector<float> spectra(model.reference_spectra.data.begin(), model.reference_spectra.data.end());
  j["spectra"] = spectra;
  nlohmann::json cents = nlohmann::json::object();
  for (const auto& [l, c] : model.centroids) cents[std::to_string(l)] = c;
  j["centroids"] = cents;
  return j.dump();
}

StateModel state_model_from_json(std::string_view text) {
  StateModel m;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "plcgrid-state-model") throw ParseError("not a state model");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.k = j.at("k").get<std::size_t>();
    m.eps = j.at("eps").get<double>();
    m.min_pts = j.at("min_pts").get<std::size_t>();
    const auto& t = j.at("tsne");
    m.tsne.perplexity = t.at("perplexity").get<double>();
    m.tsne.iters = t.at("iters").get<int>();
    m.tsne.exaggeration = t.at("exaggeration").get<double>();
    m.tsne.exaggeration_iters = t.at("exaggeration_iters").get<int>();
    m.tsne.learning_rate = t.at("learning_rate").get<double>();
    m.tsne.kl_every = t.at("kl_every").get<int>();
    m.tsne.seed = t.at("seed").get<std::uint64_t>();
    m.reference_labels = j.at("labels").get<std::vector<int>>();
    m.reference_ids = j.at("ids").get<std::vector<std::string>>();
    const std::size_t n = m.reference_labels.size();
    m.reference_points = Matrix(n, 2);
    m.reference_points.data = j.at("points").get<std::vector<double>>();
    const auto spectra = j.at("spectra").get<std::vector<float>>();
    m.reference_spectra = Matrix(n, kChannels);
    if (spectra.size() != n * kChannels || m.reference_points.data.size() != n * 2) {
      throw ParseError("state model: inconsistent array sizes");
    }
    std::copy(spectra.begin(), spectra.end(), m.reference_spectra.data.begin());
    for (const auto& [key, val] : j.at("centroids").items()) {
      m.centroids[std::stoi(key)] = val.get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("state model: ") + e.what());
  }
  return m;
}

}  // namespace plcgrid::embed
