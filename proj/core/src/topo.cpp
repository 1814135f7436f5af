#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "plcgrid/error.hpp"
#include "plcgrid/random.hpp"
#include "plcgrid/topo.hpp"

namespace plcgrid::topo {

namespace {

constexpr double kInputScale = 0.1;
constexpr double kInputShift = -2.0;
// Layer positions inside the full network.
constexpr std::size_t kFirstDense = 1;
constexpr std::size_t kSecondDense = 3;

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

void copy_dense(nn::Layer& from, nn::Layer& to) {
  auto src = from.parameters();
  auto dst = to.parameters();
  if (src.size() != dst.size()) throw InvalidArgument("encoder layout mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->value.shape != dst[i]->value.shape) throw InvalidArgument("encoder shape mismatch");
    dst[i]->value.data = src[i]->value.data;
  }
}

}  // namespace

std::vector<Neighborhood> local_neighborhoods(const sim::GridTopology& topology, std::size_t max_size,
                                              std::size_t min_size) {
  if (min_size < 2) throw InvalidArgument("neighbourhoods need at least 2 members");
  if (max_size < min_size) throw InvalidArgument("max neighbourhood size below min size");
  std::vector<Neighborhood> out;
  for (const auto& node : topology.nodes) {
    std::vector<std::pair<int, int>> linked;  // (hops, id)
    for (const auto& l : topology.plc_links) {
      if (l.a == node.id || l.b == node.id) {
        const int other = l.a == node.id ? l.b : l.a;
        linked.push_back({static_cast<int>(l.path.size()), other});
      }
    }
    std::sort(linked.begin(), linked.end());
    Neighborhood nb;
    nb.center = node.id;
    nb.members.push_back(node.id);
    for (const auto& [hops, id] : linked) {
      if (nb.members.size() >= max_size) break;
      nb.members.push_back(id);
    }
    if (nb.members.size() < min_size) continue;
    std::sort(nb.members.begin(), nb.members.end());
    out.push_back(std::move(nb));
  }
  return out;
}

std::size_t AdjacencyTensor::measured() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

AdjacencyTensor build_adjacency_tensor(const sim::Dataset& dataset, const Neighborhood& nb, Timestamp t) {
  if (t % kSlotSeconds != 0) throw InvalidArgument("timestamp " + format_iso8601(t) + " is off the 15-min grid");
  if (nb.members.size() < 2) throw InvalidArgument("neighbourhood needs at least 2 members");
  AdjacencyTensor a;
  a.n = nb.members.size();
  a.members = nb.members;
  a.timestamp = t;
  a.values.assign(a.n * a.n * kChannels, static_cast<double>(db_range(dataset.profile).min));
  a.mask.assign(a.n * a.n, 0);
  for (std::size_t i = 0; i < a.n; ++i) {
    for (std::size_t j = 0; j < a.n; ++j) {
      if (i == j) continue;
      const auto* s = dataset.find(nb.members[i], nb.members[j]);
      if (!s) continue;
      const auto idx = s->index_of(t);
      if (!idx) continue;
      const auto spec = s->spectrum(*idx);
      std::copy(spec.begin(), spec.end(), a.values.begin() + static_cast<std::ptrdiff_t>((i * a.n + j) * kChannels));
      a.mask[i * a.n + j] = 1;
    }
  }
  if (a.measured() == 0) {
    throw InvalidArgument("no measured pair in the neighbourhood of node " + std::to_string(nb.center) +
                          " at " + format_iso8601(t));
  }
  return a;
}

std::vector<std::uint8_t> direct_labels(const sim::GridTopology& topology, const Neighborhood& nb) {
  const std::size_t n = nb.members.size();
  std::vector<std::uint8_t> out(n * n, 0);
  std::set<std::pair<int, int>> sections;
  for (const auto& s : topology.sections) sections.insert({std::min(s.a, s.b), std::max(s.a, s.b)});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const int a = nb.members[i], b = nb.members[j];
      if (i != j && sections.count({std::min(a, b), std::max(a, b)})) out[i * n + j] = 1;
    }
  }
  return out;
}

std::vector<TopoSample> build_topo_samples(const sim::Dataset& dataset, const sim::GridTopology& topology,
                                           std::span<const Neighborhood> neighborhoods,
                                           std::span<const Timestamp> timestamps) {
  std::vector<TopoSample> out;
  for (const auto& nb : neighborhoods) {
    const auto labels = direct_labels(topology, nb);
    for (Timestamp t : timestamps) {
      try {
        out.push_back({build_adjacency_tensor(dataset, nb, t), labels});
      } catch (const InvalidArgument&) {
        // Nothing measured at this instant.
      }
    }
  }
  return out;
}

nn::Tensor edge_input(const AdjacencyTensor& tensor) {
  const std::size_t e = tensor.measured();
  nn::Tensor x({e, kChannels});
  std::size_t row = 0;
  for (std::size_t k = 0; k < tensor.n * tensor.n; ++k) {
    if (!tensor.mask[k]) continue;
    std::copy_n(tensor.values.begin() + static_cast<std::ptrdiff_t>(k * kChannels), kChannels,
                x.data.begin() + static_cast<std::ptrdiff_t>(row * kChannels));
    ++row;
  }
  return x;
}

nn::Tensor edge_spectra(std::span<const TopoSample> samples) {
  std::size_t total = 0;
  for (const auto& s : samples) total += s.tensor.measured();
  nn::Tensor x({total, kChannels});
  std::size_t off = 0;
  for (const auto& s : samples) {
    const auto e = edge_input(s.tensor);
    std::copy(e.data.begin(), e.data.end(), x.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += e.size();
  }
  return x;
}

Encoder pretrain_encoder(const nn::Tensor& all_spectra, const TopoParams& params) {
  if (all_spectra.rank() != 2 || all_spectra.dim(1) != kChannels) {
    throw InvalidArgument("pretrain_encoder expects [m, 917] spectra, got " +
                          nn::to_string(all_spectra.shape));
  }
  nn::Tensor spectra;
  if (params.pretrain_samples > 0 && all_spectra.dim(0) > params.pretrain_samples) {
    std::vector<std::size_t> rows(all_spectra.dim(0));
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng(derive_seed(params.seed, "pretrain-sample"));
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(params.pretrain_samples);
    std::sort(rows.begin(), rows.end());
    spectra = all_spectra.gather(rows);
  } else {
    spectra = all_spectra;
  }
  if (spectra.dim(0) < params.pretrain_batch) {
    throw InvalidArgument("pretrain_encoder: " + std::to_string(spectra.dim(0)) +
                          " spectra, fewer than the batch size " + std::to_string(params.pretrain_batch));
  }
  nn::Sequential ae;
  ae.emplace<nn::Affine>(kInputScale, kInputShift);
  ae.emplace<nn::Dense>(kChannels, params.hidden);
  ae.emplace<nn::ReLU>();
  ae.emplace<nn::Dense>(params.hidden, params.embedding);
  ae.emplace<nn::Dense>(params.embedding, params.hidden);
  ae.emplace<nn::ReLU>();
  ae.emplace<nn::Dense>(params.hidden, kChannels);
  ae.initialize(derive_seed(params.seed, "autoencoder"));

  nn::Tensor target = spectra;
  for (auto& v : target.data) v = kInputScale * v + kInputShift;

  Encoder enc;
  enc.initial_mse = nn::mse_loss(ae.forward(spectra), target).value;
  nn::TrainParams tp;
  tp.epochs = params.pretrain_epochs;
  tp.batch = params.pretrain_batch;
  tp.optimizer = {nn::OptimizerKind::adam, params.pretrain_learning_rate};
  tp.seed = derive_seed(params.seed, "autoencoder-order");
  enc.loss_curve = nn::train(ae, spectra, target, nn::LossKind::mse, tp).loss_curve;
  enc.final_mse = nn::mse_loss(ae.forward(spectra), target).value;

  enc.net.emplace<nn::Affine>(kInputScale, kInputShift);
  enc.net.emplace<nn::Dense>(kChannels, params.hidden);
  enc.net.emplace<nn::ReLU>();
  enc.net.emplace<nn::Dense>(params.hidden, params.embedding);
  enc.net.initialize(derive_seed(params.seed, "encoder"));
  copy_dense(ae.layer(1), enc.net.layer(1));
  copy_dense(ae.layer(3), enc.net.layer(3));
  return enc;
}

TopoModel build_topo_model(Encoder& encoder, const TopoParams& params) {
  TopoModel m;
  m.params = params;
  auto& net = m.net;
  net.emplace<nn::Affine>(kInputScale, kInputShift);
  net.emplace<nn::Dense>(kChannels, params.hidden);
  net.emplace<nn::ReLU>();
  net.emplace<nn::Dense>(params.hidden, params.embedding);
  net.emplace<nn::EdgesToSequence>();
  net.emplace<nn::Conv1d>(params.embedding, params.filter_channels, params.kernel, params.dilation1);
  net.emplace<nn::ReLU>();
  net.emplace<nn::Conv1d>(params.filter_channels, 1, params.kernel, params.dilation2);
  net.initialize(derive_seed(params.seed, "topo-init"));
  if (encoder.net.size() != 4) throw InvalidArgument("encoder must have 4 layers");
  copy_dense(encoder.net.layer(1), net.layer(kFirstDense));
  copy_dense(encoder.net.layer(3), net.layer(kSecondDense));
  if (params.freeze_encoder) {
    net.layer(kFirstDense).set_frozen(true);
    net.layer(kSecondDense).set_frozen(true);
  }
  return m;
}

namespace {

nn::Tensor edge_targets(const TopoSample& s) {
  const std::size_t e = s.tensor.measured();
  nn::Tensor t({1, 1, e});
  std::size_t k = 0;
  for (std::size_t i = 0; i < s.tensor.mask.size(); ++i) {
    if (s.tensor.mask[i]) t[k++] = s.labels[i];
  }
  return t;
}

}  // namespace

double sample_loss(TopoModel& model, const TopoSample& sample) {
  const nn::Tensor logits = model.net.forward(edge_input(sample.tensor));
  const nn::Tensor target = edge_targets(sample);
  return nn::bce_with_logits(logits, target, nn::Tensor(target.shape, 1.0)).value;
}

TopoModel train_topology_filter(std::span<const TopoSample> samples, Encoder& encoder,
                                const TopoParams& params) {
  if (samples.empty()) throw InvalidArgument("train_topology_filter: no samples");
  if (params.batch == 0) throw InvalidArgument("batch must be >= 1");
  bool any_direct = false, any_indirect = false;
  for (const auto& s : samples) {
    if (s.labels.size() != s.tensor.n * s.tensor.n) throw InvalidArgument("label matrix size mismatch");
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      if (!s.tensor.mask[i]) continue;
      (s.labels[i] ? any_direct : any_indirect) = true;
    }
  }
  if (!any_direct || !any_indirect) {
    throw InvalidArgument("topology training needs both direct and indirect measured edges");
  }

  TopoModel model = build_topo_model(encoder, params);
  nn::Optimizer opt({nn::OptimizerKind::adam, params.learning_rate});
  const std::uint64_t order_seed = derive_seed(params.seed, "topo-order");
  for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
    const auto order = nn::epoch_order(samples.size(), order_seed, epoch);
    double total = 0.0;
    for (std::size_t start = 0; start < samples.size(); start += params.batch) {
      const std::size_t stop = std::min(samples.size(), start + params.batch);
      const double inv = 1.0 / double(stop - start);
      model.net.zero_grad();
      for (std::size_t i = start; i < stop; ++i) {
        const auto& s = samples[order[i]];
        const nn::Tensor logits = model.net.forward(edge_input(s.tensor));
        const nn::Tensor target = edge_targets(s);
        nn::LossValue lv = nn::bce_with_logits(logits, target, nn::Tensor(target.shape, 1.0));
        if (!std::isfinite(lv.value)) {
          throw DivergenceError("topology training diverged at epoch " + std::to_string(epoch + 1) +
                                "; lower the learning rate");
        }
        for (auto& g : lv.grad.data) g *= inv;
        model.net.backward(lv.grad);
        total += lv.value;
      }
      opt.step(model.net.parameters());
    }
    model.loss_curve.push_back(total / double(samples.size()));
  }
  return model;
}

TopologyPrediction predict_topology(TopoModel& model, const AdjacencyTensor& tensor, double threshold) {
  TopologyPrediction p;
  p.n = tensor.n;
  p.members = tensor.members;
  p.timestamp = tensor.timestamp;
  p.mask = tensor.mask;
  p.confidence.assign(p.n * p.n, 0.0);
  if (tensor.measured() > 0) {
    const nn::Tensor logits = model.net.forward(edge_input(tensor));
    std::size_t k = 0;
    for (std::size_t i = 0; i < p.mask.size(); ++i) {
      if (p.mask[i]) p.confidence[i] = sigmoid(logits[k++]);
    }
  }
  return rethreshold(p, threshold);
}

TopologyPrediction rethreshold(const TopologyPrediction& pred, double threshold) {
  TopologyPrediction p = pred;
  p.threshold = threshold;
  p.binary.assign(p.n * p.n, 0);
  for (std::size_t i = 0; i < p.mask.size(); ++i) {
    p.binary[i] = (p.mask[i] && p.confidence[i] >= threshold) ? 1 : 0;
  }
  return p;
}

SymmetryRule parse_symmetry_rule(std::string_view name) {
  if (name == "mean") return SymmetryRule::mean;
  if (name == "min") return SymmetryRule::min;
  if (name == "max") return SymmetryRule::max;
  throw InvalidArgument("unknown symmetry rule '" + std::string(name) + "' (expected mean, min or max)");
}

TopologyPrediction symmetrize(const TopologyPrediction& pred, SymmetryRule rule) {
  TopologyPrediction p = pred;
  const std::size_t n = p.n;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const std::size_t ij = i * n + j, ji = j * n + i;
      const bool a = pred.mask[ij], b = pred.mask[ji];
      double c = 0.0;
      if (a && b) {
        const double x = pred.confidence[ij], y = pred.confidence[ji];
        switch (rule) {
          case SymmetryRule::mean: c = 0.5 * (x + y); break;
          case SymmetryRule::min: c = std::min(x, y); break;
          case SymmetryRule::max: c = std::max(x, y); break;
        }
      } else if (a) {
        c = pred.confidence[ij];
      } else if (b) {
        c = pred.confidence[ji];
      }
      p.confidence[ij] = p.confidence[ji] = c;
      p.mask[ij] = p.mask[ji] = (a || b) ? 1 : 0;
    }
  }
  return rethreshold(p, pred.threshold);
}

std::map<std::pair<int, int>, EdgeVote> overlap_votes(std::span<const TopologyPrediction> preds,
                                                      double threshold) {
  std::map<std::pair<int, int>, EdgeVote> out;
  for (const auto& p : preds) {
    for (std::size_t i = 0; i < p.n; ++i) {
      for (std::size_t j = 0; j < p.n; ++j) {
        if (i == j || !p.mask[i * p.n + j]) continue;
        const int a = std::min(p.members[i], p.members[j]);
        const int b = std::max(p.members[i], p.members[j]);
        auto& v = out[{a, b}];
        v.a = a;
        v.b = b;
        v.confidence += p.confidence[i * p.n + j];
        ++v.votes;
      }
    }
  }
  for (auto& [key, v] : out) {
    v.confidence /= double(v.votes);
    v.direct = v.confidence >= threshold;
  }
  return out;
}

EdgeVote overlap_vote(std::span<const TopologyPrediction> preds, int a, int b, double threshold) {
  const auto votes = overlap_votes(preds, threshold);
  auto it = votes.find({std::min(a, b), std::max(a, b)});
  if (it == votes.end()) {
    throw InvalidArgument("edge " + std::to_string(a) + "-" + std::to_string(b) + " is not covered by any prediction");
  }
  return it->second;
}

std::vector<TopologyPrediction> apply_votes(std::span<const TopologyPrediction> preds,
                                            const std::map<std::pair<int, int>, EdgeVote>& votes) {
  std::vector<TopologyPrediction> out;
  for (const auto& p : preds) {
    TopologyPrediction q = p;
    for (std::size_t i = 0; i < p.n; ++i) {
      for (std::size_t j = 0; j < p.n; ++j) {
        const std::size_t k = i * p.n + j;
        if (i == j || !p.mask[k]) continue;
        const auto& v = votes.at({std::min(p.members[i], p.members[j]), std::max(p.members[i], p.members[j])});
        q.confidence[k] = v.confidence;
        q.binary[k] = v.direct ? 1 : 0;
      }
    }
    out.push_back(std::move(q));
  }
  return out;
}

TopologyScore eval_topology(std::span<const TopologyPrediction> preds,
                            std::span<const std::vector<std::uint8_t>> truth) {
  if (preds.size() != truth.size()) throw InvalidArgument("eval_topology: prediction and truth counts differ");
  TopologyScore s;
  std::size_t correct = 0, exact = 0, tp = 0, fp = 0, fn = 0;
  for (std::size_t m = 0; m < preds.size(); ++m) {
    const auto& p = preds[m];
    if (truth[m].size() != p.n * p.n || p.binary.size() != p.n * p.n) {
      throw InvalidArgument("eval_topology: shape mismatch in matrix " + std::to_string(m));
    }
    bool all = true;
    for (std::size_t i = 0; i < p.n; ++i) {
      for (std::size_t j = 0; j < p.n; ++j) {
        const std::size_t k = i * p.n + j;
        if (i == j || !p.mask[k]) continue;
        const bool pr = p.binary[k] != 0, gt = truth[m][k] != 0;
        ++s.entries;
        if (pr == gt) ++correct; else all = false;
        tp += (pr && gt) ? 1 : 0;
        fp += (pr && !gt) ? 1 : 0;
        fn += (!pr && gt) ? 1 : 0;
      }
    }
    exact += all ? 1 : 0;
  }
  s.matrices = preds.size();
  s.entrywise_acc = s.entries ? double(correct) / double(s.entries) : 0.0;
  s.exact_matrix_acc = s.matrices ? double(exact) / double(s.matrices) : 0.0;
  // Empty denominators count as perfect: nothing was claimed or nothing was missed.
  s.precision = (tp + fp) ? double(tp) / double(tp + fp) : 1.0;
  s.recall = (tp + fn) ? double(tp) / double(tp + fn) : 1.0;
  return s;
}

std::string votes_to_json(const std::map<std::pair<int, int>, EdgeVote>& votes) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [key, v] : votes) {
    j.push_back({{"a", v.a}, {"b", v.b}, {"confidence", v.confidence}, {"votes", v.votes}, {"direct", v.direct}});
  }
  return j.dump(2);
}

std::string votes_to_dot(const std::map<std::pair<int, int>, EdgeVote>& votes) {
  std::ostringstream os;
  os << "graph topology {\n";
  std::set<int> nodes;
  for (const auto& [key, v] : votes) {
    nodes.insert(v.a);
    nodes.insert(v.b);
  }
  for (int n : nodes) os << "  n" << n << ";\n";
  os.precision(3);
  os << std::fixed;
  for (const auto& [key, v] : votes) {
    if (v.direct) os << "  n" << v.a << " -- n" << v.b << " [label=\"" << v.confidence << "\"];\n";
  }
  os << "}\n";
  return os.str();
}

std::string topology_score_to_json(const TopologyScore& s) {
  nlohmann::json j = {{"entrywise_acc", s.entrywise_acc}, {"exact_matrix_acc", s.exact_matrix_acc},
                      {"precision", s.precision},         {"recall", s.recall},
                      {"entries", s.entries},             {"matrices", s.matrices}};
  return j.dump(2);
}

std::string save_topo_model(TopoModel& model) {
  const auto& p = model.params;
  nlohmann::json meta = {{"kind", "topology-filter"},
                         {"hidden", p.hidden},
                         {"embedding", p.embedding},
                         {"filter_channels", p.filter_channels},
                         {"kernel", p.kernel},
                         {"dilation1", p.dilation1},
                         {"dilation2", p.dilation2},
                         {"pretrain_epochs", p.pretrain_epochs},
                         {"pretrain_batch", p.pretrain_batch},
                         {"pretrain_samples", p.pretrain_samples},
                         {"pretrain_learning_rate", p.pretrain_learning_rate},
                         {"epochs", p.epochs},
                         {"batch", p.batch},
                         {"learning_rate", p.learning_rate},
                         {"freeze_encoder", p.freeze_encoder},
                         {"seed", p.seed},
                         {"loss_curve", model.loss_curve}};
  return nn::serialize_network(model.net, meta.dump());
}

TopoModel load_topo_model(std::string_view bytes) {
  auto stored = nn::deserialize_network(bytes);
  TopoModel m;
  try {
    const auto meta = nlohmann::json::parse(stored.metadata_json);
    if (meta.at("kind") != "topology-filter") throw ParseError("not a topology model");
    auto& p = m.params;
    p.hidden = meta.at("hidden").get<std::size_t>();
    p.embedding = meta.at("embedding").get<std::size_t>();
    p.filter_channels = meta.at("filter_channels").get<std::size_t>();
    p.kernel = meta.at("kernel").get<std::size_t>();
    p.dilation1 = meta.at("dilation1").get<std::size_t>();
    p.dilation2 = meta.at("dilation2").get<std::size_t>();
    p.pretrain_epochs = meta.at("pretrain_epochs").get<std::size_t>();
    p.pretrain_batch = meta.at("pretrain_batch").get<std::size_t>();
    p.pretrain_samples = meta.at("pretrain_samples").get<std::size_t>();
    p.pretrain_learning_rate = meta.at("pretrain_learning_rate").get<double>();
    p.epochs = meta.at("epochs").get<std::size_t>();
    p.batch = meta.at("batch").get<std::size_t>();
    p.learning_rate = meta.at("learning_rate").get<double>();
    p.freeze_encoder = meta.at("freeze_encoder").get<bool>();
    p.seed = meta.at("seed").get<std::uint64_t>();
    m.loss_curve = meta.at("loss_curve").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("topology model metadata: ") + e.what());
  }
  m.net = std::move(stored.net);
  return m;
}

}  // namespace plcgrid::topo
