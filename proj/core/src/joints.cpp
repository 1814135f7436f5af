#include <algorithm>
#include <cfenv>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "plcgrid/error.hpp"
#include "plcgrid/joints.hpp"
#include "plcgrid/random.hpp"

namespace plcgrid::joints {

namespace {

// dB inputs are centred to roughly [-2, 2] inside the network so that the
// activation map stays a derivative with respect to raw dB values.
constexpr double kInputScale = 0.1;
constexpr double kInputShift = -2.0;

void append_windows(const MeasurementSeries& series, int section, int count,
                    std::vector<JointSample>& out) {
  if (series.empty()) return;
  const auto ts = series.timestamps();
  for (std::int64_t day = day_of(ts.front()); day <= day_of(ts.back()); ++day) {
    try {
      out.push_back({window_day(series, day), count, section});
    } catch (const ValidationError&) {
      // Days below the coverage floor are skipped rather than padded.
    }
  }
}

}  // namespace

JointDataset build_joint_dataset(const sim::Dataset& dataset, const sim::GridTopology& topology,
                                 const sim::GroundTruth& truth, double val_fraction,
                                 std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw InvalidArgument("validation fraction must be in (0, 1)");
  }
  std::vector<int> sections;
  std::set<int> counts;
  for (const auto& s : topology.sections) {
    if (!dataset.find(s.a, s.b) && !dataset.find(s.b, s.a)) continue;
    auto it = truth.section_joints.find(s.id);
    if (it == truth.section_joints.end()) {
      throw ValidationError("ground truth lacks joint count for section " + std::to_string(s.id));
    }
    sections.push_back(s.id);
    counts.insert(it->second);
  }
  if (counts.size() < 2) {
    throw InvalidArgument("joint dataset needs at least 2 distinct joint counts, found " +
                          std::to_string(counts.size()));
  }
  if (sections.size() < 2) throw InvalidArgument("joint dataset needs at least 2 measured sections");

  Rng rng(derive_seed(seed, "joint-split"));
  std::shuffle(sections.begin(), sections.end(), rng);
  auto n_val = static_cast<std::size_t>(std::lround(val_fraction * double(sections.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, sections.size() - 1);

  JointDataset out;
  out.val_sections.assign(sections.begin(), sections.begin() + static_cast<std::ptrdiff_t>(n_val));
  out.train_sections.assign(sections.begin() + static_cast<std::ptrdiff_t>(n_val), sections.end());
  std::sort(out.val_sections.begin(), out.val_sections.end());
  std::sort(out.train_sections.begin(), out.train_sections.end());

  for (const auto& s : topology.sections) {
    const bool is_val = std::binary_search(out.val_sections.begin(), out.val_sections.end(), s.id);
    const bool is_train = std::binary_search(out.train_sections.begin(), out.train_sections.end(), s.id);
    if (!is_val && !is_train) continue;
    auto& target = is_val ? out.val : out.train;
    const int count = truth.section_joints.at(s.id);
    for (auto [from, to] : {std::pair{s.a, s.b}, std::pair{s.b, s.a}}) {
      if (const auto* series = dataset.find(from, to)) append_windows(*series, s.id, count, target);
    }
  }
  return out;
}

JointModel build_joint_model(const JointParams& params) {
  if (params.channels.empty()) throw InvalidArgument("joint model needs at least one block");
  if (params.time_group == 0 || kSlotsPerDay % params.time_group != 0) {
    throw InvalidArgument("time_group must divide 96");
  }
  JointModel m;
  m.params = params;
  auto& net = m.net;
  net.emplace<nn::Affine>(kInputScale, kInputShift);
  net.emplace<nn::ChannelGroupPool>(params.time_group);
  const std::size_t groups = kSlotsPerDay / params.time_group;
  net.emplace<nn::Conv1d>(groups, params.channels.front(), params.kernel, 1);
  net.emplace<nn::ReLU>();
  std::size_t prev = params.channels.front();
  for (std::size_t i = 0; i < params.channels.size(); ++i) {
    if (i > 0) net.emplace<nn::AvgPool1d>(2);
    net.emplace<nn::ResidualBlock>(prev, params.channels[i], params.kernel, 1);
    net.emplace<nn::ReLU>();
    prev = params.channels[i];
  }
  net.emplace<nn::GlobalAvgPool>();
  m.embedding_end = net.size();
  net.emplace<nn::Dense>(prev, 1);
  net.initialize(derive_seed(params.seed, "joint-init"));
  return m;
}

nn::Tensor window_to_tensor(const DayWindow& window) {
  if (window.matrix.size() != kSlotsPerDay * kChannels) {
    throw InvalidArgument("joint model expects a 96 x 917 window, got " +
                          std::to_string(window.matrix.size()) + " values");
  }
  return nn::Tensor({1, kSlotsPerDay, kChannels},
                    std::vector<double>(window.matrix.begin(), window.matrix.end()));
}

nn::Tensor windows_to_tensor(std::span<const JointSample> samples) {
  nn::Tensor x({samples.size(), kSlotsPerDay, kChannels});
  const std::size_t stride = kSlotsPerDay * kChannels;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& m = samples[i].window.matrix;
    if (m.size() != stride) throw InvalidArgument("joint sample window is not 96 x 917");
    std::copy(m.begin(), m.end(), x.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return x;
}

JointModel train_joint_regressor(std::span<const JointSample> train, const JointParams& params) {
  if (train.empty()) throw InvalidArgument("train_joint_regressor: empty training set");
  if (params.batch == 0) throw InvalidArgument("batch must be >= 1");
  JointModel model = build_joint_model(params);
  nn::Optimizer opt({nn::OptimizerKind::adam, params.learning_rate});
  const std::uint64_t order_seed = derive_seed(params.seed, "joint-order");

  for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
    const auto order = nn::epoch_order(train.size(), order_seed, epoch);
    double total = 0.0;
    for (std::size_t start = 0; start < train.size(); start += params.batch) {
      const std::size_t stop = std::min(train.size(), start + params.batch);
      std::vector<JointSample> batch;
      std::vector<int> labels;
      nn::Tensor target({stop - start, 1});
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(train[order[i]]);
        labels.push_back(train[order[i]].joint_count);
        target[i - start] = train[order[i]].joint_count;
      }
      model.net.zero_grad();
      const nn::Tensor emb = model.net.forward(windows_to_tensor(batch), 0, model.embedding_end);
      const nn::Tensor out = model.net.forward(emb, model.embedding_end);
      const nn::LossValue mae = nn::mae_loss(out, target);
      double objective = mae.value;
      nn::Tensor g_emb = model.net.backward(mae.grad, model.embedding_end);

      std::map<int, int> per_label;
      for (int l : labels) ++per_label[l];
      const bool has_positive =
          std::any_of(per_label.begin(), per_label.end(), [](const auto& kv) { return kv.second >= 2; });
      if (params.contrastive_weight > 0.0 && has_positive) {
        const nn::LossValue con = nn::supervised_contrastive_loss(emb, labels, params.temperature);
        objective += params.contrastive_weight * con.value;
        for (std::size_t i = 0; i < g_emb.size(); ++i) g_emb[i] += params.contrastive_weight * con.grad[i];
      }
      if (!std::isfinite(objective)) {
        throw DivergenceError("joint training diverged at epoch " + std::to_string(epoch + 1) +
                              "; lower the learning rate");
      }
      model.net.backward(g_emb, 0, model.embedding_end);
      opt.step(model.net.parameters());
      total += objective * double(stop - start);
    }
    model.loss_curve.push_back(total / double(train.size()));
  }
  return model;
}

int round_count(double raw) {
  // nearbyint honours the default round-to-nearest-even mode.
  const double r = std::nearbyint(raw);
  return r <= 0.0 ? 0 : static_cast<int>(r);
}

JointPrediction predict_joints(JointModel& model, const DayWindow& window) {
  const nn::Tensor out = model.net.forward(window_to_tensor(window));
  return {out[0], round_count(out[0])};
}

std::vector<JointPrediction> predict_all(JointModel& model, std::span<const JointSample> samples) {
  std::vector<JointPrediction> out;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const auto chunk = samples.subspan(start, std::min(kChunk, samples.size() - start));
    const nn::Tensor y = model.net.forward(windows_to_tensor(chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back({y[i], round_count(y[i])});
  }
  return out;
}

std::vector<double> regression_activation_map(JointModel& model, const DayWindow& window) {
  auto params = model.net.parameters();
  std::vector<std::vector<double>> saved;
  for (auto* p : params) saved.push_back(p->value.grad);
  const nn::Tensor out = model.net.forward(window_to_tensor(window));
  nn::Tensor seed(out.shape, 1.0);
  const nn::Tensor dx = model.net.backward(seed);
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.grad = std::move(saved[i]);
  std::vector<double> sal(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) sal[i] = std::abs(dx[i]);
  return sal;
}

SensitivityProfile channel_sensitivity(JointModel& model, std::span<const JointSample> samples,
                                       double err_tolerance) {
  if (!(err_tolerance >= 0.0)) throw InvalidArgument("err_tolerance must be >= 0");
  SensitivityProfile prof;
  prof.err_tolerance = err_tolerance;
  prof.per_channel.assign(kChannels, 0.0);
  for (const auto& s : samples) {
    const auto pred = predict_joints(model, s.window);
    if (!(std::abs(pred.raw - s.joint_count) <= err_tolerance)) continue;
    const auto sal = regression_activation_map(model, s.window);
    for (std::size_t t = 0; t < kSlotsPerDay; ++t) {
      for (std::size_t c = 0; c < kChannels; ++c) prof.per_channel[c] += sal[t * kChannels + c];
    }
    ++prof.n_windows;
  }
  if (prof.n_windows == 0) {
    throw InvalidArgument("no window within error tolerance " + std::to_string(err_tolerance) +
                          "; use a looser tolerance");
  }
  const double sum = std::accumulate(prof.per_channel.begin(), prof.per_channel.end(), 0.0);
  if (!(sum > 0.0)) throw InvalidArgument("channel_sensitivity: saliency is zero everywhere");
  // The time and sample means are constant factors, absorbed by the normalization.
  for (auto& v : prof.per_channel) v /= sum;
  return prof;
}

std::vector<double> smooth_profile(std::span<const double> profile, std::size_t width) {
  if (width == 0 || width % 2 == 0) throw InvalidArgument("smoothing width must be odd");
  const std::size_t half = width / 2;
  std::vector<double> out(profile.size());
  for (std::size_t i = 0; i < profile.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(profile.size() - 1, i + half);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += profile[j];
    out[i] = s / double(hi - lo + 1);
  }
  return out;
}

std::vector<int> top_peaks(std::span<const double> profile, std::size_t k, std::size_t min_separation) {
  std::vector<std::size_t> order(profile.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return profile[a] > profile[b]; });
  std::vector<int> peaks;
  for (std::size_t c : order) {
    if (peaks.size() >= k) break;
    const bool clear = std::all_of(peaks.begin(), peaks.end(), [&](int p) {
      return static_cast<std::size_t>(std::abs(p - static_cast<int>(c))) >= min_separation;
    });
    if (clear) peaks.push_back(static_cast<int>(c));
  }
  return peaks;
}

JointEvaluation evaluate_joints(JointModel& model, std::span<const JointSample> samples) {
  if (samples.empty()) throw InvalidArgument("evaluate_joints: no samples");
  const auto preds = predict_all(model, samples);
  JointEvaluation ev;
  std::map<int, std::vector<double>> by_section;
  std::map<int, int> labels;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ev.mae += std::abs(preds[i].raw - samples[i].joint_count);
    exact += preds[i].rounded == samples[i].joint_count ? 1 : 0;
    by_section[samples[i].section_id].push_back(preds[i].raw);
    labels[samples[i].section_id] = samples[i].joint_count;
  }
  ev.mae /= double(samples.size());
  ev.rounded_accuracy = double(exact) / double(samples.size());
  for (const auto& [id, raws] : by_section) {
    SectionReport r;
    r.section_id = id;
    r.joint_count = labels[id];
    r.windows = raws.size();
    r.mean_raw = std::accumulate(raws.begin(), raws.end(), 0.0) / double(raws.size());
    for (double v : raws) r.variance += (v - r.mean_raw) * (v - r.mean_raw);
    r.variance /= double(raws.size());
    r.rounded = round_count(r.mean_raw);
    ev.sections.push_back(r);
  }
  return ev;
}

std::string joint_evaluation_to_json(const JointEvaluation& ev) {
  nlohmann::json j;
  j["mae"] = ev.mae;
  j["rounded_accuracy"] = ev.rounded_accuracy;
  j["sections"] = nlohmann::json::array();
  for (const auto& s : ev.sections) {
    j["sections"].push_back({{"section_id", s.section_id},
                             {"joint_count", s.joint_count},
                             {"windows", s.windows},
                             {"mean_raw", s.mean_raw},
                             {"variance", s.variance},
                             {"rounded", s.rounded}});
  }
  return j.dump(2);
}

std::string sensitivity_to_csv(const SensitivityProfile& profile) {
  std::ostringstream os;
  os.precision(12);
  os << "channel,sensitivity\n";
  for (std::size_t c = 0; c < profile.per_channel.size(); ++c) os << c << ',' << profile.per_channel[c] << '\n';
  return os.str();
}

std::string save_joint_model(JointModel& model) {
  const auto& p = model.params;
  nlohmann::json meta = {{"kind", "joint-regressor"},
                         {"embedding_end", model.embedding_end},
                         {"channels", p.channels},
                         {"kernel", p.kernel},
                         {"time_group", p.time_group},
                         {"contrastive_weight", p.contrastive_weight},
                         {"temperature", p.temperature},
                         {"epochs", p.epochs},
                         {"batch", p.batch},
                         {"learning_rate", p.learning_rate},
                         {"seed", p.seed},
                         {"loss_curve", model.loss_curve}};
  return nn::serialize_network(model.net, meta.dump());
}

JointModel load_joint_model(std::string_view bytes) {
  auto stored = nn::deserialize_network(bytes);
  JointModel m;
  try {
    const auto meta = nlohmann::json::parse(stored.metadata_json);
    if (meta.at("kind") != "joint-regressor") throw ParseError("not a joint model");
    m.embedding_end = meta.at("embedding_end").get<std::size_t>();
    m.params.channels = meta.at("channels").get<std::vector<std::size_t>>();
    m.params.kernel = meta.at("kernel").get<std::size_t>();
    m.params.time_group = meta.at("time_group").get<std::size_t>();
    m.params.contrastive_weight = meta.at("contrastive_weight").get<double>();
    m.params.temperature = meta.at("temperature").get<double>();
    m.params.epochs = meta.at("epochs").get<std::size_t>();
    m.params.batch = meta.at("batch").get<std::size_t>();
    m.params.learning_rate = meta.at("learning_rate").get<double>();
    m.params.seed = meta.at("seed").get<std::uint64_t>();
    m.loss_curve = meta.at("loss_curve").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("joint model metadata: ") + e.what());
  }
  m.net = std::move(stored.net);
  if (m.embedding_end >= m.net.size()) throw ParseError("joint model: bad embedding index");
  return m;
}

}  // namespace plcgrid::joints
