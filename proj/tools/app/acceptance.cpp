#include "acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <spdlog/spdlog.h>

#include "config.hpp"
#include "json.hpp"
#include "pipeline.hpp"
#include "plcgrid/dataset_io.hpp"
#include "plcgrid/embed.hpp"
#include "plcgrid/joints.hpp"
#include "plcgrid/nn.hpp"
#include "plcgrid/random.hpp"
#include "plcgrid/stateseq.hpp"
#include "plcgrid/topo.hpp"

namespace plcgrid::app {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string fmt_double(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

struct Outcome {
  bool passed = true;
  std::string detail;
  std::map<std::string, double> metrics;

  void fail(const std::string& why) {
    if (passed) detail = why;
    passed = false;
  }
};

// ---- 1: fingerprint ---------------------------------------------------------

/// Section attenuation written out from the model's definition: length-scaled
/// base loss plus an untruncated Gaussian notch per joint channel.
std::vector<double> reference_attenuation(const sim::CableSection& s, const sim::TransferModel& m) {
  std::vector<double> att(kChannels);
  const double w = m.joint_notch_width_channels;
  for (std::size_t i = 0; i < kChannels; ++i) {
    att[i] = m.base_loss_db_per_km[i] * s.length_m / 1000.0;
    for (const auto& joint : s.joint_channels) {
      for (int c : joint) {
        const double z = (static_cast<double>(i) - c) / w;
        att[i] += m.joint_notch_depth_db * std::exp(-z * z);
      }
    }
  }
  return att;
}

Outcome fingerprint(const AcceptanceOptions& opt) {
  Outcome out;
  double worst = 0.0;
  std::size_t checked = 0;
  const sim::SimulationConfig base;
  const auto transfer = base.transfer();
  for (auto seed : opt.seeds) {
    for (int nodes : {8, 16}) {
      auto tc = base.topology;
      tc.n_nodes = nodes;
      tc.seed = derive_seed(seed, static_cast<std::uint64_t>(nodes));
      const auto [topology, truth] = sim::generate_topology(tc);
      std::map<int, std::vector<double>> att;
      for (const auto& s : topology.sections) att[s.id] = reference_attenuation(s, transfer);
      for (const auto& link : topology.plc_links) {
        if (link.direct) continue;
        std::vector<int> forward = link.path;
        std::vector<int> backward(link.path.rbegin(), link.path.rend());
        for (const auto* path : {&forward, &backward}) {
          const auto full = sim::path_headroom(topology, *path, transfer);
          for (std::size_t k = 1; k < path->size(); ++k) {
            const std::vector<int> prefix(path->begin(), path->begin() + static_cast<std::ptrdiff_t>(k));
            const auto head = sim::path_headroom(topology, prefix, transfer);
            for (std::size_t i = 0; i < kChannels; ++i) {
              double rest = 0.0;
              for (std::size_t r = k; r < path->size(); ++r) rest += att[(*path)[r]][i];
              worst = std::max(worst, std::abs((head[i] - full[i]) - rest));
            }
            ++checked;
          }
        }
      }
    }
  }
  // The stored noise-free spectra are exactly the clamped, quantized headroom.
  {
    auto tc = base.topology;
    tc.seed = derive_seed(opt.seeds.front(), "fingerprint-synthesis");
    const auto [topology, truth] = sim::generate_topology(tc);
    const sim::TimeRange range{base.start, base.start + kDaySeconds};
    sim::SynthesisOptions so;
    so.with_tonemaps = false;
    const auto [ds, gt] = sim::synthesize_dataset(topology, transfer, sim::NoiseModel::none(), range, 1, so);
    const auto r = db_range(ds.profile);
    std::size_t mismatches = 0;
    for (const auto& [id, series] : ds.series) {
      const auto [from, to] = ds.endpoints.at(id);
      const auto h = sim::path_headroom(topology, topology.section_path(from, to), transfer);
      for (std::size_t t = 0; t < series.size(); ++t) {
        const auto spec = series.spectrum(t);
        for (std::size_t i = 0; i < kChannels; ++i) {
          const float expect = quantize_db(std::clamp(h[i], static_cast<double>(r.min), static_cast<double>(r.max)));
          mismatches += spec[i] != expect;
        }
      }
    }
    out.metrics["stored_mismatches"] = static_cast<double>(mismatches);
    if (mismatches) out.fail(std::to_string(mismatches) + " stored noise-free values differ from the headroom");
  }
  out.metrics["max_abs_error_db"] = worst;
  out.metrics["prefix_checks"] = static_cast<double>(checked);
  if (checked == 0) out.fail("no indirect link to check");
  if (worst > 1e-6) out.fail("prefix difference off by " + fmt_double(worst) + " dB");
  if (out.passed) {
    out.detail = std::to_string(checked) + " prefix splits, max error " + fmt_double(worst, 3) + " dB";
  }
  return out;
}

// ---- 2: DTW oracle ----------------------------------------------------------

using DtwFn = std::function<double(std::span<const int>, std::span<const int>, const stateseq::SymbolDistance&)>;

/// Deliberately wrong: forgets the horizontal step away from the borders.
double broken_dtw(std::span<const int> a, std::span<const int> b, const stateseq::SymbolDistance& dist) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<double> acc(n * m, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double local = dist(a[i], b[j]);
      double best = 0.0;
      if (i == 0 && j == 0) best = 0.0;
      else if (i == 0) best = acc[j - 1];
      else if (j == 0) best = acc[(i - 1) * m];
      else best = std::min(acc[(i - 1) * m + j - 1], acc[(i - 1) * m + j]);
      acc[i * m + j] = local + best;
    }
  }
  return acc.back();
}

/// Minimum over every monotone warping path, by exhaustive enumeration.
double exhaustive_dtw(std::span<const int> a, std::span<const int> b, const stateseq::SymbolDistance& dist) {
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double cost) {
    cost += dist(a[i], b[j]);
    if (i + 1 == a.size() && j + 1 == b.size()) {
      best = std::min(best, cost);
      return;
    }
    if (i + 1 < a.size()) walk(i + 1, j, cost);
    if (j + 1 < b.size()) walk(i, j + 1, cost);
    if (i + 1 < a.size() && j + 1 < b.size()) walk(i + 1, j + 1, cost);
  };
  walk(0, 0, 0.0);
  return best;
}

Outcome dtw_oracle(const AcceptanceOptions& opt) {
  Outcome out;
  DtwFn under_test = [](std::span<const int> a, std::span<const int> b, const stateseq::SymbolDistance& d) {
    return stateseq::dtw_cost(a, b, d);
  };
  if (opt.plant_dtw_fault) under_test = broken_dtw;

  // Integer-valued centroid distances (3-4-5 triangles) keep sums exact.
  const std::map<int, std::vector<double>> centroids = {{0, {0.0, 0.0}}, {1, {3.0, 4.0}}, {2, {6.0, 8.0}}};
  const stateseq::SymbolDistance metrics[] = {stateseq::SymbolDistance{},
                                              stateseq::SymbolDistance(stateseq::Metric::centroid_euclidean, centroids)};
  Rng rng(derive_seed(opt.seeds.front(), "dtw-oracle"));
  std::uniform_int_distribution<int> len(1, 6), sym(0, 2);
  std::size_t pairs = 0, mismatches = 0;
  std::string first;
  for (int k = 0; k < 5000; ++k) {
    std::vector<int> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
    for (auto& x : a) x = sym(rng);
    for (auto& x : b) x = sym(rng);
    for (const auto& dist : metrics) {
      const double truth = exhaustive_dtw(a, b, dist);
      const auto full = stateseq::dtw(a, b, dist);
      double along = 0.0;
      for (auto [i, j] : full.path) along += dist(a[i], b[j]);
      const double bound = std::floor(truth) + static_cast<double>(k % 3) - 1.0;
      const double bounded = stateseq::dtw_cost(a, b, dist, bound);
      const bool bounded_ok = truth <= bound ? bounded == truth : std::isinf(bounded);
      const bool ok = under_test(a, b, dist) == truth && full.cost == truth && along == truth && bounded_ok &&
                      stateseq::run_path_cost(stateseq::run_lengths(a), stateseq::run_lengths(b), dist) >= truth;
      ++pairs;
      if (!ok) {
        if (mismatches == 0) first = "first mismatch at pair " + std::to_string(k);
        ++mismatches;
      }
    }
  }
  out.metrics["pairs"] = static_cast<double>(pairs);
  out.metrics["mismatches"] = static_cast<double>(mismatches);
  if (mismatches) out.fail(std::to_string(mismatches) + "/" + std::to_string(pairs) + " pairs disagree with the exhaustive oracle; " + first);
  else out.detail = std::to_string(pairs) + " pairs equal to the exhaustive oracle";
  return out;
}

// ---- 3: DBSCAN oracle -------------------------------------------------------

/// Core points by neighbourhood count (the point included), clusters as
/// connected components of the core eps-graph in order of their lowest core
/// index, and border points joining the earliest cluster they touch.
std::vector<int> reference_dbscan(const embed::Matrix& x, double eps, std::size_t min_pts) {
  const std::size_t n = x.rows;
  auto near = [&](std::size_t p, std::size_t q) {
    const double dx = x(p, 0) - x(q, 0), dy = x(p, 1) - x(q, 1);
    return dx * dx + dy * dy <= eps * eps;
  };
  std::vector<bool> core(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t c = 0;
    for (std::size_t q = 0; q < n; ++q) c += near(p, q);
    core[p] = c >= min_pts;
  }
  std::vector<int> comp(n, -1);
  int next = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (!core[p] || comp[p] >= 0) continue;
    std::vector<std::size_t> stack = {p};
    comp[p] = next;
    while (!stack.empty()) {
      const auto q = stack.back();
      stack.pop_back();
      for (std::size_t r = 0; r < n; ++r) {
        if (core[r] && comp[r] < 0 && near(q, r)) {
          comp[r] = next;
          stack.push_back(r);
        }
      }
    }
    ++next;
  }
  std::vector<int> labels(n, -1);
  for (std::size_t p = 0; p < n; ++p) {
    if (core[p]) {
      labels[p] = comp[p];
      continue;
    }
    int best = -1;
    for (std::size_t q = 0; q < n; ++q) {
      if (core[q] && near(p, q) && (best < 0 || comp[q] < best)) best = comp[q];
    }
    labels[p] = best;
  }
  return labels;
}

/// Equal up to a bijective renaming of clusters; noise must stay noise.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] < 0) != (b[i] < 0)) return false;
    if (a[i] < 0) continue;
    auto [it, fresh] = ab.emplace(a[i], b[i]);
    auto [jt, fresh2] = ba.emplace(b[i], a[i]);
    if (it->second != b[i] || jt->second != a[i]) return false;
  }
  return true;
}

Outcome dbscan_oracle(const AcceptanceOptions& opt) {
  Outcome out;
  Rng rng(derive_seed(opt.seeds.front(), "dbscan-oracle"));
  std::uniform_int_distribution<int> npts(1, 60), blobs(1, 4), minpts(1, 6);
  std::uniform_real_distribution<double> unit(0.0, 10.0), eps(0.3, 2.0);
  std::normal_distribution<double> spread(0.0, 0.8);
  std::size_t bad = 0;
  for (int k = 0; k < 200; ++k) {
    const auto n = static_cast<std::size_t>(npts(rng));
    std::vector<std::pair<double, double>> centers(static_cast<std::size_t>(blobs(rng)));
    for (auto& c : centers) c = {unit(rng), unit(rng)};
    embed::Matrix x(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      if (i % 5 == 4) {
        x(i, 0) = unit(rng);
        x(i, 1) = unit(rng);
      } else {
        const auto& c = centers[i % centers.size()];
        x(i, 0) = c.first + spread(rng);
        x(i, 1) = c.second + spread(rng);
      }
    }
    const double e = eps(rng);
    const auto mp = static_cast<std::size_t>(minpts(rng));
    if (!same_partition(embed::dbscan(x, e, mp), reference_dbscan(x, e, mp))) ++bad;
  }
  out.metrics["datasets"] = 200;
  out.metrics["mismatches"] = static_cast<double>(bad);
  if (bad) out.fail(std::to_string(bad) + "/200 datasets differ from the eps-graph oracle");
  else out.detail = "200 datasets equal to the eps-graph oracle up to renaming";
  return out;
}

// ---- 4: state recovery ------------------------------------------------------

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double v) { return v * (v - 1) / 2; };
  double index = 0, sa = 0, sb = 0;
  for (const auto& [k, v] : table) index += c2(v);
  for (const auto& [k, v] : ra) sa += c2(v);
  for (const auto& [k, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(a.size()));
  const double maximum = (sa + sb) / 2;
  return maximum == expected ? 1.0 : (index - expected) / (maximum - expected);
}

/// A hub with three groups of three spokes: 0, 2 and 5 joints, each group
/// with its own interferer at the receiving households.
std::pair<sim::GridTopology, std::map<int, int>> archetype_grid() {
  sim::GridTopology t;
  t.nodes.push_back({0, sim::NodeKind::cabinet});
  std::map<int, int> archetype;
  const int joints[] = {0, 2, 5};
  for (int g = 0; g < 3; ++g) {
    for (int k = 0; k < 3; ++k) {
      const int id = 1 + g * 3 + k;
      t.nodes.push_back({id, sim::NodeKind::household});
      sim::CableSection s;
      s.id = id - 1;
      s.a = 0;
      s.b = id;
      s.length_m = 150.0;
      for (int j = 0; j < joints[g]; ++j) s.joint_channels.push_back({120, 430, 780});
      t.sections.push_back(s);
      archetype[id] = g;
    }
  }
  sim::enumerate_links(t, 1);
  return {t, archetype};
}

Outcome state_recovery(const AcceptanceOptions& opt) {
  Outcome out;
  const auto [topology, archetype] = archetype_grid();
  sim::SimulationConfig base;
  auto noise = base.noise;
  for (int g = 0; g < 3; ++g) {
    sim::Interferer f;
    f.band_lo = 60 + 280 * g;
    f.band_hi = f.band_lo + 40;
    f.depth_db = 10.0;
    f.nodes = {1 + 3 * g, 2 + 3 * g, 3 + 3 * g};
    noise.interferers.push_back(f);
  }
  sim::SynthesisOptions so;
  so.with_tonemaps = false;
  for (int id = 1; id <= 9; ++id) so.only.push_back({0, id});
  const sim::TimeRange range{base.start, base.start + 7 * kDaySeconds};
  double worst = 1.0;
  for (auto seed : opt.seeds) {
    const auto [ds, gt] = sim::synthesize_dataset(topology, base.transfer(), noise, range, derive_seed(seed, "archetypes"), so);
    embed::StateParams params;
    const auto model = embed::fit_connection_states(ds, 900, params, derive_seed(seed, "archetype-states"));
    std::vector<int> truth;
    for (const auto& ref : model.reference_ids) {
      const auto [from, to] = parse_connection_id(ref.substr(0, ref.find('@')));
      truth.push_back(archetype.at(to));
    }
    const double ari = adjusted_rand_index(model.reference_labels, truth);
    out.metrics["ari_seed_" + std::to_string(seed)] = ari;
    worst = std::min(worst, ari);
    if (ari < 0.8) out.fail("seed " + std::to_string(seed) + ": ARI " + fmt_double(ari, 3) + " < 0.8");
  }
  out.metrics["min_ari"] = worst;
  if (out.passed) out.detail = "min ARI " + fmt_double(worst, 3) + " over " + std::to_string(opt.seeds.size()) + " seeds";
  return out;
}

// ---- 5: anomaly detection ---------------------------------------------------

Outcome anomaly_detection(const AcceptanceOptions& opt) {
  Outcome out;
  const AnomalyConfig ac;
  for (auto seed : opt.seeds) {
    sim::SimulationConfig cfg;
    cfg.days = 28;
    cfg.topology.seed = derive_seed(seed, "anomaly-grid");
    const auto [topology, truth] = sim::generate_topology(cfg.topology);
    sim::EventSpec ev;
    ev.kind = sim::EventKind::fuse_failure;
    ev.node = topology.sections.front().b;
    ev.start = cfg.start + 22 * kDaySeconds;
    ev.duration_s = 3 * kDaySeconds;
    ev.severity_db = 20.0;
    sim::SynthesisOptions so;
    so.with_tonemaps = false;
    so.events = {ev};
    const auto [ds, gt] = sim::synthesize_dataset(topology, cfg.transfer(), cfg.noise, cfg.time_range(),
                                                  derive_seed(seed, "anomaly-synthesis"), so);
    const auto model = embed::fit_connection_states(ds, 1000, embed::StateParams{}, derive_seed(seed, "anomaly-states"));
    // Every affected link plus the first few unaffected ones.
    std::vector<std::string> picked;
    std::size_t unaffected = 0;
    for (const auto& [id, ends] : ds.endpoints) {
      if (sim::event_affects(ev, ends.first, ends.second)) picked.push_back(id);
      else if (unaffected < 4) {
        picked.push_back(id);
        ++unaffected;
      }
    }
    EventWindowStats stats;
    for (const auto& id : picked) {
      const auto seq = stateseq::to_state_sequence(ds.series.at(id), model);
      auto [train, eval] = stateseq::split_sequence(seq, ac.split_ratio);
      const auto templates = stateseq::mine_templates(train, ac.window, ac.radius, ac.min_support);
      const auto report = stateseq::score_anomalies(eval, templates, ac.threshold, ac.stride);
      const auto [from, to] = ds.endpoints.at(id);
      stats.add(score_event_windows(report, gt.events, from, to));
    }
    const auto s = std::to_string(seed);
    out.metrics["recall_seed_" + s] = stats.recall();
    out.metrics["fpr_seed_" + s] = stats.false_positive_rate();
    out.metrics["event_windows_seed_" + s] = static_cast<double>(stats.event_windows);
    if (stats.event_windows == 0) out.fail("seed " + s + ": no event window");
    if (stats.recall() < 0.9) out.fail("seed " + s + ": recall " + fmt_double(stats.recall(), 3) + " < 0.9");
    if (stats.false_positive_rate() > 0.1) {
      out.fail("seed " + s + ": false-positive rate " + fmt_double(stats.false_positive_rate(), 3) + " > 0.1");
    }
  }
  if (out.passed) out.detail = "recall >= 0.9 and false-positive rate <= 0.1 on every seed";
  return out;
}

// ---- 6: gradient integrity --------------------------------------------------

nn::Tensor random_tensor(nn::Shape shape, std::uint64_t seed, double scale = 1.0) {
  nn::Tensor t(std::move(shape));
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (auto& v : t.data) v = g(rng);
  return t;
}

Outcome gradient_integrity(const AcceptanceOptions& opt) {
  Outcome out;
  struct Case {
    std::string name;
    std::function<nn::Sequential()> build;
    nn::Shape input;
    double input_scale = 1.0;
  };
  using namespace nn;
  const std::vector<Case> cases = {
      {"dense", [] { Sequential s; s.emplace<Dense>(5, 4); return s; }, {3, 5}},
      {"relu", [] { Sequential s; s.emplace<Dense>(5, 6); s.emplace<ReLU>(); s.emplace<Dense>(6, 2); return s; }, {4, 5}},
      {"affine", [] { Sequential s; s.emplace<Affine>(0.5, 1.0); s.emplace<Dense>(4, 3); return s; }, {3, 4}},
      {"conv1d", [] { Sequential s; s.emplace<Conv1d>(3, 4, 3); return s; }, {2, 3, 11}},
      {"conv1d-dilated", [] { Sequential s; s.emplace<Conv1d>(3, 2, 5, 2); return s; }, {2, 3, 16}},
      {"channel-group-pool",
       [] { Sequential s; s.emplace<Conv1d>(4, 6, 3); s.emplace<ChannelGroupPool>(3); s.emplace<Conv1d>(2, 2, 3); return s; },
       {2, 4, 9}},
      {"avg-pool1d", [] { Sequential s; s.emplace<Conv1d>(2, 3, 3); s.emplace<AvgPool1d>(2); return s; }, {2, 2, 9}},
      {"global-avg-pool",
       [] { Sequential s; s.emplace<Conv1d>(2, 3, 3); s.emplace<GlobalAvgPool>(); s.emplace<Dense>(3, 2); return s; },
       {3, 2, 8}},
      {"residual", [] { Sequential s; s.emplace<ResidualBlock>(3, 3, 3); return s; }, {2, 3, 10}},
      {"residual-projection", [] { Sequential s; s.emplace<ResidualBlock>(2, 4, 3, 2); return s; }, {2, 2, 10}},
      {"flatten", [] { Sequential s; s.emplace<Conv1d>(2, 2, 3); s.emplace<Flatten>(); s.emplace<Dense>(12, 3); return s; },
       {2, 2, 6}},
      {"edges-to-sequence",
       [] { Sequential s; s.emplace<Dense>(6, 4); s.emplace<EdgesToSequence>(); s.emplace<Conv1d>(4, 2, 3); return s; },
       {5, 6}},
      {"joints-reduced",
       [] {
         joints::JointParams p;
         p.channels = {4, 6, 6};
         return std::move(joints::build_joint_model(p).net);
       },
       {2, kSlotsPerDay, kChannels}, 10.0},
      {"topology-reduced",
       [] {
         topo::TopoParams p;
         p.hidden = 12;
         p.embedding = 6;
         p.filter_channels = 4;
         topo::Encoder enc;
         enc.net.emplace<Affine>(0.1, -2.0);
         enc.net.emplace<Dense>(kChannels, p.hidden);
         enc.net.emplace<ReLU>();
         enc.net.emplace<Dense>(p.hidden, p.embedding);
         enc.net.initialize(7);
         return std::move(topo::build_topo_model(enc, p).net);
       },
       {7, kChannels}, 10.0},
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const auto& c = cases[k];
    auto net = c.build();
    net.initialize(derive_seed(opt.seeds.front(), k));
    const auto x = random_tensor(c.input, derive_seed(opt.seeds.front(), "grad-input-" + c.name), c.input_scale);
    GradCheckOptions go;
    go.max_per_parameter = 24;
    go.seed = k;
    const auto r = grad_check(net, x, half_square_loss, go);
    out.metrics["max_rel_error_" + c.name] = r.max_rel_error;
    worst = std::max(worst, r.max_rel_error);
    if (r.max_rel_error > 1e-3) {
      out.fail(c.name + ": relative error " + fmt_double(r.max_rel_error, 3) + " at " + r.worst_parameter);
    }
  }
  out.metrics["max_rel_error"] = worst;
  if (out.passed) out.detail = std::to_string(cases.size()) + " networks, max relative error " + fmt_double(worst, 3);
  return out;
}

// ---- 7: joints --------------------------------------------------------------

Outcome joint_regression(const AcceptanceOptions& opt) {
  Outcome out;
  const JointsConfig jc;
  for (auto seed : opt.seeds) {
    const auto s = std::to_string(seed);
    sim::SimulationConfig cfg;
    cfg.topology.n_nodes = 16;
    cfg.topology.seed = derive_seed(seed, "joint-grid");
    const auto [topology, truth] = sim::generate_topology(cfg.topology);
    sim::SynthesisOptions so;
    so.with_tonemaps = false;
    for (const auto& sec : topology.sections) {
      so.only.push_back({sec.a, sec.b});
      so.only.push_back({sec.b, sec.a});
    }
    const auto [ds, gt] = sim::synthesize_dataset(topology, cfg.transfer(), cfg.noise, cfg.time_range(),
                                                  derive_seed(seed, "joint-synthesis"), so);
    const auto data = joints::build_joint_dataset(ds, topology, truth, jc.val_fraction, derive_seed(seed, "joint-split"));
    auto params = jc.params;
    params.seed = derive_seed(seed, "joint-model");
    auto model = joints::train_joint_regressor(data.train, params);
    const auto eval = joints::evaluate_joints(model, data.val);
    out.metrics["val_mae_seed_" + s] = eval.mae;
    if (eval.mae > 1.0) out.fail("seed " + s + ": validation MAE " + fmt_double(eval.mae, 3) + " > 1.0");
    const auto profile = joints::channel_sensitivity(model, data.val, jc.err_tolerance);
    const auto peaks = joints::top_peaks(joints::smooth_profile(profile.per_channel, jc.smooth_width), jc.peaks,
                                         jc.peak_separation);
    int worst = 0;
    for (int c : cfg.topology.joint_centers) {
      int best = static_cast<int>(kChannels);
      for (int p : peaks) best = std::min(best, std::abs(p - c));
      worst = std::max(worst, best);
    }
    out.metrics["peak_error_seed_" + s] = worst;
    if (worst > 5) {
      std::string list;
      for (int p : peaks) list += (list.empty() ? "" : ",") + std::to_string(p);
      out.fail("seed " + s + ": peaks {" + list + "} miss a planted channel by " + std::to_string(worst));
    }
  }
  if (out.passed) out.detail = "MAE <= 1.0 and all planted channels within 5 of a top-3 peak on every seed";
  return out;
}

// ---- 8: topology ------------------------------------------------------------

Outcome topology_untangling(const AcceptanceOptions& opt) {
  Outcome out;
  const TopoConfig tc;
  const sim::SimulationConfig base;
  for (auto seed : opt.seeds) {
    const auto s = std::to_string(seed);
    std::vector<topo::TopoSample> train;
    std::vector<std::vector<topo::TopoSample>> eval;
    for (int g = 0; g < 6; ++g) {
      auto a = topo_grid_samples(base, tc.grid_nodes, tc.grid_days, tc.train_timestamps,
                                 derive_seed(derive_seed(seed, "topo-train"), static_cast<std::uint64_t>(g)));
      train.insert(train.end(), std::make_move_iterator(a.begin()), std::make_move_iterator(a.end()));
      eval.push_back(topo_grid_samples(base, tc.grid_nodes, tc.grid_days, tc.eval_timestamps,
                                       derive_seed(derive_seed(seed, "topo-eval"), static_cast<std::uint64_t>(g))));
    }
    auto params = tc.params;
    params.seed = derive_seed(seed, "topo-model");
    auto encoder = topo::pretrain_encoder(topo::edge_spectra(train), params);
    auto model = topo::train_topology_filter(train, encoder, params);
    std::vector<topo::TopologyPrediction> raw, post;
    std::vector<std::vector<std::uint8_t>> truth;
    std::set<std::size_t> sizes;
    for (const auto& grid : eval) {
      std::vector<topo::TopologyPrediction> sym;
      for (const auto& sample : grid) {
        raw.push_back(topo::predict_topology(model, sample.tensor, tc.threshold));
        sym.push_back(topo::symmetrize(raw.back(), tc.symmetry));
        truth.push_back(sample.labels);
        sizes.insert(sample.tensor.n);
      }
      const auto voted = topo::apply_votes(sym, topo::overlap_votes(sym, tc.threshold));
      post.insert(post.end(), voted.begin(), voted.end());
    }
    const auto r = topo::eval_topology(raw, truth);
    const auto p = topo::eval_topology(post, truth);
    out.metrics["raw_entrywise_seed_" + s] = r.entrywise_acc;
    out.metrics["entrywise_seed_" + s] = p.entrywise_acc;
    out.metrics["exact_seed_" + s] = p.exact_matrix_acc;
    out.metrics["min_n_seed_" + s] = static_cast<double>(*sizes.begin());
    out.metrics["max_n_seed_" + s] = static_cast<double>(*sizes.rbegin());
    if (p.entrywise_acc < 0.9) out.fail("seed " + s + ": entrywise accuracy " + fmt_double(p.entrywise_acc, 3) + " < 0.9");
    if (p.exact_matrix_acc < 0.5) out.fail("seed " + s + ": exact-matrix accuracy " + fmt_double(p.exact_matrix_acc, 3) + " < 0.5");
    if (p.entrywise_acc < r.entrywise_acc) {
      out.fail("seed " + s + ": post-processing lowered entrywise accuracy (" + fmt_double(r.entrywise_acc, 4) +
               " -> " + fmt_double(p.entrywise_acc, 4) + ")");
    }
  }
  if (out.passed) out.detail = "entrywise >= 0.9, exact >= 0.5, post-processing never below raw on every seed";
  return out;
}

// ---- 9: determinism ---------------------------------------------------------

constexpr const char* kSmallConfig = R"({
  "seed": 11,
  "simulator": {"n_nodes": 5, "days": 8, "hop_radius": 2, "joint_count_range": [0, 3]},
  "embed": {"sample_size": 200, "perplexity": 20, "iters": 300, "exaggeration_iters": 100},
  "joints": {"channels": [4, 8], "epochs": 1, "batch": 16},
  "topo": {"train_grids": 2, "grid_nodes": 6, "grid_days": 1, "train_timestamps": 4, "eval_timestamps": 2,
           "hidden": 16, "embedding": 8, "filter_channels": 4, "pretrain_epochs": 1, "pretrain_samples": 256,
           "pretrain_batch": 32, "epochs": 1, "min_neighborhood": 3},
  "radial": {"period": "day"}
})";

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    auto bytes = sim::read_file(e.path());
    if (e.path().filename() == "report.json") {
      auto j = json::parse(bytes);
      j.erase("wall_time_s");
      bytes = j.dump();
    }
    files[fs::relative(e.path(), root).generic_string()] = std::move(bytes);
  }
  return files;
}

Outcome determinism(const AcceptanceOptions& opt) {
  Outcome out;
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* name : {"run_a", "run_b"}) {
    const auto dir = opt.work_dir / "determinism" / name;
    fs::remove_all(dir);
    auto config = parse_run_config(kSmallConfig);
    config.out = dir;
    cmd_simulate(config);
    for (auto stage : kStages) cmd_pipeline(config, stage);
    runs.push_back(snapshot(dir));
  }
  std::size_t differing = 0;
  std::string first;
  std::set<std::string> names;
  for (const auto& r : runs) {
    for (const auto& [k, v] : r) names.insert(k);
  }
  for (const auto& n : names) {
    auto a = runs[0].find(n), b = runs[1].find(n);
    if (a == runs[0].end() || b == runs[1].end() || a->second != b->second) {
      if (!differing) first = n;
      ++differing;
    }
  }
  out.metrics["files"] = static_cast<double>(names.size());
  out.metrics["differing"] = static_cast<double>(differing);
  if (differing) out.fail(std::to_string(differing) + " of " + std::to_string(names.size()) + " artifacts differ, first " + first);
  else out.detail = std::to_string(names.size()) + " artifacts byte-identical across two runs";
  return out;
}

// ---- 10: radial -------------------------------------------------------------

struct SvgCounts {
  std::size_t rings = 0;
  std::size_t arcs = 0;
  std::size_t attr_rings = 0;
  std::size_t attr_arcs = 0;
};

void count_svg(const boost::property_tree::ptree& node, SvgCounts& c) {
  for (const auto& [tag, child] : node) {
    if (tag == "<xmlattr>") continue;
    const auto cls = child.get<std::string>("<xmlattr>.class", "");
    if (tag == "g" && cls == "ring") ++c.rings;
    if (tag == "path" && cls == "arc") ++c.arcs;
    count_svg(child, c);
  }
}

SvgCounts parse_svg(const std::string& svg) {
  std::istringstream in(svg);
  boost::property_tree::ptree tree;
  boost::property_tree::read_xml(in, tree);  // throws on malformed XML
  SvgCounts c;
  const auto& root = tree.get_child("svg");
  c.attr_rings = root.get<std::size_t>("<xmlattr>.data-rings");
  c.attr_arcs = root.get<std::size_t>("<xmlattr>.data-arcs");
  count_svg(root, c);
  return c;
}

Outcome radial_rendering(const AcceptanceOptions& opt) {
  Outcome out;
  sim::SimulationConfig cfg;
  cfg.topology.n_nodes = 4;
  cfg.topology.seed = derive_seed(opt.seeds.front(), "radial-grid");
  const auto [topology, truth] = sim::generate_topology(cfg.topology);
  sim::SynthesisOptions so;
  so.with_tonemaps = false;
  std::optional<embed::StateModel> model;
  for (int days : {7, 2, 1}) {
    const sim::TimeRange range{cfg.start, cfg.start + days * kDaySeconds};
    const auto [ds, gt] = sim::synthesize_dataset(topology, cfg.transfer(), cfg.noise, range,
                                                  derive_seed(opt.seeds.front(), "radial-synthesis"), so);
    if (!model) {
      embed::StateParams params;
      params.tsne.perplexity = 15;
      params.tsne.iters = 300;
      params.tsne.exaggeration_iters = 100;
      model = embed::fit_connection_states(ds, 150, params, derive_seed(opt.seeds.front(), "radial-states"));
    }
    const auto seq = stateseq::to_state_sequence(ds.series.begin()->second, *model);
    const auto d = std::to_string(days);
    for (auto period : {stateseq::RadialPeriod::day, stateseq::RadialPeriod::year}) {
      const bool by_day = period == stateseq::RadialPeriod::day;
      const std::size_t rings = by_day ? static_cast<std::size_t>(days) : 1;
      const std::size_t arcs = by_day ? seq.size() : static_cast<std::size_t>(days);
      SvgCounts c;
      try {
        c = parse_svg(stateseq::render_radial(seq, period));
      } catch (const std::exception& e) {
        out.fail(d + " days: SVG not well-formed: " + e.what());
        continue;
      }
      const std::string tag = d + (by_day ? "d_day" : "d_year");
      out.metrics["rings_" + tag] = static_cast<double>(c.rings);
      out.metrics["arcs_" + tag] = static_cast<double>(c.arcs);
      if (seq.size() != static_cast<std::size_t>(days) * kSlotsPerDay) {
        out.fail(d + " days: sequence has " + std::to_string(seq.size()) + " slots");
      }
      if (c.rings != rings || c.attr_rings != rings || c.arcs != arcs || c.attr_arcs != arcs) {
        out.fail(d + " days (" + (by_day ? "day" : "year") + "): " + std::to_string(c.rings) + " rings / " +
                 std::to_string(c.arcs) + " arcs, expected " + std::to_string(rings) + " / " + std::to_string(arcs));
      }
    }
  }
  if (out.passed) out.detail = "well-formed SVG with rings = days and arcs = slots for 1, 2 and 7 days";
  return out;
}

using CriterionFn = Outcome (*)(const AcceptanceOptions&);

const std::map<int, CriterionFn>& criterion_functions() {
  static const std::map<int, CriterionFn> fns = {
      {1, fingerprint},       {2, dtw_oracle},         {3, dbscan_oracle},      {4, state_recovery},
      {5, anomaly_detection}, {6, gradient_integrity}, {7, joint_regression},   {8, topology_untangling},
      {9, determinism},       {10, radial_rendering}};
  return fns;
}

}  // namespace

const std::vector<CriterionInfo>& acceptance_criteria() {
  static const std::vector<CriterionInfo> list = {
      {1, "simulator-fingerprint", 10},  {2, "dtw-oracle", 60},          {3, "dbscan-oracle", 60},
      {4, "state-recovery", 300},        {5, "anomaly-detection", 300},  {6, "gradient-integrity", 120},
      {7, "joint-regression", 900},      {8, "topology-untangling", 1200}, {9, "determinism", 300},
      {10, "radial-rendering", 10}};
  return list;
}

CriterionResult run_criterion(int id, const AcceptanceOptions& options) {
  const auto& list = acceptance_criteria();
  auto info = std::find_if(list.begin(), list.end(), [&](const auto& c) { return c.id == id; });
  if (info == list.end()) throw InvalidArgument("unknown acceptance criterion " + std::to_string(id));
  CriterionResult r;
  r.id = id;
  r.name = info->name;
  r.budget_s = info->budget_s;
  AcceptanceOptions opt = options;
  if (opt.seeds.empty()) opt.seeds = {1, 2, 3};
  if (opt.work_dir.empty()) opt.work_dir = fs::temp_directory_path() / "plcgrid-acceptance";
  spdlog::info("criterion {} ({}) started", id, r.name);
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = criterion_functions().at(id)(opt);
  } catch (const std::exception& e) {
    o.fail(std::string("error: ") + e.what());
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.passed = o.passed;
  r.detail = o.detail;
  r.metrics = std::move(o.metrics);
  if (options.enforce_budget && r.seconds > r.budget_s) {
    if (r.passed) r.detail = "over the time budget: " + fmt_double(r.seconds, 3) + " s";
    r.passed = false;
  }
  return r;
}

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options,
                                            const std::function<void(const CriterionResult&)>& on_result) {
  std::vector<CriterionResult> results;
  for (const auto& c : acceptance_criteria()) {
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), c.id) == options.only.end()) continue;
    results.push_back(run_criterion(c.id, options));
    if (on_result) on_result(results.back());
  }
  return results;
}

std::string format_result_line(const CriterionResult& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s %2d %-22s", r.passed ? "PASS" : "FAIL", r.id, r.name.c_str());
  char tail[64];
  std::snprintf(tail, sizeof tail, "  (%.1f s / %.0f s)", r.seconds, r.budget_s);
  return std::string(buf) + " " + r.detail + tail;
}

std::string acceptance_results_to_json(const std::vector<CriterionResult>& results) {
  json j;
  j["passed"] = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
  j["criteria"] = json::array();
  for (const auto& r : results) {
    j["criteria"].push_back({{"id", r.id},
                             {"name", r.name},
                             {"status", r.passed ? "pass" : "fail"},
                             {"detail", r.detail},
                             {"seconds", r.seconds},
                             {"budget_s", r.budget_s},
                             {"metrics", r.metrics}});
  }
  return j.dump(2) + "\n";
}

}  // namespace plcgrid::app
