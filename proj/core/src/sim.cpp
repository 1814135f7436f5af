#include "plcgrid/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <queue>

#include "plcgrid/error.hpp"

namespace plcgrid::sim {

namespace {

struct Adjacency {
  // node -> (neighbor, section id)
  std::vector<std::vector<std::pair<int, int>>> out;
};

Adjacency adjacency_of(const GridTopology& topology) {
  Adjacency adj;
  adj.out.resize(topology.nodes.size());
  for (const auto& s : topology.sections) {
    adj.out.at(static_cast<std::size_t>(s.a)).push_back({s.b, s.id});
    adj.out.at(static_cast<std::size_t>(s.b)).push_back({s.a, s.id});
  }
  return adj;
}

// BFS from `from`; returns (parent node, parent section) per node, -1 if unreached.
std::vector<std::pair<int, int>> bfs_tree(const Adjacency& adj, int from) {
  std::vector<std::pair<int, int>> parent(adj.out.size(), {-1, -1});
  std::vector<bool> seen(adj.out.size(), false);
  std::queue<int> q;
  q.push(from);
  seen[static_cast<std::size_t>(from)] = true;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (auto [v, sid] : adj.out[static_cast<std::size_t>(u)]) {
      if (seen[static_cast<std::size_t>(v)]) continue;
      seen[static_cast<std::size_t>(v)] = true;
      parent[static_cast<std::size_t>(v)] = {u, sid};
      q.push(v);
    }
  }
  return parent;
}

std::vector<int> path_from_parents(const std::vector<std::pair<int, int>>& parent, int from,
                                   int to) {
  std::vector<int> path;
  int cur = to;
  while (cur != from) {
    const auto [p, sid] = parent[static_cast<std::size_t>(cur)];
    if (p < 0) return {};
    path.push_back(sid);
    cur = p;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

double daily_phase(Timestamp t) {
  const auto sec = static_cast<double>(t - day_of(t) * kDaySeconds);
  return sec / static_cast<double>(kDaySeconds);
}

}  // namespace

const CableSection& GridTopology::section(int id) const {
  for (const auto& s : sections) {
    if (s.id == id) return s;
  }
  throw InvalidArgument("unknown section " + std::to_string(id));
}

std::vector<int> GridTopology::section_path(int from, int to) const {
  if (from == to) return {};
  const auto parent = bfs_tree(adjacency_of(*this), from);
  return path_from_parents(parent, from, to);
}

std::optional<int> GridTopology::hops(int from, int to) const {
  if (from == to) return 0;
  auto p = section_path(from, to);
  if (p.empty()) return std::nullopt;
  return static_cast<int>(p.size());
}

const PlcLink* GridTopology::find_link(int a, int b) const {
  for (const auto& l : plc_links) {
    if ((l.a == a && l.b == b) || (l.a == b && l.b == a)) return &l;
  }
  return nullptr;
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::fuse_failure:
      return "fuse_failure";
    case EventKind::transient_interferer:
      return "transient_interferer";
    case EventKind::cable_degradation:
      return "cable_degradation";
  }
  return "unknown";
}

EventKind parse_event_kind(std::string_view name) {
  if (name == "fuse_failure") return EventKind::fuse_failure;
  if (name == "transient_interferer") return EventKind::transient_interferer;
  if (name == "cable_degradation") return EventKind::cable_degradation;
  throw InvalidArgument("unknown event kind '" + std::string(name) + "'");
}

GroundTruth ground_truth_of(const GridTopology& topology) {
  GroundTruth gt;
  for (const auto& l : topology.plc_links) {
    gt.links.push_back({l.a, l.b, l.direct, static_cast<int>(l.path.size())});
  }
  for (const auto& s : topology.sections) {
    gt.section_joints[s.id] = s.joints();
    gt.section_joint_channels[s.id] = s.joint_channels;
  }
  return gt;
}

void enumerate_links(GridTopology& topology, int hop_radius) {
  topology.plc_links.clear();
  const auto adj = adjacency_of(topology);
  const int n = static_cast<int>(topology.nodes.size());
  for (int a = 0; a < n; ++a) {
    const auto parent = bfs_tree(adj, a);
    for (int b = a + 1; b < n; ++b) {
      auto path = path_from_parents(parent, a, b);
      if (path.empty() || static_cast<int>(path.size()) > hop_radius) continue;
      const bool direct = path.size() == 1;
      topology.plc_links.push_back({a, b, std::move(path), direct});
    }
  }
}

std::pair<GridTopology, GroundTruth> generate_topology(const TopologyConfig& config) {
  if (config.n_nodes < 2) throw InvalidArgument("n_nodes must be >= 2");
  if (config.max_degree < 1) throw InvalidArgument("max_degree must be >= 1");
  if (config.min_joints < 0 || config.max_joints < config.min_joints) {
    throw InvalidArgument("invalid joint_count_range");
  }
  if (!(config.min_length_m >= 0.0) || config.max_length_m < config.min_length_m) {
    throw InvalidArgument("invalid section length range");
  }
  if (config.hop_radius < 1) throw InvalidArgument("hop_radius must be >= 1");
  for (int c : config.joint_centers) {
    if (c < 0 || c >= static_cast<int>(kChannels)) throw InvalidArgument("joint center out of range");
  }

  Rng rng(derive_seed(config.seed, "topology"));
  GridTopology topo;
  topo.nodes.push_back({0, NodeKind::substation});
  std::vector<int> degree(static_cast<std::size_t>(config.n_nodes), 0);
  std::uniform_real_distribution<double> length(config.min_length_m, config.max_length_m);
  std::uniform_int_distribution<int> joints(config.min_joints, config.max_joints);

  for (int i = 1; i < config.n_nodes; ++i) {
    std::vector<int> candidates;
    for (int j = 0; j < i; ++j) {
      if (degree[static_cast<std::size_t>(j)] < config.max_degree) candidates.push_back(j);
    }
    if (candidates.empty()) {
      throw InvalidArgument("max_degree " + std::to_string(config.max_degree) +
                            " cannot connect " + std::to_string(config.n_nodes) + " nodes");
    }
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    const int parent = candidates[pick(rng)];
    ++degree[static_cast<std::size_t>(parent)];
    ++degree[static_cast<std::size_t>(i)];
    topo.nodes.push_back({i, NodeKind::household});

    CableSection s;
    s.id = i - 1;
    s.a = parent;
    s.b = i;
    s.length_m = length(rng);
    const int k = joints(rng);
    s.joint_channels.assign(static_cast<std::size_t>(k), config.joint_centers);
    topo.sections.push_back(std::move(s));
  }
  for (std::size_t i = 1; i < topo.nodes.size(); ++i) {
    if (degree[i] > 1) topo.nodes[i].kind = NodeKind::cabinet;
  }
  enumerate_links(topo, config.hop_radius);
  auto gt = ground_truth_of(topo);
  return {std::move(topo), std::move(gt)};
}

TransferModel TransferModel::linear(double low_db_per_km, double high_db_per_km) {
  TransferModel m;
  m.base_loss_db_per_km.resize(kChannels);
  for (std::size_t i = 0; i < kChannels; ++i) {
    m.base_loss_db_per_km[i] =
        low_db_per_km + (high_db_per_km - low_db_per_km) * static_cast<double>(i) / (kChannels - 1);
  }
  return m;
}

void TransferModel::validate() const {
  if (base_loss_db_per_km.size() != kChannels) {
    throw InvalidArgument("base_loss_db_per_km must have 917 entries");
  }
  for (std::size_t i = 0; i < kChannels; ++i) {
    if (!(base_loss_db_per_km[i] >= 0.0)) throw InvalidArgument("base loss must be >= 0");
    if (i > 0 && base_loss_db_per_km[i] < base_loss_db_per_km[i - 1]) {
      throw InvalidArgument("base loss must be non-decreasing with channel index");
    }
  }
  if (!(joint_notch_depth_db >= 0.0)) throw InvalidArgument("joint_notch_depth_db must be >= 0");
  if (!(joint_notch_width_channels >= 1.0)) {
    throw InvalidArgument("joint_notch_width_channels must be >= 1");
  }
}

bool Interferer::active(Timestamp t) const {
  if (start_hour == end_hour) return true;
  const double h = daily_phase(t) * 24.0;
  if (start_hour < end_hour) return h >= start_hour && h < end_hour;
  return h >= start_hour || h < end_hour;
}

bool Interferer::applies_to(int receiver) const {
  return nodes.empty() || std::find(nodes.begin(), nodes.end(), receiver) != nodes.end();
}

void NoiseModel::validate() const {
  if (!(daily_amp_db >= 0.0) || !(seasonal_amp_db >= 0.0) || !(awgn_sigma_db >= 0.0)) {
    throw InvalidArgument("noise amplitudes must be >= 0");
  }
  for (const auto& f : interferers) {
    if (f.band_lo < 0 || f.band_hi >= static_cast<int>(kChannels) || f.band_lo > f.band_hi) {
      throw InvalidArgument("interferer band out of range");
    }
    if (!(f.depth_db >= 0.0)) throw InvalidArgument("interferer depth must be >= 0");
  }
}

std::vector<double> section_attenuation(const CableSection& section, const TransferModel& model) {
  std::vector<double> att(kChannels);
  const double km = section.length_m / 1000.0;
  for (std::size_t i = 0; i < kChannels; ++i) att[i] = model.base_loss_db_per_km[i] * km;
  const double w = model.joint_notch_width_channels;
  // Contributions beyond 6 widths are below 1e-15 of the depth.
  const int reach = static_cast<int>(std::ceil(6.0 * w));
  for (const auto& joint : section.joint_channels) {
    for (int center : joint) {
      const int lo = std::max(0, center - reach);
      const int hi = std::min(static_cast<int>(kChannels) - 1, center + reach);
      for (int i = lo; i <= hi; ++i) {
        const double z = (i - center) / w;
        att[static_cast<std::size_t>(i)] += model.joint_notch_depth_db * std::exp(-z * z);
      }
    }
  }
  return att;
}

std::string connection_id(int from, int to) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "n%03d-n%03d", from, to);
  return buf;
}

std::vector<double> path_headroom(const GridTopology& topology, const std::vector<int>& path,
                                  const TransferModel& transfer) {
  std::vector<double> h(kChannels, transfer.tx_headroom_db);
  for (int sid : path) {
    const auto att = section_attenuation(topology.section(sid), transfer);
    for (std::size_t i = 0; i < kChannels; ++i) h[i] -= att[i];
  }
  return h;
}

void add_noise(std::vector<double>& noise, Timestamp t, int receiver, const NoiseModel& model,
               Rng& rng) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  constexpr double kYearSeconds = 365.0 * kDaySeconds;
  // Daily term peaks in the evening; seasonal term over a 365-day period.
  const double daily = model.daily_amp_db * 0.5 * (1.0 + std::sin(kTwoPi * (daily_phase(t) - 0.5)));
  const double seasonal = model.seasonal_amp_db * 0.5 *
                          (1.0 + std::sin(kTwoPi * static_cast<double>(t) / kYearSeconds));
  const double common = daily + seasonal;
  for (auto& v : noise) v += common;
  for (const auto& f : model.interferers) {
    if (!f.applies_to(receiver) || !f.active(t)) continue;
    for (int i = f.band_lo; i <= f.band_hi; ++i) noise[static_cast<std::size_t>(i)] += f.depth_db;
  }
  if (model.awgn_sigma_db > 0.0) {
    std::normal_distribution<double> gauss(0.0, model.awgn_sigma_db);
    for (auto& v : noise) v += gauss(rng);
  }
}

ChannelSpectrum path_snr(const GridTopology& topology, const DirectedLink& link, Timestamp t,
                         const TransferModel& transfer, const NoiseModel& noise, Profile profile,
                         Rng& rng) {
  const auto range = db_range(profile);
  auto snr = path_headroom(topology, link.path, transfer);
  std::vector<double> n(kChannels, 0.0);
  add_noise(n, t, link.to, noise, rng);
  std::vector<float> out(kChannels);
  for (std::size_t i = 0; i < kChannels; ++i) {
    out[i] = quantize_db(std::clamp(snr[i] - n[i], static_cast<double>(range.min),
                                    static_cast<double>(range.max)));
  }
  return ChannelSpectrum(std::move(out), range);
}

bool event_affects(const EventSpec& event, int from, int to) {
  if (event.node) return from == *event.node || to == *event.node;
  if (event.link) {
    const auto [a, b] = *event.link;
    return (from == a && to == b) || (from == b && to == a);
  }
  return false;
}

double event_drop_db(const EventSpec& event, std::size_t channel, Timestamp t,
                     const TransferModel& transfer) {
  if (event.duration_s <= 0 || t < event.start || t >= event.start + event.duration_s) return 0.0;
  switch (event.kind) {
    case EventKind::fuse_failure:
      return event.severity_db * (0.3 + 0.7 * static_cast<double>(channel) / (kChannels - 1));
    case EventKind::transient_interferer:
      return static_cast<int>(channel) >= event.band_lo && static_cast<int>(channel) <= event.band_hi
                 ? event.severity_db
                 : 0.0;
    case EventKind::cable_degradation: {
      const double frac = static_cast<double>(t - event.start) / static_cast<double>(event.duration_s);
      const double top = transfer.base_loss_db_per_km.back();
      const double shape = top > 0.0 ? transfer.base_loss_db_per_km[channel] / top : 1.0;
      return event.severity_db * frac * shape;
    }
  }
  throw InvalidArgument("unknown event kind");
}

const MeasurementSeries* Dataset::find(int from, int to) const {
  auto it = series.find(connection_id(from, to));
  return it == series.end() ? nullptr : &it->second;
}

void inject_event(Dataset& dataset, GroundTruth& truth, const EventSpec& event,
                  const TransferModel& transfer) {
  if (event.kind != EventKind::fuse_failure && event.kind != EventKind::transient_interferer &&
      event.kind != EventKind::cable_degradation) {
    throw InvalidArgument("unknown event kind");
  }
  for (auto& [id, series] : dataset.series) {
    const auto [from, to] = dataset.endpoints.at(id);
    if (!event_affects(event, from, to)) continue;
    const auto ts = series.timestamps();
    if (!ts.empty() && (event.start < ts.front() || event.start > ts.back() + kSlotSeconds)) {
      throw InvalidArgument("event start outside dataset time range");
    }
    const auto range = series.range();
    std::vector<float> snr(series.snr().begin(), series.snr().end());
    bool changed = false;
    for (std::size_t t = 0; t < ts.size(); ++t) {
      if (ts[t] < event.start || ts[t] >= event.start + event.duration_s) continue;
      for (std::size_t i = 0; i < kChannels; ++i) {
        const double drop = event_drop_db(event, i, ts[t], transfer);
        if (drop == 0.0) continue;
        auto& v = snr[t * kChannels + i];
        v = quantize_db(std::clamp(static_cast<double>(v) - drop, static_cast<double>(range.min),
                                   static_cast<double>(range.max)));
        changed = true;
      }
    }
    if (!changed) continue;
    std::vector<std::uint8_t> tms;
    if (series.has_tonemaps()) {
      tms.resize(snr.size());
      for (std::size_t t = 0; t < ts.size(); ++t) {
        derive_tonemap(std::span<const float>(snr).subspan(t * kChannels, kChannels), range,
                       std::span<std::uint8_t>(tms).subspan(t * kChannels, kChannels));
      }
    }
    series = MeasurementSeries(series.connection_id(), series.profile(),
                               std::vector<Timestamp>(ts.begin(), ts.end()), std::move(snr),
                               std::move(tms),
                               std::vector<PhaseMeasurement>(series.phases().begin(),
                                                             series.phases().end()));
  }
  truth.events.push_back(event);
}

std::pair<Dataset, GroundTruth> synthesize_dataset(const GridTopology& topology,
                                                   const TransferModel& transfer,
                                                   const NoiseModel& noise, TimeRange range,
                                                   std::uint64_t seed,
                                                   const SynthesisOptions& options) {
  transfer.validate();
  noise.validate();
  if (range.end <= range.start) throw InvalidArgument("empty time range");
  if (range.start % kSlotSeconds != 0 || range.end % kSlotSeconds != 0) {
    throw InvalidArgument("time range must be aligned to the 15-minute grid");
  }
  for (const auto& e : options.events) {
    if (e.start < range.start || e.start + e.duration_s > range.end || e.duration_s < 0) {
      throw InvalidArgument("event outside the dataset time range");
    }
  }

  const auto db = db_range(options.profile);
  const std::size_t steps = range.steps();
  Dataset ds;
  ds.profile = options.profile;
  GroundTruth gt = ground_truth_of(topology);
  gt.events = options.events;

  std::vector<DirectedLink> links;
  for (const auto& l : topology.plc_links) {
    std::vector<int> reversed(l.path.rbegin(), l.path.rend());
    links.push_back({l.a, l.b, l.path});
    links.push_back({l.b, l.a, std::move(reversed)});
  }
  if (!options.only.empty()) {
    std::erase_if(links, [&](const DirectedLink& d) {
      return std::find(options.only.begin(), options.only.end(), std::pair{d.from, d.to}) ==
             options.only.end();
    });
  }

  std::vector<double> n(kChannels);
  for (const auto& link : links) {
    const auto id = connection_id(link.from, link.to);
    // Per-link stream: serial and parallel synthesis agree.
    Rng rng(derive_seed(seed, id));
    const auto headroom = path_headroom(topology, link.path, transfer);
    std::vector<const EventSpec*> events;
    for (const auto& e : options.events) {
      if (event_affects(e, link.from, link.to)) events.push_back(&e);
    }

    std::vector<Timestamp> ts(steps);
    std::vector<float> snr(steps * kChannels);
    std::vector<std::uint8_t> tms;
    if (options.with_tonemaps) tms.resize(steps * kChannels);
    for (std::size_t t = 0; t < steps; ++t) {
      const Timestamp now = range.start + static_cast<Timestamp>(t) * kSlotSeconds;
      ts[t] = now;
      std::fill(n.begin(), n.end(), 0.0);
      add_noise(n, now, link.to, noise, rng);
      float* row = snr.data() + t * kChannels;
      for (std::size_t i = 0; i < kChannels; ++i) {
        double v = headroom[i] - n[i];
        for (const auto* e : events) v -= event_drop_db(*e, i, now, transfer);
        row[i] = quantize_db(std::clamp(v, static_cast<double>(db.min), static_cast<double>(db.max)));
      }
      if (options.with_tonemaps) {
        derive_tonemap(std::span<const float>(row, kChannels), db,
                       std::span<std::uint8_t>(tms).subspan(t * kChannels, kChannels));
      }
    }
    ds.endpoints[id] = {link.from, link.to};
    ds.series.emplace(id, MeasurementSeries(id, options.profile, std::move(ts), std::move(snr),
                                            std::move(tms)));
  }
  return {std::move(ds), std::move(gt)};
}

}  // namespace plcgrid::sim
