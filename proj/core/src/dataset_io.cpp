#include "plcgrid/dataset_io.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace plcgrid::sim {

using nlohmann::json;

namespace {

template <typename T>
T get_field(const json& obj, const std::string& key, const std::string& path, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key, "wrong type");
  }
}

std::pair<double, double> get_pair(const json& obj, const std::string& key, const std::string& path,
                                   std::pair<double, double> fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number()) {
    throw ConfigError(path + "." + key, "expected [low, high]");
  }
  return {(*it)[0].get<double>(), (*it)[1].get<double>()};
}

const char* kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::substation:
      return "substation";
    case NodeKind::cabinet:
      return "cabinet";
    case NodeKind::household:
      return "household";
  }
  return "household";
}

NodeKind parse_kind(const std::string& s) {
  if (s == "substation") return NodeKind::substation;
  if (s == "cabinet") return NodeKind::cabinet;
  if (s == "household") return NodeKind::household;
  throw ParseError("unknown node kind '" + s + "'");
}

json event_to_json(const EventSpec& e) {
  json j;
  j["kind"] = std::string(to_string(e.kind));
  if (e.node) j["node"] = *e.node;
  if (e.link) j["link"] = {e.link->first, e.link->second};
  j["start"] = format_iso8601(e.start);
  j["end"] = format_iso8601(e.start + e.duration_s);
  j["duration_s"] = e.duration_s;
  j["severity_db"] = e.severity_db;
  if (e.kind == EventKind::transient_interferer) j["band"] = {e.band_lo, e.band_hi};
  return j;
}

EventSpec event_from_json(const json& j, const std::string& path) {
  EventSpec e;
  try {
    e.kind = parse_event_kind(get_field<std::string>(j, "kind", path, ""));
  } catch (const InvalidArgument& ex) {
    throw ConfigError(path + ".kind", ex.what());
  }
  if (j.contains("node")) e.node = get_field<int>(j, "node", path, 0);
  if (j.contains("link")) {
    auto [a, b] = get_pair(j, "link", path, {0, 0});
    e.link = std::pair{static_cast<int>(a), static_cast<int>(b)};
  }
  if (!e.node && !e.link) throw ConfigError(path, "event needs a 'node' or 'link' target");
  try {
    e.start = parse_iso8601(get_field<std::string>(j, "start", path, ""));
  } catch (const ParseError& ex) {
    throw ConfigError(path + ".start", ex.what());
  }
  if (j.contains("duration_s")) {
    e.duration_s = get_field<std::int64_t>(j, "duration_s", path, 0);
  } else {
    e.duration_s = static_cast<std::int64_t>(get_field<double>(j, "duration_hours", path, 0.0) * 3600);
  }
  e.severity_db = get_field<double>(j, "severity_db", path, 0.0);
  auto [lo, hi] = get_pair(j, "band", path, {e.band_lo, e.band_hi});
  e.band_lo = static_cast<int>(lo);
  e.band_hi = static_cast<int>(hi);
  return e;
}

}  // namespace

TransferModel SimulationConfig::transfer() const {
  auto m = TransferModel::linear(base_loss_low_db_per_km, base_loss_high_db_per_km);
  m.joint_notch_depth_db = joint_notch_depth_db;
  m.joint_notch_width_channels = joint_notch_width_channels;
  m.tx_headroom_db = tx_headroom_db;
  return m;
}

TimeRange SimulationConfig::time_range() const {
  return {start, start + static_cast<Timestamp>(days) * kDaySeconds};
}

SimulationConfig simulation_config_from_json(std::string_view json_text, const std::string& prefix) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(prefix, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError(prefix, "expected an object");
  SimulationConfig c;
  auto& t = c.topology;
  const auto& p = prefix;
  t.n_nodes = get_field<int>(j, "n_nodes", p, t.n_nodes);
  t.max_degree = get_field<int>(j, "max_degree", p, t.max_degree);
  auto jr = get_pair(j, "joint_count_range", p, {t.min_joints, t.max_joints});
  t.min_joints = static_cast<int>(jr.first);
  t.max_joints = static_cast<int>(jr.second);
  auto lr = get_pair(j, "length_range_m", p, {t.min_length_m, t.max_length_m});
  t.min_length_m = lr.first;
  t.max_length_m = lr.second;
  t.hop_radius = get_field<int>(j, "hop_radius", p, t.hop_radius);
  t.joint_centers = get_field<std::vector<int>>(j, "joint_centers", p, t.joint_centers);
  t.seed = get_field<std::uint64_t>(j, "topology_seed", p, t.seed);
  auto bl = get_pair(j, "base_loss_db_per_km", p,
                     {c.base_loss_low_db_per_km, c.base_loss_high_db_per_km});
  c.base_loss_low_db_per_km = bl.first;
  c.base_loss_high_db_per_km = bl.second;
  c.joint_notch_depth_db = get_field<double>(j, "joint_notch_depth_db", p, c.joint_notch_depth_db);
  c.joint_notch_width_channels =
      get_field<double>(j, "joint_notch_width_channels", p, c.joint_notch_width_channels);
  c.tx_headroom_db = get_field<double>(j, "tx_headroom_db", p, c.tx_headroom_db);
  c.days = get_field<int>(j, "days", p, c.days);
  if (c.days < 1) throw ConfigError(p + ".days", "must be >= 1");
  if (j.contains("start")) {
    try {
      c.start = parse_iso8601(get_field<std::string>(j, "start", p, ""));
    } catch (const ParseError& e) {
      throw ConfigError(p + ".start", e.what());
    }
    if (c.start % kDaySeconds != 0) throw ConfigError(p + ".start", "must be midnight UTC");
  }
  if (j.contains("profile")) {
    try {
      c.profile = parse_profile(get_field<std::string>(j, "profile", p, "fin2"));
    } catch (const InvalidArgument& e) {
      throw ConfigError(p + ".profile", e.what());
    }
  }
  if (auto it = j.find("noise"); it != j.end()) {
    const auto np = p + ".noise";
    if (!it->is_object()) throw ConfigError(np, "expected an object");
    auto& n = c.noise;
    n.daily_amp_db = get_field<double>(*it, "daily_amp_db", np, n.daily_amp_db);
    n.seasonal_amp_db = get_field<double>(*it, "seasonal_amp_db", np, n.seasonal_amp_db);
    n.awgn_sigma_db = get_field<double>(*it, "awgn_sigma_db", np, n.awgn_sigma_db);
    if (auto fi = it->find("interferers"); fi != it->end()) {
      if (!fi->is_array()) throw ConfigError(np + ".interferers", "expected an array");
      for (std::size_t k = 0; k < fi->size(); ++k) {
        const auto ip = np + ".interferers[" + std::to_string(k) + "]";
        const auto& f = (*fi)[k];
        Interferer itf;
        auto band = get_pair(f, "band", ip, {-1, -1});
        itf.band_lo = static_cast<int>(band.first);
        itf.band_hi = static_cast<int>(band.second);
        itf.depth_db = get_field<double>(f, "depth_db", ip, 0.0);
        auto hours = get_pair(f, "hours", ip, {0.0, 0.0});
        itf.start_hour = hours.first;
        itf.end_hour = hours.second;
        itf.nodes = get_field<std::vector<int>>(f, "nodes", ip, {});
        n.interferers.push_back(itf);
      }
    }
    try {
      n.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(np, e.what());
    }
  }
  if (auto it = j.find("events"); it != j.end()) {
    if (!it->is_array()) throw ConfigError(p + ".events", "expected an array");
    for (std::size_t k = 0; k < it->size(); ++k) {
      c.events.push_back(event_from_json((*it)[k], p + ".events[" + std::to_string(k) + "]"));
    }
  }
  try {
    c.transfer().validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(p, e.what());
  }
  return c;
}

std::string simulation_config_to_json(const SimulationConfig& c) {
  json j;
  const auto& t = c.topology;
  j["n_nodes"] = t.n_nodes;
  j["max_degree"] = t.max_degree;
  j["joint_count_range"] = {t.min_joints, t.max_joints};
  j["length_range_m"] = {t.min_length_m, t.max_length_m};
  j["hop_radius"] = t.hop_radius;
  j["joint_centers"] = t.joint_centers;
  j["topology_seed"] = t.seed;
  j["base_loss_db_per_km"] = {c.base_loss_low_db_per_km, c.base_loss_high_db_per_km};
  j["joint_notch_depth_db"] = c.joint_notch_depth_db;
  j["joint_notch_width_channels"] = c.joint_notch_width_channels;
  j["tx_headroom_db"] = c.tx_headroom_db;
  j["start"] = format_iso8601(c.start);
  j["days"] = c.days;
  j["profile"] = std::string(to_string(c.profile));
  json noise;
  noise["daily_amp_db"] = c.noise.daily_amp_db;
  noise["seasonal_amp_db"] = c.noise.seasonal_amp_db;
  noise["awgn_sigma_db"] = c.noise.awgn_sigma_db;
  noise["interferers"] = json::array();
  for (const auto& f : c.noise.interferers) {
    noise["interferers"].push_back({{"band", {f.band_lo, f.band_hi}},
                                    {"depth_db", f.depth_db},
                                    {"hours", {f.start_hour, f.end_hour}},
                                    {"nodes", f.nodes}});
  }
  j["noise"] = noise;
  j["events"] = json::array();
  for (const auto& e : c.events) j["events"].push_back(event_to_json(e));
  return j.dump(2);
}

std::string ground_truth_to_json(const GridTopology& topology, const GroundTruth& truth) {
  json j;
  j["nodes"] = json::array();
  for (const auto& n : topology.nodes) j["nodes"].push_back({{"id", n.id}, {"kind", kind_name(n.kind)}});
  j["sections"] = json::array();
  for (const auto& s : topology.sections) {
    j["sections"].push_back({{"id", s.id},
                             {"a", s.a},
                             {"b", s.b},
                             {"length_m", s.length_m},
                             {"joints", s.joints()},
                             {"joint_channels", s.joint_channels}});
  }
  j["links"] = json::array();
  for (std::size_t i = 0; i < topology.plc_links.size(); ++i) {
    const auto& l = topology.plc_links[i];
    j["links"].push_back({{"a", l.a},
                          {"b", l.b},
                          {"path", l.path},
                          {"direct", l.direct},
                          {"hops", static_cast<int>(l.path.size())}});
  }
  j["events"] = json::array();
  for (const auto& e : truth.events) j["events"].push_back(event_to_json(e));
  return j.dump(1);
}

std::pair<GridTopology, GroundTruth> ground_truth_from_json(std::string_view json_text) {
  GridTopology topo;
  GroundTruth gt;
  try {
    const auto j = json::parse(json_text);
    for (const auto& n : j.at("nodes")) {
      topo.nodes.push_back({n.at("id").get<int>(), parse_kind(n.at("kind").get<std::string>())});
    }
    for (const auto& s : j.at("sections")) {
      CableSection cs;
      cs.id = s.at("id").get<int>();
      cs.a = s.at("a").get<int>();
      cs.b = s.at("b").get<int>();
      cs.length_m = s.at("length_m").get<double>();
      cs.joint_channels = s.at("joint_channels").get<std::vector<std::vector<int>>>();
      topo.sections.push_back(std::move(cs));
    }
    for (const auto& l : j.at("links")) {
      topo.plc_links.push_back({l.at("a").get<int>(), l.at("b").get<int>(),
                                l.at("path").get<std::vector<int>>(), l.at("direct").get<bool>()});
    }
    gt = ground_truth_of(topo);
    for (const auto& e : j.at("events")) {
      EventSpec ev;
      ev.kind = parse_event_kind(e.at("kind").get<std::string>());
      if (e.contains("node")) ev.node = e["node"].get<int>();
      if (e.contains("link")) ev.link = std::pair{e["link"][0].get<int>(), e["link"][1].get<int>()};
      ev.start = parse_iso8601(e.at("start").get<std::string>());
      ev.duration_s = e.at("duration_s").get<std::int64_t>();
      ev.severity_db = e.at("severity_db").get<double>();
      if (e.contains("band")) {
        ev.band_lo = e["band"][0].get<int>();
        ev.band_hi = e["band"][1].get<int>();
      }
      gt.events.push_back(ev);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("ground truth: ") + e.what());
  }
  return {std::move(topo), std::move(gt)};
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                   const GridTopology& topology, const GroundTruth& truth) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "series", ec);
  if (ec) throw IoError("cannot create " + (dir / "series").string() + ": " + ec.message());

  json manifest;
  manifest["format"] = "plcgrid-dataset";
  manifest["version"] = 1;
  manifest["profile"] = std::string(to_string(dataset.profile));
  manifest["series"] = json::array();
  for (const auto& [id, series] : dataset.series) {
    const auto [from, to] = dataset.endpoints.at(id);
    const auto file = "series/" + id + ".csv";
    write_file(dir / file, serialize_measurement_file(series));
    json entry = {{"connection_id", id},
                  {"file", file},
                  {"from", from},
                  {"to", to},
                  {"rows", series.size()}};
    if (!series.empty()) {
      entry["first"] = format_iso8601(series.timestamps().front());
      entry["last"] = format_iso8601(series.timestamps().back());
    }
    manifest["series"].push_back(std::move(entry));
  }
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  write_file(dir / "ground_truth.json", ground_truth_to_json(topology, truth) + "\n");
}

StoredDataset read_dataset(const std::filesystem::path& dir) {
  StoredDataset out;
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("manifest.json: ") + e.what());
  }
  try {
    out.dataset.profile = parse_profile(manifest.at("profile").get<std::string>());
    for (const auto& entry : manifest.at("series")) {
      const auto id = entry.at("connection_id").get<std::string>();
      auto series = parse_measurement_file(read_file(dir / entry.at("file").get<std::string>()),
                                           out.dataset.profile, id);
      out.dataset.endpoints[id] = {entry.at("from").get<int>(), entry.at("to").get<int>()};
      out.dataset.series.emplace(id, std::move(series));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest.json: ") + e.what());
  }
  auto [topo, gt] = ground_truth_from_json(read_file(dir / "ground_truth.json"));
  out.topology = std::move(topo);
  out.truth = std::move(gt);
  return out;
}

}  // namespace plcgrid::sim
