#include "config.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "json.hpp"
#include "plcgrid/random.hpp"

namespace plcgrid::app {

namespace {

using json = nlohmann::json;

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> known) {
  std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError(join(path, key), "unknown key");
  }
}

const json& section(const json& root, const char* key) {
  static const json empty = json::object();
  auto it = root.find(key);
  if (it == root.end()) return empty;
  if (!it->is_object()) throw ConfigError(key, "expected an object");
  return *it;
}

template <class T>
T get(const json& obj, const char* key, const std::string& path, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(join(path, key), "wrong type");
  }
}

std::size_t get_count(const json& obj, const char* key, const std::string& path, std::size_t fallback,
                      std::size_t min_value = 1) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_number_integer() || it->get<long long>() < static_cast<long long>(min_value)) {
    throw ConfigError(join(path, key), "expected an integer >= " + std::to_string(min_value));
  }
  return it->get<std::size_t>();
}

double get_positive(const json& obj, const char* key, const std::string& path, double fallback) {
  const double v = get<double>(obj, key, path, fallback);
  if (!(v > 0.0)) throw ConfigError(join(path, key), "must be > 0");
  return v;
}

template <class F>
auto parse_enum(const json& obj, const char* key, const std::string& path, F parse,
                decltype(parse(std::string_view{})) fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_string()) throw ConfigError(join(path, key), "expected a string");
  try {
    return parse(it->get<std::string>());
  } catch (const Error& e) {
    throw ConfigError(join(path, key), e.what());
  }
}

EmbedConfig parse_embed(const json& j) {
  const std::string p = "embed";
  reject_unknown(j, p, {"sample_size", "perplexity", "iters", "exaggeration", "exaggeration_iters",
                        "learning_rate", "eps", "min_pts", "k"});
  EmbedConfig c;
  c.sample_size = get_count(j, "sample_size", p, c.sample_size, 10);
  auto& t = c.params.tsne;
  t.perplexity = get_positive(j, "perplexity", p, t.perplexity);
  t.iters = static_cast<int>(get_count(j, "iters", p, static_cast<std::size_t>(t.iters)));
  t.exaggeration = get_positive(j, "exaggeration", p, t.exaggeration);
  t.exaggeration_iters =
      static_cast<int>(get_count(j, "exaggeration_iters", p, static_cast<std::size_t>(t.exaggeration_iters), 0));
  if (j.contains("learning_rate")) t.learning_rate = get_positive(j, "learning_rate", p, 1.0);
  if (auto it = j.find("eps"); it != j.end() && !it->is_null()) {
    c.params.eps = get_positive(j, "eps", p, 1.0);
  }
  c.params.min_pts = get_count(j, "min_pts", p, c.params.min_pts);
  c.params.k = get_count(j, "k", p, c.params.k);
  if (3.0 * t.perplexity >= static_cast<double>(c.sample_size)) {
    throw ConfigError(join(p, "perplexity"), "must be below sample_size / 3");
  }
  return c;
}

AnomalyConfig parse_anomaly(const json& j) {
  const std::string p = "anomaly";
  reject_unknown(j, p, {"split_ratio", "window", "radius", "min_support", "threshold", "stride",
                        "metric", "links"});
  AnomalyConfig c;
  c.split_ratio = get<double>(j, "split_ratio", p, c.split_ratio);
  if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw ConfigError(p + ".split_ratio", "must be in (0, 1)");
  c.window = get_count(j, "window", p, c.window);
  // Radius and threshold scale with the window unless given.
  c.radius = static_cast<double>(c.window) / 10.0;
  c.threshold = static_cast<double>(c.window) / 4.0;
  c.radius = get<double>(j, "radius", p, c.radius);
  if (!(c.radius >= 0.0)) throw ConfigError(p + ".radius", "must be >= 0");
  c.min_support = get_count(j, "min_support", p, c.min_support, 2);
  if (auto it = j.find("threshold"); it != j.end() && it->is_string() && it->get<std::string>() == "inf") {
    c.threshold = std::numeric_limits<double>::infinity();
  } else {
    c.threshold = get<double>(j, "threshold", p, c.threshold);
  }
  c.stride = get_count(j, "stride", p, c.stride);
  c.metric = parse_enum(j, "metric", p, stateseq::parse_metric, c.metric);
  c.links = get<std::vector<std::string>>(j, "links", p, {});
  return c;
}

JointsConfig parse_joints(const json& j) {
  const std::string p = "joints";
  reject_unknown(j, p, {"channels", "kernel", "time_group", "contrastive_weight", "temperature",
                        "epochs", "batch", "learning_rate", "val_fraction", "err_tolerance",
                        "smooth_width", "peaks", "peak_separation"});
  JointsConfig c;
  auto& m = c.params;
  m.channels = get<std::vector<std::size_t>>(j, "channels", p, m.channels);
  if (m.channels.size() < 2) throw ConfigError(p + ".channels", "need a stem and at least one block");
  for (auto ch : m.channels) {
    if (ch == 0) throw ConfigError(p + ".channels", "channel counts must be >= 1");
  }
  m.kernel = get_count(j, "kernel", p, m.kernel);
  if (m.kernel % 2 == 0) throw ConfigError(p + ".kernel", "must be odd");
  m.time_group = get_count(j, "time_group", p, m.time_group);
  if (kSlotsPerDay % m.time_group != 0) throw ConfigError(p + ".time_group", "must divide 96");
  m.contrastive_weight = get<double>(j, "contrastive_weight", p, m.contrastive_weight);
  if (!(m.contrastive_weight >= 0.0)) throw ConfigError(p + ".contrastive_weight", "must be >= 0");
  m.temperature = get_positive(j, "temperature", p, m.temperature);
  m.epochs = get_count(j, "epochs", p, m.epochs);
  m.batch = get_count(j, "batch", p, m.batch);
  m.learning_rate = get_positive(j, "learning_rate", p, m.learning_rate);
  c.val_fraction = get<double>(j, "val_fraction", p, c.val_fraction);
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) throw ConfigError(p + ".val_fraction", "must be in (0, 1)");
  c.err_tolerance = get_positive(j, "err_tolerance", p, c.err_tolerance);
  c.smooth_width = get_count(j, "smooth_width", p, c.smooth_width);
  if (c.smooth_width % 2 == 0) throw ConfigError(p + ".smooth_width", "must be odd");
  c.peaks = get_count(j, "peaks", p, c.peaks);
  c.peak_separation = get_count(j, "peak_separation", p, c.peak_separation, 0);
  return c;
}

TopoConfig parse_topo(const json& j) {
  const std::string p = "topo";
  reject_unknown(j, p, {"hidden", "embedding", "filter_channels", "kernel", "dilation1", "dilation2",
                        "pretrain_epochs", "pretrain_batch", "pretrain_learning_rate",
                        "pretrain_samples", "epochs", "batch", "learning_rate", "freeze_encoder",
                        "train_grids", "grid_nodes", "grid_days", "train_timestamps",
                        "eval_timestamps", "max_neighborhood", "min_neighborhood", "threshold",
                        "symmetry"});
  TopoConfig c;
  auto& m = c.params;
  m.hidden = get_count(j, "hidden", p, m.hidden);
  m.embedding = get_count(j, "embedding", p, m.embedding);
  m.filter_channels = get_count(j, "filter_channels", p, m.filter_channels);
  m.kernel = get_count(j, "kernel", p, m.kernel);
  if (m.kernel % 2 == 0) throw ConfigError(p + ".kernel", "must be odd");
  m.dilation1 = get_count(j, "dilation1", p, m.dilation1);
  m.dilation2 = get_count(j, "dilation2", p, m.dilation2);
  m.pretrain_epochs = get_count(j, "pretrain_epochs", p, m.pretrain_epochs);
  m.pretrain_batch = get_count(j, "pretrain_batch", p, m.pretrain_batch);
  m.pretrain_learning_rate = get_positive(j, "pretrain_learning_rate", p, m.pretrain_learning_rate);
  m.pretrain_samples = get_count(j, "pretrain_samples", p, m.pretrain_samples, 0);
  m.epochs = get_count(j, "epochs", p, m.epochs);
  m.batch = get_count(j, "batch", p, m.batch);
  m.learning_rate = get_positive(j, "learning_rate", p, m.learning_rate);
  m.freeze_encoder = get<bool>(j, "freeze_encoder", p, m.freeze_encoder);
  c.train_grids = static_cast<int>(get_count(j, "train_grids", p, static_cast<std::size_t>(c.train_grids)));
  c.grid_nodes = static_cast<int>(get_count(j, "grid_nodes", p, static_cast<std::size_t>(c.grid_nodes), 4));
  c.grid_days = static_cast<int>(get_count(j, "grid_days", p, static_cast<std::size_t>(c.grid_days)));
  c.train_timestamps = get_count(j, "train_timestamps", p, c.train_timestamps);
  c.eval_timestamps = get_count(j, "eval_timestamps", p, c.eval_timestamps);
  c.max_neighborhood = get_count(j, "max_neighborhood", p, c.max_neighborhood, 2);
  c.min_neighborhood = get_count(j, "min_neighborhood", p, c.min_neighborhood, 2);
  if (c.max_neighborhood < c.min_neighborhood) {
    throw ConfigError(p + ".max_neighborhood", "must be >= min_neighborhood");
  }
  c.threshold = get<double>(j, "threshold", p, c.threshold);
  c.symmetry = parse_enum(j, "symmetry", p, topo::parse_symmetry_rule, c.symmetry);
  return c;
}

RadialConfig parse_radial(const json& j) {
  const std::string p = "radial";
  reject_unknown(j, p, {"period", "links", "palette"});
  RadialConfig c;
  c.period = parse_enum(j, "period", p, stateseq::parse_period, c.period);
  c.links = get<std::vector<std::string>>(j, "links", p, {});
  c.palette = get<std::vector<std::string>>(j, "palette", p, {});
  return c;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

RunConfig parse_run_config(std::string_view json_text, std::optional<std::uint64_t> seed_override,
                           const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("(root)", std::string("invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("(root)", "expected an object");
  reject_unknown(root, "", {"seed", "profile", "paths", "simulator", "embed", "anomaly", "joints",
                            "topo", "radial"});

  RunConfig c;
  if (seed_override) {
    c.seed = *seed_override;
  } else {
    auto it = root.find("seed");
    if (it == root.end()) throw ConfigError("seed", "missing required key");
    if (!it->is_number_unsigned()) throw ConfigError("seed", "expected a non-negative integer");
    c.seed = it->get<std::uint64_t>();
  }
  if (seed_override && root.contains("seed") && !root["seed"].is_number_unsigned()) {
    throw ConfigError("seed", "expected a non-negative integer");
  }

  const json& simj = section(root, "simulator");
  c.simulator = sim::simulation_config_from_json(simj.dump(), "simulator");
  c.explicit_topology_seed = simj.contains("topology_seed");
  if (auto it = root.find("profile"); it != root.end()) {
    Profile prof{};
    try {
      prof = parse_profile(it->is_string() ? it->get<std::string>() : std::string("?"));
    } catch (const Error& e) {
      throw ConfigError("profile", e.what());
    }
    if (simj.contains("profile") && prof != c.simulator.profile) {
      throw ConfigError("profile", "conflicts with simulator.profile");
    }
    c.simulator.profile = prof;
  }
  if (!c.explicit_topology_seed) c.simulator.topology.seed = topology_seed(c);

  c.embed = parse_embed(section(root, "embed"));
  c.anomaly = parse_anomaly(section(root, "anomaly"));
  c.joints = parse_joints(section(root, "joints"));
  c.topo = parse_topo(section(root, "topo"));
  c.radial = parse_radial(section(root, "radial"));

  const json& paths = section(root, "paths");
  reject_unknown(paths, "paths", {"out", "dataset"});
  if (paths.contains("out")) c.out = resolve(base_dir, get<std::string>(paths, "out", "paths", ""));
  if (paths.contains("dataset")) {
    c.dataset = resolve(base_dir, get<std::string>(paths, "dataset", "paths", ""));
    if (!std::filesystem::is_directory(*c.dataset)) {
      throw ConfigError("paths.dataset", "'" + c.dataset->string() + "' is not a directory");
    }
  }
  c.joints.params.seed = joints_seed(c);
  c.topo.params.seed = topo_seed(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  const std::string text = sim::read_file(path);
  return parse_run_config(text, seed_override, path.parent_path());
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["profile"] = std::string(to_string(c.simulator.profile));
  j["simulator"] = json::parse(sim::simulation_config_to_json(c.simulator));
  const auto& t = c.embed.params.tsne;
  j["embed"] = {{"sample_size", c.embed.sample_size},
                {"perplexity", t.perplexity},
                {"iters", t.iters},
                {"exaggeration", t.exaggeration},
                {"exaggeration_iters", t.exaggeration_iters},
                {"learning_rate", t.learning_rate},
                {"eps", c.embed.params.eps ? json(*c.embed.params.eps) : json(nullptr)},
                {"min_pts", c.embed.params.min_pts},
                {"k", c.embed.params.k}};
  const auto& a = c.anomaly;
  j["anomaly"] = {{"split_ratio", a.split_ratio}, {"window", a.window},
                  {"radius", a.radius},           {"min_support", a.min_support},
                  {"threshold", std::isinf(a.threshold) ? json("inf") : json(a.threshold)},
                  {"stride", a.stride},           {"metric", std::string(stateseq::to_string(a.metric))},
                  {"links", a.links}};
  const auto& jp = c.joints.params;
  j["joints"] = {{"channels", jp.channels},
                 {"kernel", jp.kernel},
                 {"time_group", jp.time_group},
                 {"contrastive_weight", jp.contrastive_weight},
                 {"temperature", jp.temperature},
                 {"epochs", jp.epochs},
                 {"batch", jp.batch},
                 {"learning_rate", jp.learning_rate},
                 {"val_fraction", c.joints.val_fraction},
                 {"err_tolerance", c.joints.err_tolerance},
                 {"smooth_width", c.joints.smooth_width},
                 {"peaks", c.joints.peaks},
                 {"peak_separation", c.joints.peak_separation}};
  const auto& tp = c.topo.params;
  const char* rule = c.topo.symmetry == topo::SymmetryRule::mean ? "mean"
                     : c.topo.symmetry == topo::SymmetryRule::min ? "min"
                                                                  : "max";
  j["topo"] = {{"hidden", tp.hidden},
               {"embedding", tp.embedding},
               {"filter_channels", tp.filter_channels},
               {"kernel", tp.kernel},
               {"dilation1", tp.dilation1},
               {"dilation2", tp.dilation2},
               {"pretrain_epochs", tp.pretrain_epochs},
               {"pretrain_batch", tp.pretrain_batch},
               {"pretrain_learning_rate", tp.pretrain_learning_rate},
               {"pretrain_samples", tp.pretrain_samples},
               {"epochs", tp.epochs},
               {"batch", tp.batch},
               {"learning_rate", tp.learning_rate},
               {"freeze_encoder", tp.freeze_encoder},
               {"train_grids", c.topo.train_grids},
               {"grid_nodes", c.topo.grid_nodes},
               {"grid_days", c.topo.grid_days},
               {"train_timestamps", c.topo.train_timestamps},
               {"eval_timestamps", c.topo.eval_timestamps},
               {"max_neighborhood", c.topo.max_neighborhood},
               {"min_neighborhood", c.topo.min_neighborhood},
               {"threshold", c.topo.threshold},
               {"symmetry", rule}};
  j["radial"] = {{"period", c.radial.period == stateseq::RadialPeriod::day ? "day" : "year"},
                 {"links", c.radial.links},
                 {"palette", c.radial.palette}};
  return j.dump(2);
}

std::uint64_t topology_seed(const RunConfig& c) {
  return c.explicit_topology_seed ? c.simulator.topology.seed : derive_seed(c.seed, "topology");
}
std::uint64_t synthesis_seed(const RunConfig& c) { return derive_seed(c.seed, "synthesis"); }
std::uint64_t states_seed(const RunConfig& c) { return derive_seed(c.seed, "states"); }
std::uint64_t joints_seed(const RunConfig& c) { return derive_seed(c.seed, "joints"); }
std::uint64_t topo_seed(const RunConfig& c) { return derive_seed(c.seed, "topo"); }

}  // namespace plcgrid::app
