#include "pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "plcgrid/random.hpp"

namespace plcgrid::app {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw sim::IoError("cannot create " + dir.string() + ": " + ec.message());
}

/// Writes a stage report. Only `wall_time_s` varies between identical runs.
std::string write_report(const RunConfig& config, std::string_view stage, json metrics,
                         std::vector<std::string> artifacts, double seconds) {
  std::sort(artifacts.begin(), artifacts.end());
  json report;
  report["stage"] = std::string(stage);
  report["seed"] = config.seed;
  report["config"] = json::parse(run_config_to_json(config));
  report["metrics"] = std::move(metrics);
  report["artifacts"] = artifacts;
  report["wall_time_s"] = seconds;
  const auto text = report.dump(2) + "\n";
  sim::write_file(config.stage_dir(stage) / "report.json", text);
  return text;
}

void require_dataset(const RunConfig& config, std::string_view stage) {
  const auto dir = config.dataset_dir();
  if (!fs::exists(dir / "manifest.json") || !fs::exists(dir / "ground_truth.json")) {
    throw DependencyError("simulate", "stage '" + std::string(stage) + "' needs the dataset from `simulate` (missing " +
                                          (dir / "manifest.json").string() + ")");
  }
}

sim::StoredDataset load_dataset(const RunConfig& config, std::string_view stage) {
  require_dataset(config, stage);
  spdlog::info("reading dataset {}", config.dataset_dir().string());
  return sim::read_dataset(config.dataset_dir());
}

fs::path states_dir(const RunConfig& config) { return config.stage_dir("states"); }

void require_states(const RunConfig& config, std::string_view stage) {
  if (!fs::exists(states_dir(config) / "state_model.json") || !fs::is_directory(states_dir(config) / "sequences")) {
    throw DependencyError("states", "stage '" + std::string(stage) + "' needs the output of `pipeline states` (missing " +
                                        (states_dir(config) / "state_model.json").string() + ")");
  }
}

/// Sequence ids under the states output, or the configured subset.
std::vector<std::string> sequence_ids(const RunConfig& config, const std::vector<std::string>& wanted) {
  const auto dir = states_dir(config) / "sequences";
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".csv") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (wanted.empty()) return ids;
  for (const auto& w : wanted) {
    if (!std::binary_search(ids.begin(), ids.end(), w)) {
      throw ConfigError("links", "no state sequence for connection '" + w + "'");
    }
  }
  return wanted;
}

stateseq::StateSequence load_sequence(const RunConfig& config, const std::string& id) {
  const auto path = states_dir(config) / "sequences" / (id + ".csv");
  return stateseq::state_sequence_from_csv(sim::read_file(path), id);
}

// ---- states -----------------------------------------------------------------

std::string stage_states(const RunConfig& config) {
  Stopwatch clock;
  const auto stored = load_dataset(config, "states");
  const auto dir = states_dir(config);
  ensure_dir(dir / "sequences");

  spdlog::info("fitting connection states on {} spectra", config.embed.sample_size);
  const auto model =
      embed::fit_connection_states(stored.dataset, config.embed.sample_size, config.embed.params, states_seed(config));
  sim::write_file(dir / "state_model.json", embed::state_model_to_json(model) + "\n");

  std::vector<std::string> artifacts = {"state_model.json"};
  std::map<int, std::size_t> occupancy;
  for (const auto& [id, series] : stored.dataset.series) {
    const auto seq = stateseq::to_state_sequence(series, model);
    for (int s : seq.states) ++occupancy[s];
    sim::write_file(dir / "sequences" / (id + ".csv"), stateseq::state_sequence_to_csv(seq));
    artifacts.push_back("sequences/" + id + ".csv");
  }
  const auto noise = static_cast<double>(std::count(model.reference_labels.begin(), model.reference_labels.end(), -1));
  json occ = json::object();
  for (const auto& [s, n] : occupancy) occ[std::to_string(s)] = n;
  json metrics = {{"states", model.cluster_count()},
                  {"eps", model.eps},
                  {"references", model.size()},
                  {"noise_fraction", model.size() ? noise / static_cast<double>(model.size()) : 0.0},
                  {"links", stored.dataset.series.size()},
                  {"occupancy", occ}};
  spdlog::info("{} states (eps {:.3f})", model.cluster_count(), model.eps);
  return write_report(config, "states", std::move(metrics), std::move(artifacts), clock.seconds());
}

// ---- anomaly ----------------------------------------------------------------

std::string stage_anomaly(const RunConfig& config) {
  Stopwatch clock;
  require_states(config, "anomaly");
  const auto& ac = config.anomaly;
  const auto model = embed::state_model_from_json(sim::read_file(states_dir(config) / "state_model.json"));
  const stateseq::SymbolDistance dist = ac.metric == stateseq::Metric::mismatch01
                                            ? stateseq::SymbolDistance{}
                                            : stateseq::SymbolDistance(ac.metric, model.centroids);

  // Ground truth is optional: it only adds event-window scores to the report.
  std::vector<sim::EventSpec> events;
  const auto gt_path = config.dataset_dir() / "ground_truth.json";
  if (fs::exists(gt_path)) events = sim::ground_truth_from_json(sim::read_file(gt_path)).second.events;

  const auto dir = config.stage_dir("anomaly");
  ensure_dir(dir);
  std::vector<std::string> artifacts;
  json links = json::array();
  EventWindowStats total;
  std::size_t intervals = 0, flagged = 0, windows = 0;
  for (const auto& id : sequence_ids(config, ac.links)) {
    const auto seq = load_sequence(config, id);
    json entry = {{"connection_id", id}};
    try {
      auto [train, eval] = stateseq::split_sequence(seq, ac.split_ratio);
      const auto templates = stateseq::mine_templates(train, ac.window, ac.radius, ac.min_support, dist);
      const auto report = stateseq::score_anomalies(eval, templates, ac.threshold, ac.stride, dist);
      sim::write_file(dir / (id + ".json"), stateseq::anomaly_report_to_json(report) + "\n");
      artifacts.push_back(id + ".json");
      const auto f = static_cast<std::size_t>(
          std::count_if(report.windows.begin(), report.windows.end(), [](const auto& w) { return w.flagged; }));
      entry["templates"] = templates.templates.size();
      entry["coverage"] = templates.coverage();
      entry["windows"] = report.windows.size();
      entry["flagged"] = f;
      entry["intervals"] = report.intervals.size();
      intervals += report.intervals.size();
      flagged += f;
      windows += report.windows.size();
      if (!events.empty()) {
        const auto [from, to] = parse_connection_id(id);
        total.add(score_event_windows(report, events, from, to));
      }
      spdlog::info("{}: {} templates, {}/{} windows flagged", id, templates.templates.size(), f,
                   report.windows.size());
    } catch (const InvalidArgument& e) {
      entry["skipped"] = e.what();
      spdlog::warn("{}: skipped ({})", id, e.what());
    }
    links.push_back(std::move(entry));
  }
  json metrics = {{"links", links}, {"windows", windows}, {"flagged_windows", flagged}, {"intervals", intervals}};
  if (!events.empty()) {
    metrics["event_windows"] = total.event_windows;
    metrics["normal_windows"] = total.normal_windows;
    metrics["window_recall"] = total.event_windows ? json(total.recall()) : json(nullptr);
    metrics["false_positive_rate"] = total.normal_windows ? json(total.false_positive_rate()) : json(nullptr);
  }
  return write_report(config, "anomaly", std::move(metrics), std::move(artifacts), clock.seconds());
}

// ---- joints -----------------------------------------------------------------

std::string stage_joints(const RunConfig& config) {
  Stopwatch clock;
  const auto stored = load_dataset(config, "joints");
  const auto& jc = config.joints;
  const auto data = joints::build_joint_dataset(stored.dataset, stored.topology, stored.truth, jc.val_fraction,
                                                derive_seed(config.seed, "joint-split"));
  spdlog::info("joints: {} train / {} validation windows", data.train.size(), data.val.size());
  auto model = joints::train_joint_regressor(data.train, jc.params);
  const auto eval = joints::evaluate_joints(model, data.val);
  spdlog::info("joints: validation MAE {:.3f}", eval.mae);

  const auto dir = config.stage_dir("joints");
  ensure_dir(dir);
  sim::write_file(dir / "model.plcgnn", joints::save_joint_model(model));
  sim::write_file(dir / "evaluation.json", joints::joint_evaluation_to_json(eval) + "\n");
  std::vector<std::string> artifacts = {"model.plcgnn", "evaluation.json"};

  json metrics = {{"val_mae", eval.mae},
                  {"val_rounded_accuracy", eval.rounded_accuracy},
                  {"train_windows", data.train.size()},
                  {"val_windows", data.val.size()},
                  {"train_sections", data.train_sections},
                  {"val_sections", data.val_sections},
                  {"loss_curve", model.loss_curve}};
  try {
    const auto profile = joints::channel_sensitivity(model, data.val, jc.err_tolerance);
    const auto smooth = joints::smooth_profile(profile.per_channel, jc.smooth_width);
    const auto peaks = joints::top_peaks(smooth, jc.peaks, jc.peak_separation);
    sim::write_file(dir / "sensitivity.csv", joints::sensitivity_to_csv(profile));
    artifacts.push_back("sensitivity.csv");
    std::set<int> planted;
    for (const auto& [sid, js] : stored.truth.section_joint_channels) {
      for (const auto& chans : js) planted.insert(chans.begin(), chans.end());
    }
    json errors = json::object();
    for (int c : planted) {
      int best = static_cast<int>(kChannels);
      for (int p : peaks) best = std::min(best, std::abs(p - c));
      errors[std::to_string(c)] = best;
    }
    metrics["sensitivity_windows"] = profile.n_windows;
    metrics["peaks"] = peaks;
    metrics["planted_channels"] = planted;
    metrics["peak_distance"] = errors;
  } catch (const InvalidArgument& e) {
    metrics["sensitivity_skipped"] = e.what();
    spdlog::warn("joints: sensitivity skipped ({})", e.what());
  }
  return write_report(config, "joints", std::move(metrics), std::move(artifacts), clock.seconds());
}

// ---- topo -------------------------------------------------------------------

json score_json(const topo::TopologyScore& s) {
  return {{"entrywise_acc", s.entrywise_acc},
          {"exact_matrix_acc", s.exact_matrix_acc},
          {"precision", s.precision},
          {"recall", s.recall},
          {"entries", s.entries},
          {"matrices", s.matrices}};
}

std::string stage_topo(const RunConfig& config) {
  Stopwatch clock;
  const auto stored = load_dataset(config, "topo");
  const auto& tc = config.topo;

  // Training grids are drawn from the same simulator settings as the dataset.
  std::vector<topo::TopoSample> train;
  const auto grid_seed = derive_seed(config.seed, "topo-grids");
  for (int g = 0; g < tc.train_grids; ++g) {
    auto s = topo_grid_samples(config.simulator, tc.grid_nodes, tc.grid_days, tc.train_timestamps,
                               derive_seed(grid_seed, static_cast<std::uint64_t>(g)), tc.max_neighborhood,
                               tc.min_neighborhood);
    train.insert(train.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  if (train.empty()) throw InvalidArgument("topo: no training neighbourhoods; lower topo.min_neighborhood");
  spdlog::info("topo: {} training samples from {} grids", train.size(), tc.train_grids);

  const auto spectra = topo::edge_spectra(train);
  auto encoder = topo::pretrain_encoder(spectra, tc.params);
  auto model = topo::train_topology_filter(train, encoder, tc.params);

  // Evaluation instants spread evenly over the dataset.
  std::set<Timestamp> all_ts;
  for (const auto& [id, s] : stored.dataset.series) all_ts.insert(s.timestamps().begin(), s.timestamps().end());
  if (all_ts.empty()) throw InvalidArgument("topo: the dataset holds no measurements");
  const std::vector<Timestamp> grid(all_ts.begin(), all_ts.end());
  std::vector<Timestamp> eval_ts;
  for (std::size_t k = 0; k < tc.eval_timestamps; ++k) {
    const auto t = grid[(k * grid.size()) / tc.eval_timestamps];
    if (eval_ts.empty() || eval_ts.back() != t) eval_ts.push_back(t);
  }
  const auto nbs = topo::local_neighborhoods(stored.topology, tc.max_neighborhood, tc.min_neighborhood);
  const auto samples = topo::build_topo_samples(stored.dataset, stored.topology, nbs, eval_ts);
  if (samples.empty()) throw InvalidArgument("topo: no neighbourhood of the dataset qualifies; lower topo.min_neighborhood");

  std::vector<topo::TopologyPrediction> raw, sym;
  std::vector<std::vector<std::uint8_t>> truth;
  for (const auto& s : samples) {
    raw.push_back(topo::predict_topology(model, s.tensor, tc.threshold));
    sym.push_back(topo::symmetrize(raw.back(), tc.symmetry));
    truth.push_back(s.labels);
  }
  const auto votes = topo::overlap_votes(sym, tc.threshold);
  const auto post = topo::apply_votes(sym, votes);
  const auto raw_score = topo::eval_topology(raw, truth);
  const auto post_score = topo::eval_topology(post, truth);

  json sweep = json::array();
  for (int k = 1; k <= 9; ++k) {
    const double th = k / 10.0;
    std::vector<topo::TopologyPrediction> re;
    for (const auto& p : raw) re.push_back(topo::rethreshold(p, th));
    const auto s = topo::eval_topology(re, truth);
    sweep.push_back({{"threshold", th}, {"entrywise_acc", s.entrywise_acc}, {"exact_matrix_acc", s.exact_matrix_acc}});
  }

  const auto dir = config.stage_dir("topo");
  ensure_dir(dir);
  sim::write_file(dir / "model.plcgnn", topo::save_topo_model(model));
  sim::write_file(dir / "edges.json", topo::votes_to_json(votes) + "\n");
  sim::write_file(dir / "topology.dot", topo::votes_to_dot(votes));
  json metrics = score_json(post_score);
  metrics["raw"] = score_json(raw_score);
  metrics["calibration"] = sweep;
  metrics["train_samples"] = train.size();
  metrics["eval_samples"] = samples.size();
  metrics["neighborhoods"] = nbs.size();
  metrics["pretrain_mse"] = {{"initial", encoder.initial_mse}, {"final", encoder.final_mse}};
  metrics["loss_curve"] = model.loss_curve;
  spdlog::info("topo: entrywise {:.3f}, exact {:.3f} (raw {:.3f} / {:.3f})", post_score.entrywise_acc,
               post_score.exact_matrix_acc, raw_score.entrywise_acc, raw_score.exact_matrix_acc);
  return write_report(config, "topo", std::move(metrics), {"model.plcgnn", "edges.json", "topology.dot"},
                      clock.seconds());
}

// ---- radial -----------------------------------------------------------------

std::string stage_radial(const RunConfig& config) {
  Stopwatch clock;
  require_states(config, "radial");
  const auto dir = config.stage_dir("radial");
  ensure_dir(dir);
  std::vector<std::string> artifacts;
  json links = json::array();
  for (const auto& id : sequence_ids(config, config.radial.links)) {
    const auto seq = load_sequence(config, id);
    if (seq.size() == 0) {
      links.push_back({{"connection_id", id}, {"skipped", "empty sequence"}});
      continue;
    }
    const auto svg = stateseq::render_radial(seq, config.radial.period, config.radial.palette);
    sim::write_file(dir / (id + ".svg"), svg);
    artifacts.push_back(id + ".svg");
    links.push_back({{"connection_id", id}, {"slots", seq.size()}});
  }
  json metrics = {{"links", links},
                  {"period", config.radial.period == stateseq::RadialPeriod::day ? "day" : "year"}};
  return write_report(config, "radial", std::move(metrics), std::move(artifacts), clock.seconds());
}

}  // namespace

std::vector<topo::TopoSample> topo_grid_samples(const sim::SimulationConfig& base, int nodes, int days,
                                                std::size_t timestamps, std::uint64_t seed,
                                                std::size_t max_neighborhood, std::size_t min_neighborhood) {
  auto tcfg = base.topology;
  tcfg.n_nodes = nodes;
  tcfg.seed = seed;
  auto [topology, truth] = sim::generate_topology(tcfg);
  // Interferers name nodes of the configured grid, so they are left out here.
  sim::NoiseModel noise = base.noise;
  noise.interferers.clear();
  sim::SynthesisOptions opt;
  opt.profile = base.profile;
  opt.with_tonemaps = false;
  const sim::TimeRange range{base.start, base.start + days * kDaySeconds};
  auto [ds, gt] = sim::synthesize_dataset(topology, base.transfer(), noise, range, derive_seed(seed, "synthesis"), opt);
  std::vector<Timestamp> ts;
  const std::size_t steps = range.steps();
  for (std::size_t k = 0; k < timestamps; ++k) {
    ts.push_back(range.start + static_cast<Timestamp>((k * steps) / timestamps) * kSlotSeconds);
  }
  const auto nbs = topo::local_neighborhoods(topology, max_neighborhood, min_neighborhood);
  return topo::build_topo_samples(ds, topology, nbs, ts);
}

SimulateSummary cmd_simulate(const RunConfig& config) {
  const auto& sc = config.simulator;
  auto [topology, truth] = sim::generate_topology(sc.topology);
  sim::SynthesisOptions opt;
  opt.profile = sc.profile;
  opt.events = sc.events;
  // Tone maps are derived from SNR on read; the files carry SNR only.
  opt.with_tonemaps = false;
  spdlog::info("simulating {} nodes over {} days", sc.topology.n_nodes, sc.days);
  auto [dataset, gt] = sim::synthesize_dataset(topology, sc.transfer(), sc.noise, sc.time_range(),
                                               synthesis_seed(config), opt);
  SimulateSummary summary;
  summary.dir = config.dataset_dir();
  summary.links = dataset.series.size();
  summary.timesteps = sc.time_range().steps();
  summary.events = gt.events.size();
  sim::write_dataset(summary.dir, dataset, topology, gt);
  return summary;
}

std::string cmd_pipeline(const RunConfig& config, std::string_view stage) {
  if (stage == "states") return stage_states(config);
  if (stage == "anomaly") return stage_anomaly(config);
  if (stage == "joints") return stage_joints(config);
  if (stage == "topo") return stage_topo(config);
  if (stage == "radial") return stage_radial(config);
  throw ConfigError("stage", "unknown stage '" + std::string(stage) + "'");
}

std::pair<int, int> parse_connection_id(std::string_view id) {
  auto number = [&](std::string_view part) {
    if (part.size() < 2 || part[0] != 'n') throw InvalidArgument("bad connection id '" + std::string(id) + "'");
    int v = 0;
    auto [ptr, ec] = std::from_chars(part.data() + 1, part.data() + part.size(), v);
    if (ec != std::errc{} || ptr != part.data() + part.size()) {
      throw InvalidArgument("bad connection id '" + std::string(id) + "'");
    }
    return v;
  };
  const auto dash = id.find('-');
  if (dash == std::string_view::npos) throw InvalidArgument("bad connection id '" + std::string(id) + "'");
  return {number(id.substr(0, dash)), number(id.substr(dash + 1))};
}

void EventWindowStats::add(const EventWindowStats& o) {
  event_windows += o.event_windows;
  event_flagged += o.event_flagged;
  normal_windows += o.normal_windows;
  normal_flagged += o.normal_flagged;
}

double EventWindowStats::recall() const {
  return event_windows ? static_cast<double>(event_flagged) / static_cast<double>(event_windows) : 1.0;
}

double EventWindowStats::false_positive_rate() const {
  return normal_windows ? static_cast<double>(normal_flagged) / static_cast<double>(normal_windows) : 0.0;
}

EventWindowStats score_event_windows(const stateseq::AnomalyReport& report, std::span<const sim::EventSpec> events,
                                     int from, int to) {
  EventWindowStats s;
  for (const auto& w : report.windows) {
    std::int64_t overlap = 0;
    bool touched = false;
    for (const auto& e : events) {
      if (!sim::event_affects(e, from, to)) continue;
      const auto o = std::min(w.end_ts, e.start + e.duration_s) - std::max(w.start_ts, e.start);
      if (o > 0) {
        touched = true;
        overlap = std::max(overlap, o);
      }
    }
    if (!touched) {
      ++s.normal_windows;
      s.normal_flagged += w.flagged;
    } else if (2 * overlap >= w.end_ts - w.start_ts) {
      ++s.event_windows;
      s.event_flagged += w.flagged;
    }
  }
  return s;
}

std::string cmd_render_radial(const std::optional<RunConfig>& config, const std::string& link,
                              const std::optional<fs::path>& sequence_file, stateseq::RadialPeriod period) {
  stateseq::StateSequence seq;
  std::vector<std::string> palette;
  if (sequence_file) {
    seq = stateseq::state_sequence_from_csv(sim::read_file(*sequence_file), sequence_file->stem().string());
  } else {
    if (!config) throw ConfigError("config", "needed unless --sequence is given");
    require_states(*config, "render radial");
    if (link.empty()) throw ConfigError("link", "name the connection to render");
    const auto path = states_dir(*config) / "sequences" / (link + ".csv");
    if (!fs::exists(path)) throw ConfigError("link", "no state sequence for connection '" + link + "'");
    seq = load_sequence(*config, link);
  }
  if (config) palette = config->radial.palette;
  return stateseq::render_radial(seq, period, palette);
}

}  // namespace plcgrid::app
