#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "json.hpp"
#include "plcgrid/error.hpp"
#include "plcgrid/stateseq.hpp"

namespace plcgrid::stateseq {

StateSequence to_state_sequence(const MeasurementSeries& series, const embed::StateModel& model) {
  StateSequence seq;
  seq.connection_id = series.connection_id();
  seq.timestamps.assign(series.timestamps().begin(), series.timestamps().end());
  if (series.empty()) return seq;
  seq.states = embed::knn_assign_all(model, series.snr());
  return seq;
}

std::pair<StateSequence, StateSequence> split_sequence(const StateSequence& seq, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("split ratio must be in (0, 1)");
  if (seq.size() < 4) throw InvalidArgument("sequence too short to split (need >= 4 symbols)");
  const auto cut = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(seq.size())));
  auto slice = [&](std::size_t lo, std::size_t hi) {
    StateSequence s;
    s.connection_id = seq.connection_id;
    s.timestamps.assign(seq.timestamps.begin() + static_cast<std::ptrdiff_t>(lo),
                        seq.timestamps.begin() + static_cast<std::ptrdiff_t>(hi));
    s.states.assign(seq.states.begin() + static_cast<std::ptrdiff_t>(lo),
                    seq.states.begin() + static_cast<std::ptrdiff_t>(hi));
    return s;
  };
  return {slice(0, cut), slice(cut, seq.size())};
}

TemplateSet mine_templates(const StateSequence& train, std::size_t window, double radius,
                           std::size_t min_support, const SymbolDistance& dist) {
  if (window < 1) throw InvalidArgument("template window must be >= 1");
  if (train.size() < window) throw InvalidArgument("training sequence shorter than window");
  if (min_support < 2) throw InvalidArgument("min_support must be >= 2");
  if (!(radius >= 0.0)) throw InvalidArgument("radius must be >= 0");

  const std::size_t total = train.size() - window + 1;
  std::span<const int> states(train.states);

  // Identical windows share one DTW row; `members` keeps their multiplicity.
  std::map<std::vector<int>, std::size_t> distinct_index;
  std::vector<std::vector<int>> distinct;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t s = 0; s < total; ++s) {
    std::vector<int> w(states.begin() + static_cast<std::ptrdiff_t>(s),
                       states.begin() + static_cast<std::ptrdiff_t>(s + window));
    auto [it, inserted] = distinct_index.emplace(std::move(w), distinct.size());
    if (inserted) {
      distinct.push_back(it->first);
      members.emplace_back();
    }
    members[it->second].push_back(s);
  }

  // Exact shortcuts before the DP: a run-level alignment and the diagonal are
  // both admissible paths, so their costs bound DTW from above.
  std::vector<RunLengths> runs;
  runs.reserve(distinct.size());
  for (const auto& w : distinct) runs.push_back(run_lengths(w));
  auto close = [&](std::size_t i, std::size_t j) {
    if (run_path_cost(runs[i], runs[j], dist) <= radius) return true;
    const auto& a = distinct[i];
    const auto& b = distinct[j];
    double diag = 0.0;
    for (std::size_t k = 0; k < a.size() && diag <= radius; ++k) diag += dist(a[k], b[k]);
    return diag <= radius || dtw_cost(a, b, dist, radius) <= radius;
  };
  const std::size_t d = distinct.size();
  std::vector<std::vector<std::size_t>> within(d);
  for (std::size_t i = 0; i < d; ++i) {
    within[i].push_back(i);
    for (std::size_t j = i + 1; j < d; ++j) {
      if (close(i, j)) {
        within[i].push_back(j);
        within[j].push_back(i);
      }
    }
  }
  std::vector<std::size_t> matches(d, 0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j : within[i]) matches[i] += members[j].size();
    matches[i] -= 1;  // "other" windows
  }

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return matches[a] > matches[b]; });

  TemplateSet out;
  out.window = window;
  out.radius = radius;
  out.metric = dist.metric();
  out.total_windows = total;
  std::vector<bool> covered(d, false);
  for (std::size_t c : order) {
    if (covered[c] || matches[c] < min_support) continue;
    out.templates.push_back(distinct[c]);
    out.origin.push_back(members[c].front());
    std::size_t support = 0;
    for (std::size_t j : within[c]) {
      support += members[j].size();
      if (!covered[j]) {
        covered[j] = true;
        out.covered_windows += members[j].size();
      }
    }
    out.support.push_back(support);
  }
  if (out.templates.empty()) {
    throw InvalidArgument("no window reaches min_support " + std::to_string(min_support) +
                          " within DTW radius " + std::to_string(radius) +
                          "; try a larger radius");
  }
  return out;
}

AnomalyReport score_anomalies(const StateSequence& eval, const TemplateSet& templates,
                              double threshold, std::size_t stride, const SymbolDistance& dist) {
  if (templates.templates.empty()) throw InvalidArgument("score_anomalies: no templates");
  if (stride < 1) throw InvalidArgument("stride must be >= 1");
  AnomalyReport r;
  r.connection_id = eval.connection_id;
  r.threshold = threshold;
  r.stride = stride;
  if (eval.size() == 0) return r;

  const std::size_t len = std::min(templates.window, eval.size());
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + len <= eval.size(); s += stride) starts.push_back(s);
  if (starts.back() + len < eval.size()) starts.push_back(eval.size() - len);

  std::span<const int> states(eval.states);
  for (std::size_t s : starts) {
    auto w = states.subspan(s, len);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : templates.templates) {
      best = std::min(best, dtw_cost(w, t, dist, best));
    }
    WindowScore ws;
    ws.start = s;
    ws.start_ts = eval.timestamps[s];
    ws.end_ts = eval.timestamps[s + len - 1] + kSlotSeconds;
    ws.score = best;
    ws.flagged = best > threshold;
    r.windows.push_back(ws);
  }

  for (const auto& w : r.windows) {
    if (!w.flagged) continue;
    if (!r.intervals.empty() && w.start_ts <= r.intervals.back().end) {
      auto& iv = r.intervals.back();
      iv.end = std::max(iv.end, w.end_ts);
      iv.max_score = std::max(iv.max_score, w.score);
      ++iv.windows;
    } else {
      r.intervals.push_back({w.start_ts, w.end_ts, w.score, 1});
    }
  }
  return r;
}

std::string anomaly_report_to_json(const AnomalyReport& report) {
  nlohmann::json j;
  j["connection_id"] = report.connection_id;
  j["threshold"] = std::isinf(report.threshold) ? nlohmann::json("inf") : nlohmann::json(report.threshold);
  j["stride"] = report.stride;
  j["intervals"] = nlohmann::json::array();
  for (const auto& iv : report.intervals) {
    j["intervals"].push_back({{"start", format_iso8601(iv.start)},
                              {"end", format_iso8601(iv.end)},
                              {"max_score", iv.max_score},
                              {"windows", iv.windows}});
  }
  j["windows"] = nlohmann::json::array();
  for (const auto& w : report.windows) {
    j["windows"].push_back({{"start", format_iso8601(w.start_ts)},
                            {"score", w.score},
                            {"flagged", w.flagged}});
  }
  return j.dump(2);
}

}  // namespace plcgrid::stateseq
