#include <doctest.h>

#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "helpers.hpp"
#include "plcgrid/error.hpp"
#include "plcgrid/stateseq.hpp"

using namespace plcgrid;
using namespace plcgrid::stateseq;

namespace {

StateSequence make_seq(std::vector<int> states) {
  StateSequence s;
  s.connection_id = "n000-n001";
  s.timestamps = plcgrid::testing::slots(states.size());
  s.states = std::move(states);
  return s;
}

double brute_dtw(const std::vector<int>& a, const std::vector<int>& b, const SymbolDistance& d) {
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> go = [&](std::size_t i, std::size_t j, double c) {
    c += d(a[i], b[j]);
    if (i + 1 == a.size() && j + 1 == b.size()) {
      best = std::min(best, c);
      return;
    }
    if (i + 1 < a.size()) go(i + 1, j, c);
    if (j + 1 < b.size()) go(i, j + 1, c);
    if (i + 1 < a.size() && j + 1 < b.size()) go(i + 1, j + 1, c);
  };
  go(0, 0, 0.0);
  return best;
}

/// Every sequence over {0, 1, 2} of length 1..max_len.
std::vector<std::vector<int>> all_sequences(std::size_t max_len) {
  std::vector<std::vector<int>> out;
  std::vector<std::vector<int>> layer = {{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& s : layer) {
      for (int c = 0; c < 3; ++c) {
        auto t = s;
        t.push_back(c);
        next.push_back(t);
      }
    }
    out.insert(out.end(), next.begin(), next.end());
    layer = std::move(next);
  }
  return out;
}

const std::map<int, std::vector<double>> kCentroids = {{0, {0.0, 0.0}}, {1, {3.0, 4.0}}, {2, {6.0, 8.0}}};

}  // namespace

TEST_CASE("split: floor rule and bounds") {
  const auto s = make_seq(std::vector<int>(100, 1));
  const auto [train, eval] = split_sequence(s);
  CHECK(train.size() == 75);
  CHECK(eval.size() == 25);
  CHECK(eval.timestamps.front() > train.timestamps.back());
  const auto [t4, e4] = split_sequence(make_seq({1, 2, 3, 4}));
  CHECK(t4.states == std::vector<int>{1, 2, 3});
  CHECK(e4.states == std::vector<int>{4});
  CHECK_THROWS_AS(split_sequence(s, 1.0), InvalidArgument);
  CHECK_THROWS_AS(split_sequence(make_seq({1, 2, 3}), 0.75), InvalidArgument);
}

TEST_CASE("dtw: identity, repetition and a hand-checked case") {
  const SymbolDistance euclid(Metric::centroid_euclidean, kCentroids);
  const SymbolDistance cosine(Metric::centroid_cosine, {{0, {1.0, 0.0}}, {1, {0.0, 1.0}}, {2, {1.0, 1.0}}});
  const std::vector<int> x = {0, 2, 1, 1, 0};
  for (const auto* d : {&euclid, &cosine}) CHECK(dtw(x, x, *d).cost == 0.0);
  CHECK(dtw(x, x).cost == 0.0);
  CHECK(dtw(std::vector<int>{0}, std::vector<int>{0, 0, 0}).cost == 0.0);
  const auto r = dtw(std::vector<int>{0, 1, 0}, std::vector<int>{0, 0, 1});
  CHECK(r.cost == 1.0);
  CHECK(r.path.front() == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(r.path.back() == std::pair<std::size_t, std::size_t>{2, 2});
  CHECK_THROWS_AS(dtw(std::vector<int>{}, x), InvalidArgument);
}

TEST_CASE("dtw: exhaustive oracle over every pair up to length 4, symmetric and non-negative") {
  const SymbolDistance euclid(Metric::centroid_euclidean, kCentroids);
  const auto seqs = all_sequences(4);
  for (const auto* d : {static_cast<const SymbolDistance*>(nullptr), &euclid}) {
    const SymbolDistance dist = d ? *d : SymbolDistance{};
    for (std::size_t i = 0; i < seqs.size(); i += 3) {
      for (std::size_t j = 0; j < seqs.size(); j += 2) {
        const auto& a = seqs[i];
        const auto& b = seqs[j];
        const double truth = brute_dtw(a, b, dist);
        const auto r = dtw(a, b, dist);
        REQUIRE(r.cost == truth);
        REQUIRE(dtw_cost(b, a, dist) == truth);
        REQUIRE(r.cost >= 0.0);
        double along = 0.0;
        for (std::size_t k = 0; k < r.path.size(); ++k) {
          along += dist(a[r.path[k].first], b[r.path[k].second]);
          if (k) {
            const auto di = r.path[k].first - r.path[k - 1].first, dj = r.path[k].second - r.path[k - 1].second;
            REQUIRE(di <= 1);
            REQUIRE(dj <= 1);
            REQUIRE(di + dj >= 1);
          }
        }
        REQUIRE(along == truth);
      }
    }
  }
}

TEST_CASE("dtw: early abandoning returns the exact cost at or below the bound, +inf above") {
  Rng rng(12);
  std::uniform_int_distribution<int> sym(0, 2), len(1, 40);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<int> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
    for (auto& v : a) v = sym(rng) == 0 ? 0 : 1;
    for (auto& v : b) v = sym(rng);
    const double exact = dtw(a, b).cost;
    const double bound = exact + (trial % 3) - 1.0;
    const double c = dtw_cost(a, b, {}, bound);
    if (exact <= bound) REQUIRE(c == exact);
    else REQUIRE(std::isinf(c));
  }
}

TEST_CASE("run path cost: an upper bound of DTW, zero when run orders agree") {
  Rng rng(13);
  std::uniform_int_distribution<int> sym(0, 2), len(1, 30);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<int> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
    for (auto& v : a) v = sym(rng);
    for (auto& v : b) v = sym(rng);
    REQUIRE(run_path_cost(run_lengths(a), run_lengths(b)) >= dtw(a, b).cost);
  }
  const std::vector<int> a = {1, 1, 1, 2, 2, 0};
  const std::vector<int> b = {1, 2, 2, 2, 2, 0, 0};
  CHECK(run_path_cost(run_lengths(a), run_lengths(b)) == 0.0);
  const auto r = run_lengths(a);
  CHECK(r.symbols == std::vector<int>{1, 2, 0});
  CHECK(r.lengths == std::vector<std::size_t>{3, 2, 1});
}

TEST_CASE("templates: a constant sequence yields exactly one template") {
  const auto t = mine_templates(make_seq(std::vector<int>(200, 3)), 24, 2.0, 2);
  CHECK(t.templates.size() == 1);
  CHECK(t.coverage() == 1.0);
}

TEST_CASE("templates: a strictly daily pattern is fully covered") {
  std::vector<int> s;
  for (int day = 0; day < 5; ++day) {
    for (std::size_t i = 0; i < kSlotsPerDay; ++i) s.push_back(i < 30 ? 0 : (i < 70 ? 1 : 2));
  }
  const auto t = mine_templates(make_seq(s), kSlotsPerDay, 9.6, 2);
  CHECK(t.coverage() == 1.0);
  for (std::size_t k = 0; k < t.templates.size(); ++k) CHECK(t.support[k] >= 2);
}

TEST_CASE("templates: no template reaching the support is an error, mining is repeatable") {
  Rng rng(3);
  std::uniform_int_distribution<int> sym(0, 9);
  std::vector<int> s(120);
  for (auto& v : s) v = sym(rng);
  CHECK_THROWS_AS(mine_templates(make_seq(s), 20, 0.0, 2), InvalidArgument);
  const auto a = mine_templates(make_seq(s), 20, 12.0, 2);
  const auto b = mine_templates(make_seq(s), 20, 12.0, 2);
  CHECK(a.templates == b.templates);
  CHECK(a.support == b.support);
  CHECK(a.origin == b.origin);
}

TEST_CASE("anomalies: a window equal to a template scores zero; infinite threshold flags nothing") {
  std::vector<int> s(96, 1);
  for (std::size_t i = 40; i < 60; ++i) s[i] = 2;
  const auto t = mine_templates(make_seq(std::vector<int>(96, 1)), 24, 2.0, 2);
  const auto r = score_anomalies(make_seq(std::vector<int>(48, 1)), t, 1.0, 24);
  for (const auto& w : r.windows) {
    CHECK(w.score == 0.0);
    CHECK_FALSE(w.flagged);
  }
  const auto inf = score_anomalies(make_seq(s), t, std::numeric_limits<double>::infinity(), 8);
  for (const auto& w : inf.windows) CHECK_FALSE(w.flagged);
  CHECK(inf.intervals.empty());
  CHECK(inf.windows.back().start + 24 == s.size());
}

TEST_CASE("anomalies: monotone in the threshold, intervals disjoint and maximal") {
  Rng rng(21);
  std::uniform_int_distribution<int> sym(0, 2);
  std::vector<int> train(300, 0);
  for (std::size_t i = 0; i < train.size(); ++i) train[i] = (i / 12) % 2;
  const auto t = mine_templates(make_seq(train), 24, 4.0, 2);
  std::vector<int> eval(240);
  for (auto& v : eval) v = sym(rng);
  const auto seq = make_seq(eval);
  std::size_t previous = std::numeric_limits<std::size_t>::max();
  for (double thr : {0.0, 2.0, 4.0, 6.0, 8.0, 12.0, 24.0}) {
    const auto r = score_anomalies(seq, t, thr, 6);
    std::size_t flagged = 0;
    for (const auto& w : r.windows) flagged += w.flagged;
    CHECK(flagged <= previous);
    previous = flagged;
    for (std::size_t k = 1; k < r.intervals.size(); ++k) CHECK(r.intervals[k].start > r.intervals[k - 1].end);
    // Every flagged window lies inside an interval, and every interval is
    // bounded by flagged windows (merging never invents an edge).
    for (const auto& w : r.windows) {
      bool inside = false;
      for (const auto& iv : r.intervals) inside |= w.start_ts >= iv.start && w.end_ts <= iv.end;
      if (w.flagged) CHECK(inside);
    }
    for (const auto& iv : r.intervals) {
      bool starts = false, ends = false;
      for (const auto& w : r.windows) {
        starts |= w.flagged && w.start_ts == iv.start;
        ends |= w.flagged && w.end_ts == iv.end;
      }
      CHECK(starts);
      CHECK(ends);
    }
  }
}

TEST_CASE("state sequences: empty and constant series") {
  embed::StateModel m;
  m.reference_spectra = embed::Matrix(2, kChannels);
  m.reference_points = embed::Matrix(2, 2);
  for (std::size_t j = 0; j < kChannels; ++j) m.reference_spectra(1, j) = 20.0;
  m.reference_points(1, 0) = 10.0;
  m.reference_labels = {0, 1};
  m.k = 1;
  const auto constant = plcgrid::testing::flat_series(plcgrid::testing::slots(10), [](std::size_t) { return 18.0; });
  const auto seq = to_state_sequence(constant, m);
  CHECK(seq.states == std::vector<int>(10, 1));
  const MeasurementSeries empty("n000-n001", Profile::fin2, {}, {});
  CHECK(to_state_sequence(empty, m).size() == 0);
}

TEST_CASE("state sequences: CSV round trip and rejected input") {
  const auto s = make_seq({0, 3, -1, 2});
  const auto back = state_sequence_from_csv(state_sequence_to_csv(s), s.connection_id);
  CHECK(back.states == s.states);
  CHECK(back.timestamps == s.timestamps);
  CHECK_THROWS_AS(state_sequence_from_csv("time,state\n"), ParseError);
  CHECK_THROWS_AS(state_sequence_from_csv(""), ParseError);
  CHECK_THROWS_AS(state_sequence_from_csv("timestamp,state\n2021-01-01T00:15:00Z,1\n2021-01-01T00:00:00Z,1\n"),
                  ParseError);
}

namespace {

std::pair<std::size_t, std::size_t> count_rings_arcs(const std::string& svg, std::set<std::string>* fills = nullptr) {
  std::istringstream in(svg);
  boost::property_tree::ptree tree;
  boost::property_tree::read_xml(in, tree);
  REQUIRE(tree.size() == 1);
  std::size_t rings = 0, arcs = 0;
  std::function<void(const boost::property_tree::ptree&)> walk = [&](const auto& node) {
    for (const auto& [tag, child] : node) {
      if (tag == "<xmlattr>") continue;
      const auto cls = child.template get<std::string>("<xmlattr>.class", "");
      if (tag == "g" && cls == "ring") ++rings;
      if (tag == "path" && cls == "arc") {
        ++arcs;
        if (fills) fills->insert(child.template get<std::string>("<xmlattr>.fill", ""));
      }
      walk(child);
    }
  };
  walk(tree.get_child("svg"));
  return {rings, arcs};
}

}  // namespace

TEST_CASE("radial: one colour for one state, rings and arcs by period") {
  std::set<std::string> fills;
  const auto [r1, a1] = count_rings_arcs(render_radial(make_seq(std::vector<int>(96, 4)), RadialPeriod::day), &fills);
  CHECK(r1 == 1);
  CHECK(a1 == 96);
  CHECK(fills.size() == 1);
  std::vector<int> two(192);
  for (std::size_t i = 0; i < two.size(); ++i) two[i] = static_cast<int>(i % 3);
  const auto [r2, a2] = count_rings_arcs(render_radial(make_seq(two), RadialPeriod::day));
  CHECK(r2 == 2);
  CHECK(a2 == 192);
  const auto [ry, ay] = count_rings_arcs(render_radial(make_seq(two), RadialPeriod::year));
  CHECK(ry == 1);
  CHECK(ay == 2);
  CHECK_THROWS_AS(render_radial(make_seq({}), RadialPeriod::day), InvalidArgument);
}
