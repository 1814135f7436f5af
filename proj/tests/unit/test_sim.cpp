#include <doctest.h>

#include <cmath>
#include <queue>
#include <set>

#include "helpers.hpp"
#include "plcgrid/dataset_io.hpp"
#include "plcgrid/error.hpp"
#include "plcgrid/sim.hpp"

using namespace plcgrid;
using namespace plcgrid::sim;
using plcgrid::testing::chain;
using plcgrid::testing::kT0;

namespace {

TransferModel flat_transfer(double loss = 0.0) {
  auto m = TransferModel::linear(loss, loss);
  return m;
}

std::size_t count_links(const GridTopology& t, bool direct) {
  return static_cast<std::size_t>(
      std::count_if(t.plc_links.begin(), t.plc_links.end(), [&](const PlcLink& l) { return l.direct == direct; }));
}

/// Node pairs within `radius` hops, by breadth-first search from every node.
std::size_t pairs_within(const GridTopology& t, int radius) {
  std::map<int, std::vector<int>> adj;
  for (const auto& s : t.sections) {
    adj[s.a].push_back(s.b);
    adj[s.b].push_back(s.a);
  }
  std::size_t count = 0;
  for (const auto& n : t.nodes) {
    std::map<int, int> dist = {{n.id, 0}};
    std::queue<int> q;
    q.push(n.id);
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int v : adj[u]) {
        if (dist.count(v)) continue;
        dist[v] = dist[u] + 1;
        q.push(v);
      }
    }
    for (const auto& [v, d] : dist) count += v > n.id && d <= radius;
  }
  return count;
}

}  // namespace

TEST_CASE("topology: two nodes give one section and one direct link") {
  TopologyConfig c;
  c.n_nodes = 2;
  const auto [t, truth] = generate_topology(c);
  CHECK(t.sections.size() == 1);
  CHECK(count_links(t, true) == 1);
  CHECK(count_links(t, false) == 0);
}

TEST_CASE("topology: a 4-node chain has 3 direct and 3 indirect links within 3 hops") {
  const auto t = chain(4);
  CHECK(count_links(t, true) == 3);
  CHECK(count_links(t, false) == 3);
}

TEST_CASE("topology: fewer than two nodes is an error") {
  TopologyConfig c;
  c.n_nodes = 1;
  CHECK_THROWS(generate_topology(c));
}

TEST_CASE("topology: deterministic per seed, connected, and links match a BFS count") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TopologyConfig c;
    c.n_nodes = 12;
    c.seed = seed;
    const auto [a, ta] = generate_topology(c);
    const auto [b, tb] = generate_topology(c);
    CHECK(ground_truth_to_json(a, ta) == ground_truth_to_json(b, tb));
    CHECK(a.sections.size() == 11);
    for (const auto& n : a.nodes) CHECK(a.hops(0, n.id).has_value());
    CHECK(a.plc_links.size() == pairs_within(a, c.hop_radius));
  }
}

TEST_CASE("section attenuation: zero length without joints is zero") {
  CableSection s;
  const auto att = section_attenuation(s, TransferModel::linear(10, 60));
  CHECK(std::all_of(att.begin(), att.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("section attenuation: one Gaussian notch, and notches add") {
  const auto m = TransferModel::linear(10, 60);
  CableSection s;
  s.length_m = 100.0;
  const auto base = section_attenuation(s, m);
  s.joint_channels = {{300}};
  const auto one = section_attenuation(s, m);
  CHECK(one[300] - base[300] == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(one[302] - base[302] == doctest::Approx(6.0 * std::exp(-1.0)).epsilon(1e-12));
  s.joint_channels = {{300}, {300}};
  CHECK(section_attenuation(s, m)[300] - base[300] == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("path SNR: indirect links never exceed their direct prefix with noise off") {
  auto t = chain(3);
  t.sections[0].joint_channels = {{120, 430, 780}};
  const auto m = TransferModel::linear(10, 60);
  Rng rng(1);
  const auto noise = NoiseModel::none();
  const auto ab = path_snr(t, {0, 1, t.section_path(0, 1)}, kT0, m, noise, Profile::fin2, rng);
  const auto ac = path_snr(t, {0, 2, t.section_path(0, 2)}, kT0, m, noise, Profile::fin2, rng);
  for (std::size_t i = 0; i < kChannels; ++i) REQUIRE(ac[i] <= ab[i]);
}

TEST_CASE("path SNR: zero attenuation and no noise sits at min(S0, range max)") {
  auto t = chain(2, 0.0);
  Rng rng(1);
  auto m = flat_transfer();
  const auto s = path_snr(t, {0, 1, t.section_path(0, 1)}, kT0, m, NoiseModel::none(), Profile::fin2, rng);
  CHECK(s[0] == doctest::Approx(38.0));
  m.tx_headroom_db = 55.0;
  const auto high = path_snr(t, {0, 1, t.section_path(0, 1)}, kT0, m, NoiseModel::none(), Profile::fin2, rng);
  CHECK(high[500] == doctest::Approx(40.0));
}

TEST_CASE("path SNR: same seed and time give the same spectrum") {
  const auto t = chain(3);
  const auto m = TransferModel::linear(10, 60);
  NoiseModel noise;
  Rng r1(7), r2(7);
  const auto a = path_snr(t, {0, 2, t.section_path(0, 2)}, kT0 + 3600, m, noise, Profile::fin2, r1);
  const auto b = path_snr(t, {0, 2, t.section_path(0, 2)}, kT0 + 3600, m, noise, Profile::fin2, r2);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST_CASE("fingerprint: direct minus indirect equals the extra section's attenuation") {
  TopologyConfig c;
  c.n_nodes = 10;
  c.seed = 4;
  const auto [t, truth] = generate_topology(c);
  const auto m = TransferModel::linear(10, 60);
  for (const auto& link : t.plc_links) {
    if (link.direct) continue;
    const std::vector<int> prefix(link.path.begin(), link.path.end() - 1);
    const auto d = path_headroom(t, prefix, m);
    const auto i = path_headroom(t, link.path, m);
    const auto extra = section_attenuation(t.section(link.path.back()), m);
    for (std::size_t ch = 0; ch < kChannels; ++ch) REQUIRE(std::abs(d[ch] - i[ch] - extra[ch]) < 1e-9);
  }
}

TEST_CASE("events: fuse failure ramps from 30% to 100% of its severity") {
  EventSpec e;
  e.node = 1;
  e.start = kT0;
  e.duration_s = kDaySeconds;
  e.severity_db = 20.0;
  const auto m = TransferModel::linear(10, 60);
  CHECK(event_drop_db(e, kChannels - 1, kT0 + 10, m) == doctest::Approx(20.0));
  CHECK(event_drop_db(e, 0, kT0 + 10, m) == doctest::Approx(6.0));
  CHECK(event_drop_db(e, 0, kT0 + kDaySeconds + 10, m) == 0.0);
  CHECK(event_affects(e, 0, 1));
  CHECK(event_affects(e, 1, 2));
  CHECK_FALSE(event_affects(e, 0, 2));
}

TEST_CASE("events: zero duration leaves the data and logs the event; overlaps add and clamp") {
  const auto t = chain(2);
  const auto m = TransferModel::linear(10, 60);
  const TimeRange range{kT0, kT0 + kDaySeconds};
  SynthesisOptions so;
  so.with_tonemaps = false;
  auto [ds, truth] = synthesize_dataset(t, m, NoiseModel::none(), range, 3, so);
  const auto before = ds.series.begin()->second;
  EventSpec e;
  e.node = 1;
  e.start = kT0;
  e.duration_s = 0;
  e.severity_db = 20.0;
  inject_event(ds, truth, e, m);
  CHECK(ds.series.begin()->second == before);
  CHECK(truth.events.size() == 1);

  e.duration_s = kDaySeconds;
  auto once = ds;
  inject_event(once, truth, e, m);
  auto twice = once;
  inject_event(twice, truth, e, m);
  const auto& s0 = before.spectrum(5);
  const auto& s2 = twice.series.begin()->second.spectrum(5);
  const auto r = db_range(Profile::fin2);
  for (std::size_t ch : {0UL, 400UL, kChannels - 1}) {
    const double expect = std::max<double>(r.min, s0[ch] - 2 * event_drop_db(e, ch, kT0, m));
    CHECK(s2[ch] == doctest::Approx(expect).epsilon(1e-3));
  }
}

TEST_CASE("synthesis: two nodes over one day give two series of 96 rows") {
  const auto t = chain(2);
  const auto [ds, truth] = synthesize_dataset(t, TransferModel::linear(10, 60), NoiseModel{},
                                              {kT0, kT0 + kDaySeconds}, 1);
  REQUIRE(ds.series.size() == 2);
  for (const auto& [id, s] : ds.series) {
    CHECK(s.size() == 96);
    CHECK(s.has_tonemaps());
  }
}

TEST_CASE("synthesis: series count is twice the pairs within the hop radius") {
  TopologyConfig c;
  c.n_nodes = 6;
  c.seed = 2;
  const auto [t, truth] = generate_topology(c);
  SynthesisOptions so;
  so.with_tonemaps = false;
  const auto [ds, gt] = synthesize_dataset(t, TransferModel::linear(10, 60), NoiseModel{},
                                           {kT0, kT0 + 2 * kDaySeconds}, 1, so);
  CHECK(ds.series.size() == 2 * pairs_within(t, 3));
}

TEST_CASE("synthesis: empty range is an error, every value within the profile range") {
  const auto t = chain(3);
  CHECK_THROWS(synthesize_dataset(t, TransferModel::linear(10, 60), NoiseModel{}, {kT0, kT0}, 1));
  NoiseModel loud;
  loud.awgn_sigma_db = 30.0;
  const auto [ds, gt] = synthesize_dataset(t, TransferModel::linear(10, 60), loud, {kT0, kT0 + kDaySeconds}, 1);
  const auto r = db_range(Profile::fin2);
  bool hit_min = false, hit_max = false;
  for (const auto& [id, s] : ds.series) {
    for (float v : s.snr()) {
      REQUIRE(v >= r.min);
      REQUIRE(v <= r.max);
      hit_min |= v == r.min;
      hit_max |= v == r.max;
    }
  }
  CHECK(hit_min);
  CHECK(hit_max);
}

TEST_CASE("synthesis: identical seeds give byte-identical files") {
  TopologyConfig c;
  c.n_nodes = 4;
  const auto [t, truth] = generate_topology(c);
  const auto run = [&] {
    return synthesize_dataset(t, TransferModel::linear(10, 60), NoiseModel{}, {kT0, kT0 + kDaySeconds}, 11).first;
  };
  const auto a = run(), b = run();
  for (const auto& [id, s] : a.series) CHECK(serialize_measurement_file(s) == serialize_measurement_file(b.series.at(id)));
}

TEST_CASE("synthesis: interferers hit only their receivers") {
  const auto t = chain(3);
  NoiseModel noise = NoiseModel::none();
  Interferer f;
  f.band_lo = 100;
  f.band_hi = 110;
  f.depth_db = 10;
  f.nodes = {2};
  noise.interferers.push_back(f);
  const auto [ds, gt] = synthesize_dataset(t, TransferModel::linear(10, 60), noise, {kT0, kT0 + kDaySeconds}, 1);
  const auto [clean, gt2] =
      synthesize_dataset(t, TransferModel::linear(10, 60), NoiseModel::none(), {kT0, kT0 + kDaySeconds}, 1);
  CHECK(ds.find(1, 2)->spectrum(0)[105] < clean.find(1, 2)->spectrum(0)[105]);
  CHECK(ds.find(2, 1)->spectrum(0)[105] == clean.find(2, 1)->spectrum(0)[105]);
  CHECK(ds.find(1, 2)->spectrum(0)[300] == clean.find(1, 2)->spectrum(0)[300]);
}

TEST_CASE("dataset directory: write then read restores series and ground truth") {
  const auto dir = std::filesystem::temp_directory_path() / "plcgrid-test-dataset";
  std::filesystem::remove_all(dir);
  TopologyConfig c;
  c.n_nodes = 3;
  const auto [t, truth] = generate_topology(c);
  const auto [ds, gt] = synthesize_dataset(t, TransferModel::linear(10, 60), NoiseModel{}, {kT0, kT0 + kDaySeconds}, 5);
  write_dataset(dir, ds, t, gt);
  const auto back = read_dataset(dir);
  CHECK(back.dataset.series.size() == ds.series.size());
  for (const auto& [id, s] : ds.series) {
    const auto& r = back.dataset.series.at(id);
    CHECK(std::equal(s.snr().begin(), s.snr().end(), r.snr().begin()));
  }
  CHECK(ground_truth_to_json(back.topology, back.truth) == ground_truth_to_json(t, gt));
  std::filesystem::remove_all(dir);
}

TEST_CASE("simulator config: unknown values name their field") {
  try {
    simulation_config_from_json(R"({"days": 0})");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "simulator.days");
  }
  const auto c = simulation_config_from_json(R"({"n_nodes": 5, "days": 3})");
  CHECK(c.topology.n_nodes == 5);
  CHECK(simulation_config_from_json(simulation_config_to_json(c)).days == 3);
}
