#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "plcgrid/error.hpp"
#include "plcgrid/topo.hpp"

using namespace plcgrid;
using namespace plcgrid::topo;
using plcgrid::testing::kT0;

namespace {

TopologyPrediction pred_of(std::size_t n, std::vector<double> conf, double threshold = 0.5) {
  TopologyPrediction p;
  p.n = n;
  for (std::size_t i = 0; i < n; ++i) p.members.push_back(static_cast<int>(i));
  p.confidence = std::move(conf);
  p.mask.assign(n * n, 1);
  for (std::size_t i = 0; i < n; ++i) p.mask[i * n + i] = 0;
  p.threshold = threshold;
  return rethreshold(p, threshold);
}

TopoParams tiny_params() {
  TopoParams p;
  p.hidden = 8;
  p.embedding = 4;
  p.filter_channels = 4;
  p.kernel = 3;
  p.pretrain_epochs = 3;
  p.pretrain_batch = 8;
  p.pretrain_samples = 0;
  p.epochs = 3;
  p.seed = 5;
  return p;
}

struct Grid {
  sim::GridTopology topology;
  sim::Dataset dataset;
};

Grid grid(int nodes, std::uint64_t seed) {
  sim::TopologyConfig c;
  c.n_nodes = nodes;
  c.seed = seed;
  Grid g;
  g.topology = sim::generate_topology(c).first;
  sim::SynthesisOptions so;
  so.with_tonemaps = false;
  g.dataset = sim::synthesize_dataset(g.topology, sim::TransferModel::linear(10, 60), sim::NoiseModel{},
                                      {kT0, kT0 + kDaySeconds}, seed, so).first;
  return g;
}

}  // namespace

TEST_CASE("neighbourhoods contain their centre, are sorted and respect the size bounds") {
  const auto g = grid(10, 2);
  const auto nbs = local_neighborhoods(g.topology, 6, 3);
  CHECK_FALSE(nbs.empty());
  for (const auto& nb : nbs) {
    CHECK(std::find(nb.members.begin(), nb.members.end(), nb.center) != nb.members.end());
    CHECK(std::is_sorted(nb.members.begin(), nb.members.end()));
    CHECK(nb.size() >= 3);
    CHECK(nb.size() <= 6);
  }
}

TEST_CASE("adjacency tensor: two nodes, diagonal masked, entries copied exactly") {
  const auto g = grid(2, 1);
  const Neighborhood nb{0, {0, 1}};
  const auto t = build_adjacency_tensor(g.dataset, nb, kT0 + 5 * kSlotSeconds);
  CHECK(t.n == 2);
  CHECK(t.values.size() == 4 * kChannels);
  CHECK(t.measured() == 2);
  CHECK(t.mask[0] == 0);
  CHECK(t.mask[3] == 0);
  const auto* s = g.dataset.find(0, 1);
  for (std::size_t ch = 0; ch < kChannels; ++ch) REQUIRE(t.entry(0, 1)[ch] == s->spectrum(5)[ch]);
  CHECK(t.entry(0, 0)[0] == db_range(Profile::fin2).min);
  CHECK_THROWS_AS(build_adjacency_tensor(g.dataset, nb, kT0 + 7), InvalidArgument);
  CHECK_THROWS_AS(build_adjacency_tensor(g.dataset, Neighborhood{5, {5, 6}}, kT0), InvalidArgument);
}

TEST_CASE("indirect edges carry a direct edge's spectrum plus non-negative attenuation") {
  const auto g = grid(9, 4);
  const auto m = sim::TransferModel::linear(10, 60);
  for (const auto& link : g.topology.plc_links) {
    if (link.direct) continue;
    const auto full = sim::path_headroom(g.topology, link.path, m);
    const auto first = sim::path_headroom(g.topology, {link.path.front()}, m);
    for (std::size_t ch = 0; ch < kChannels; ++ch) REQUIRE(full[ch] <= first[ch] + 1e-12);
  }
}

TEST_CASE("symmetrize: arithmetic, identity, exact symmetry and idempotence") {
  auto p = pred_of(2, {0.0, 0.9, 0.1, 0.0});
  const auto s = symmetrize(p);
  CHECK(s.confidence[1] == doctest::Approx(0.5));
  CHECK(s.confidence[2] == doctest::Approx(0.5));
  CHECK(symmetrize(p, SymmetryRule::min).confidence[1] == doctest::Approx(0.1));
  CHECK(symmetrize(p, SymmetryRule::max).confidence[2] == doctest::Approx(0.9));
  const auto sym = pred_of(3, {0, 0.2, 0.7, 0.2, 0, 0.4, 0.7, 0.4, 0});
  CHECK(symmetrize(sym).confidence == sym.confidence);
  Rng rng(1);
  std::uniform_real_distribution<double> u;
  std::vector<double> c(25);
  for (auto& v : c) v = u(rng);
  auto r = pred_of(5, c);
  r.mask[1] = 0;  // one direction unmeasured
  const auto once = symmetrize(r);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(once.confidence[i * 5 + j] - once.confidence[j * 5 + i] == 0.0);
  }
  CHECK(once.confidence[1] == r.confidence[5]);
  CHECK(symmetrize(once).confidence == once.confidence);
  CHECK(symmetrize(once).binary == once.binary);
}

TEST_CASE("overlap vote: one prediction passes through; three votes average") {
  const auto a = pred_of(2, {0, 0.8, 0.8, 0});
  const auto b = pred_of(2, {0, 0.4, 0.4, 0});
  const auto c = pred_of(2, {0, 0.9, 0.9, 0});
  const std::vector<TopologyPrediction> one = {a};
  CHECK(overlap_vote(one, 0, 1).confidence == doctest::Approx(0.8));
  const std::vector<TopologyPrediction> three = {a, b, c};
  const auto v = overlap_vote(three, 0, 1);
  CHECK(v.confidence == doctest::Approx(0.7));
  CHECK(v.direct);
  CHECK(v.votes == 6);
  CHECK_THROWS_AS(overlap_vote(three, 0, 7), InvalidArgument);
  const auto voted = apply_votes(three, overlap_votes(three));
  for (const auto& p : voted) CHECK(p.binary[1] == 1);
}

TEST_CASE("eval: perfect, one wrong entry, and the all-false base rate") {
  auto p = pred_of(4, std::vector<double>(16, 0.0));
  std::vector<std::uint8_t> truth(16, 0);
  const std::vector<TopologyPrediction> preds = {p};
  const std::vector<std::vector<std::uint8_t>> gt = {truth};
  auto s = eval_topology(preds, gt);
  CHECK(s.entrywise_acc == 1.0);
  CHECK(s.exact_matrix_acc == 1.0);
  CHECK(s.entries == 12);

  auto wrong = gt;
  wrong[0][1] = 1;
  s = eval_topology(preds, wrong);
  CHECK(s.entrywise_acc == doctest::Approx(11.0 / 12));
  CHECK(s.exact_matrix_acc == 0.0);

  // 10 nodes fully measured: 90 entries, 27 of them direct (30%).
  auto big = pred_of(10, std::vector<double>(100, 0.0));
  std::vector<std::uint8_t> t10(100, 0);
  std::size_t set = 0;
  for (std::size_t k = 0; k < 100 && set < 27; ++k) {
    if (k % 11 != 0) {
      t10[k] = 1;
      ++set;
    }
  }
  const std::vector<TopologyPrediction> bp = {big};
  const std::vector<std::vector<std::uint8_t>> bt = {t10};
  CHECK(eval_topology(bp, bt).entrywise_acc == doctest::Approx(0.7));
  CHECK_THROWS_AS(eval_topology(bp, gt), InvalidArgument);
}

TEST_CASE("topology filter: trains, handles several sizes, thresholds bound the output") {
  const auto g = grid(12, 3);
  const auto nbs = local_neighborhoods(g.topology, 8, 4);
  std::vector<Timestamp> ts = {kT0, kT0 + 40 * kSlotSeconds};
  const auto samples = build_topo_samples(g.dataset, g.topology, nbs, ts);
  REQUIRE(samples.size() >= 4);
  auto params = tiny_params();
  auto enc = pretrain_encoder(edge_spectra(samples), params);
  CHECK(enc.final_mse < enc.initial_mse);
  CHECK(enc.net.forward(edge_input(samples[0].tensor)).dim(1) == params.embedding);
  auto enc2 = pretrain_encoder(edge_spectra(samples), params);
  CHECK(enc2.net.flat_parameters() == enc.net.flat_parameters());

  auto model = train_topology_filter(samples, enc, params);
  CHECK(model.loss_curve.size() == params.epochs);
  std::set<std::size_t> sizes;
  for (const auto& s : samples) {
    sizes.insert(s.tensor.n);
    const auto p = predict_topology(model, s.tensor, 0.5);
    const auto lo = rethreshold(p, 0.0), hi = rethreshold(p, 1.0 + 1e-9);
    for (std::size_t k = 0; k < p.n * p.n; ++k) {
      CHECK(lo.binary[k] == p.mask[k]);
      CHECK(hi.binary[k] == 0);
      CHECK(p.binary[k] <= lo.binary[k]);
      CHECK(p.confidence[k] >= 0.0);
      CHECK(p.confidence[k] <= 1.0);
    }
  }
  CHECK(sizes.size() >= 2);

  // Masked entries do not reach the loss.
  auto perturbed = samples[0];
  for (std::size_t i = 0; i < perturbed.tensor.n; ++i) {
    for (std::size_t j = 0; j < perturbed.tensor.n; ++j) {
      if (perturbed.tensor.mask[i * perturbed.tensor.n + j]) continue;
      for (std::size_t ch = 0; ch < kChannels; ++ch) perturbed.tensor.values[(i * perturbed.tensor.n + j) * kChannels + ch] = 33.0;
    }
  }
  CHECK(sample_loss(model, perturbed) == sample_loss(model, samples[0]));

  auto back = load_topo_model(save_topo_model(model));
  CHECK(predict_topology(back, samples[0].tensor).confidence == predict_topology(model, samples[0].tensor).confidence);
}

TEST_CASE("topology filter: single-class labels are rejected") {
  const auto g = grid(4, 1);
  const auto nbs = local_neighborhoods(g.topology, 4, 2);
  auto samples = build_topo_samples(g.dataset, g.topology, nbs, std::vector<Timestamp>{kT0});
  for (auto& s : samples) std::fill(s.labels.begin(), s.labels.end(), 0);
  auto params = tiny_params();
  auto enc = pretrain_encoder(edge_spectra(samples), params);
  CHECK_THROWS_AS(train_topology_filter(samples, enc, params), InvalidArgument);
}

TEST_CASE("exports: edge list JSON and graph description") {
  const auto a = pred_of(3, {0, 0.9, 0.2, 0.9, 0, 0.6, 0.2, 0.6, 0});
  const std::vector<TopologyPrediction> preds = {a};
  const auto votes = overlap_votes(preds);
  const auto json = votes_to_json(votes);
  CHECK(json.find("\"confidence\"") != std::string::npos);
  CHECK(json.find("\"votes\"") != std::string::npos);
  const auto dot = votes_to_dot(votes);
  CHECK(dot.find("graph") != std::string::npos);
  CHECK(dot.find("n0 -- n1") != std::string::npos);
  CHECK(dot.find("n0 -- n2") == std::string::npos);
}
