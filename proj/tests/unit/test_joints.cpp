#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "plcgrid/error.hpp"
#include "plcgrid/joints.hpp"

using namespace plcgrid;
using namespace plcgrid::joints;

namespace {

struct Fixture {
  sim::GridTopology topology;
  sim::GroundTruth truth;
  sim::Dataset dataset;
};

/// Chain 0-1-2-3 whose sections carry 0, 1 and 3 joints, over `days` days.
Fixture joint_fixture(int days) {
  Fixture f;
  f.topology = plcgrid::testing::chain(4, 150.0, 1);
  const int counts[] = {0, 1, 3};
  for (std::size_t s = 0; s < 3; ++s) {
    for (int j = 0; j < counts[s]; ++j) f.topology.sections[s].joint_channels.push_back({120, 430, 780});
  }
  f.truth = sim::ground_truth_of(f.topology);
  sim::SynthesisOptions so;
  so.with_tonemaps = false;
  const sim::TimeRange range{plcgrid::testing::kT0, plcgrid::testing::kT0 + days * kDaySeconds};
  f.dataset = sim::synthesize_dataset(f.topology, sim::TransferModel::linear(10, 60), sim::NoiseModel{}, range, 3, so).first;
  return f;
}

JointParams tiny_params() {
  JointParams p;
  p.channels = {2, 3};
  p.kernel = 3;
  p.time_group = 48;
  p.epochs = 2;
  p.batch = 4;
  p.seed = 9;
  return p;
}

}  // namespace

TEST_CASE("joint dataset: counts, disjoint split and labels from the ground truth") {
  const auto f = joint_fixture(3);
  const auto d = build_joint_dataset(f.dataset, f.topology, f.truth, 0.34, 1);
  CHECK(d.train.size() + d.val.size() == 3 * 3 * 2);
  std::set<int> train(d.train_sections.begin(), d.train_sections.end());
  for (int s : d.val_sections) CHECK(train.count(s) == 0);
  CHECK_FALSE(d.val.empty());
  for (const auto* part : {&d.train, &d.val}) {
    for (const auto& s : *part) CHECK(s.joint_count == f.truth.section_joints.at(s.section_id));
  }
}

TEST_CASE("joint dataset: a single joint count is rejected") {
  auto f = joint_fixture(1);
  for (auto& s : f.topology.sections) s.joint_channels.clear();
  f.truth = sim::ground_truth_of(f.topology);
  CHECK_THROWS_AS(build_joint_dataset(f.dataset, f.topology, f.truth), InvalidArgument);
}

TEST_CASE("rounding: clamp at zero and half to even") {
  CHECK(round_count(-0.3) == 0);
  CHECK(round_count(2.5) == 2);
  CHECK(round_count(3.5) == 4);
  CHECK(round_count(1.49) == 1);
}

TEST_CASE("smoothing and peaks") {
  const std::vector<double> p = {0, 0, 5, 0, 0};
  const auto s = smooth_profile(p, 3);
  CHECK(s[1] == doctest::Approx(5.0 / 3));
  CHECK(s[0] == doctest::Approx(0.0));
  CHECK_THROWS_AS(smooth_profile(p, 4), InvalidArgument);
  std::vector<double> q(100, 0.0);
  q[10] = 5;
  q[15] = 4;
  q[50] = 3;
  q[80] = 2;
  CHECK(top_peaks(q, 3, 20) == std::vector<int>{10, 50, 80});
}

TEST_CASE("regressor: seeded training is repeatable, and the model survives a round trip") {
  const auto f = joint_fixture(2);
  const auto d = build_joint_dataset(f.dataset, f.topology, f.truth, 0.34, 1);
  auto a = train_joint_regressor(d.train, tiny_params());
  auto b = train_joint_regressor(d.train, tiny_params());
  CHECK(a.net.flat_parameters() == b.net.flat_parameters());
  CHECK(a.loss_curve == b.loss_curve);
  auto c = load_joint_model(save_joint_model(a));
  CHECK(c.net.flat_parameters() == a.net.flat_parameters());
  CHECK(predict_joints(c, d.val[0].window).raw == predict_joints(a, d.val[0].window).raw);
  const auto eval = evaluate_joints(a, d.val);
  CHECK(eval.mae >= 0.0);
  CHECK_FALSE(eval.sections.empty());
}

TEST_CASE("activation map: zero weights give zero saliency") {
  const auto f = joint_fixture(1);
  auto model = build_joint_model(tiny_params());
  model.net.set_flat_parameters(std::vector<double>(model.net.parameter_count(), 0.0));
  const auto window = window_day(f.dataset.series.begin()->second, day_of(plcgrid::testing::kT0));
  const auto sal = regression_activation_map(model, window);
  CHECK(sal.size() == kSlotsPerDay * kChannels);
  CHECK(std::all_of(sal.begin(), sal.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("activation map: matches input finite differences and is non-negative") {
  const auto f = joint_fixture(1);
  auto model = build_joint_model(tiny_params());
  const auto window = window_day(f.dataset.series.begin()->second, day_of(plcgrid::testing::kT0));
  const auto before = model.net.flat_parameters();
  const auto sal = regression_activation_map(model, window);
  CHECK(model.net.flat_parameters() == before);
  CHECK(std::all_of(sal.begin(), sal.end(), [](double v) { return v >= 0.0; }));
  Rng rng(4);
  std::uniform_int_distribution<std::size_t> pick(0, sal.size() - 1);
  std::size_t checked = 0;
  for (int k = 0; k < 20; ++k) {
    const std::size_t idx = pick(rng);
    const double h = 1.0 / 64;
    auto up = window, down = window;
    up.matrix[idx] = static_cast<float>(window.matrix[idx] + h);
    down.matrix[idx] = static_cast<float>(window.matrix[idx] - h);
    const double step = static_cast<double>(up.matrix[idx]) - down.matrix[idx];
    const double numeric = std::abs((predict_joints(model, up).raw - predict_joints(model, down).raw) / step);
    const double rel = std::abs(numeric - sal[idx]) / std::max(1e-8, numeric + sal[idx]);
    CHECK(rel <= 1e-3);
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("sensitivity: unbounded tolerance keeps every window, profile sums to one") {
  const auto f = joint_fixture(2);
  const auto d = build_joint_dataset(f.dataset, f.topology, f.truth, 0.34, 1);
  auto model = build_joint_model(tiny_params());
  const auto all = d.train.size();
  const auto prof = channel_sensitivity(model, d.train, std::numeric_limits<double>::infinity());
  CHECK(prof.n_windows == all);
  CHECK(prof.per_channel.size() == kChannels);
  CHECK(std::abs(std::accumulate(prof.per_channel.begin(), prof.per_channel.end(), 0.0) - 1.0) < 1e-9);
  CHECK_THROWS_AS(channel_sensitivity(model, d.train, -1.0), InvalidArgument);
}
