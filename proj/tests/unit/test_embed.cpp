#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "plcgrid/embed.hpp"
#include "plcgrid/error.hpp"

using namespace plcgrid;
using namespace plcgrid::embed;

namespace {

Matrix gaussian(std::size_t n, std::size_t d, std::uint64_t seed, double sigma = 1.0) {
  Matrix x(n, d);
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  for (auto& v : x.data) v = g(rng);
  return x;
}

/// Three tight blobs in d dimensions, 10 apart, `per` points each.
std::pair<Matrix, std::vector<int>> blobs(std::size_t per, std::size_t d, std::uint64_t seed) {
  Matrix x = gaussian(3 * per, d, seed, 0.1);
  std::vector<int> labels(3 * per);
  for (std::size_t i = 0; i < 3 * per; ++i) {
    const int c = static_cast<int>(i / per);
    labels[i] = c;
    x(i, static_cast<std::size_t>(c)) += 10.0;
  }
  return {x, labels};
}

double silhouette(const Matrix& p, const std::vector<int>& labels) {
  const std::size_t n = p.rows;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> by;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = std::hypot(p(i, 0) - p(j, 0), p(i, 1) - p(j, 1));
      by[labels[j]].first += d;
      by[labels[j]].second += 1;
    }
    const double a = by[labels[i]].first / by[labels[i]].second;
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, s] : by) {
      if (l != labels[i]) b = std::min(b, s.first / s.second);
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

TsneParams quick_tsne(std::uint64_t seed, double perplexity = 10.0) {
  TsneParams p;
  p.perplexity = perplexity;
  p.iters = 500;
  p.exaggeration_iters = 150;
  p.seed = seed;
  return p;
}

}  // namespace

TEST_CASE("pca: identical rows have zero variance") {
  Matrix x(6, 917, 3.0);
  const auto r = pca(x, 3);
  for (double v : r.explained_variance) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("pca: a rank-1 matrix puts all variance on the first component") {
  Matrix x(10, 917);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 917; ++j) x(i, j) = static_cast<double>(i) * std::sin(0.01 * j);
  }
  const auto r = pca(x, 3);
  CHECK(r.explained_variance[0] == doctest::Approx(r.total_variance).epsilon(1e-9));
  CHECK(r.explained_variance[1] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("pca: all components sum to the covariance trace, are orthonormal and reconstruct") {
  const auto x = gaussian(50, 917, 1);
  const auto r = pca(x, 50);
  const double sum = std::accumulate(r.explained_variance.begin(), r.explained_variance.end(), 0.0);
  double trace = 0.0;
  for (std::size_t j = 0; j < 917; ++j) {
    double m = 0.0, s = 0.0;
    for (std::size_t i = 0; i < 50; ++i) m += x(i, j);
    m /= 50;
    for (std::size_t i = 0; i < 50; ++i) s += (x(i, j) - m) * (x(i, j) - m);
    trace += s / 49;
  }
  CHECK(std::abs(sum - trace) < 1e-6);
  CHECK(std::abs(r.total_variance - trace) < 1e-6);
  for (std::size_t k = 1; k < 50; ++k) CHECK(r.explained_variance[k] <= r.explained_variance[k - 1] + 1e-12);
  for (std::size_t a = 0; a < 49; ++a) {
    for (std::size_t b = a; b < 49; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < 917; ++j) dot += r.components(a, j) * r.components(b, j);
      REQUIRE(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-8);
    }
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t j = 0; j < 917; ++j) {
      double v = r.mean[j];
      for (std::size_t k = 0; k < 50; ++k) v += r.projected(i, k) * r.components(k, j);
      worst = std::max(worst, std::abs(v - x(i, j)));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("pca: k beyond min(n, d) is an error") {
  CHECK_THROWS_AS(pca(gaussian(5, 917, 1), 6), InvalidArgument);
}

TEST_CASE("t-SNE: conditional rows sum to 1 and the joint matrix is symmetric with unit mass") {
  const auto x = gaussian(40, 20, 2);
  const auto c = conditional_probabilities(squared_distances(x), 8.0);
  for (std::size_t i = 0; i < 40; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 40; ++j) s += c(i, j);
    CHECK(std::abs(s - 1.0) < 1e-8);
    CHECK(c(i, i) == 0.0);
  }
  const auto p = joint_probabilities(c);
  double total = 0.0;
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t j = 0; j < 40; ++j) {
      total += p(i, j);
      REQUIRE(p(i, j) == p(j, i));
    }
  }
  CHECK(std::abs(total - 1.0) < 1e-8);
}

TEST_CASE("t-SNE: duplicate rows land together on every seed") {
  auto x = gaussian(100, 917, 3);
  for (std::size_t j = 0; j < 917; ++j) x(1, j) = x(0, j);
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = tsne(x, quick_tsne(seed, 5.0));
    double lo0 = 1e300, hi0 = -1e300, lo1 = 1e300, hi1 = -1e300;
    for (std::size_t i = 0; i < 100; ++i) {
      lo0 = std::min(lo0, r.points(i, 0));
      hi0 = std::max(hi0, r.points(i, 0));
      lo1 = std::min(lo1, r.points(i, 1));
      hi1 = std::max(hi1, r.points(i, 1));
    }
    const double diameter = std::hypot(hi0 - lo0, hi1 - lo1);
    CHECK(std::hypot(r.points(0, 0) - r.points(1, 0), r.points(0, 1) - r.points(1, 1)) <= 0.01 * diameter);
  }
}

TEST_CASE("t-SNE: KL keeps falling after exaggeration and blobs separate") {
  const auto [x, labels] = blobs(20, 917, 4);
  const auto r = tsne(x, quick_tsne(4));
  REQUIRE(!r.kl_trace.empty());
  std::size_t after = 0;
  while (after < r.kl_iters.size() && r.kl_iters[after] < r.params.exaggeration_iters) ++after;
  REQUIRE(after < r.kl_trace.size());
  CHECK(r.kl_trace.back() <= r.kl_trace[after]);
  for (double v : r.kl_trace) CHECK(v >= 0.0);
  for (double v : r.points.data) CHECK(std::isfinite(v));
  CHECK(silhouette(r.points, labels) >= 0.8);
}

TEST_CASE("t-SNE: infeasible perplexity is an error") {
  CHECK_THROWS_AS(tsne(gaussian(10, 5, 1), quick_tsne(1, 5.0)), InvalidArgument);
}

TEST_CASE("dbscan: one dense blob is a single cluster, a far point is noise") {
  Matrix p(6, 2);
  for (std::size_t i = 0; i < 5; ++i) p(i, 0) = 0.1 * static_cast<double>(i);
  p(5, 0) = 100.0;
  const auto l = dbscan(p, 1.0, 3);
  for (std::size_t i = 0; i < 5; ++i) CHECK(l[i] == 0);
  CHECK(l[5] == -1);
}

TEST_CASE("dbscan: two blobs 10 eps apart are two clusters") {
  Matrix p(10, 2);
  for (std::size_t i = 0; i < 10; ++i) {
    p(i, 0) = (i < 5 ? 0.0 : 10.0) + 0.1 * static_cast<double>(i % 5);
  }
  const auto l = dbscan(p, 1.0, 3);
  CHECK(std::set<int>(l.begin(), l.end()) == std::set<int>{0, 1});
}

TEST_CASE("dbscan: the core set survives any permutation of the input") {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = gaussian(40, 2, 50 + trial, 2.0);
    const double eps = 0.8;
    const std::size_t min_pts = 4;
    auto core_of = [&](const Matrix& m) {
      std::vector<bool> core(m.rows);
      for (std::size_t i = 0; i < m.rows; ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < m.rows; ++j) c += std::hypot(m(i, 0) - m(j, 0), m(i, 1) - m(j, 1)) <= eps;
        core[i] = c >= min_pts;
      }
      return core;
    };
    std::vector<std::size_t> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix q(40, 2);
    for (std::size_t i = 0; i < 40; ++i) {
      q(i, 0) = p(perm[i], 0);
      q(i, 1) = p(perm[i], 1);
    }
    const auto lp = dbscan(p, eps, min_pts), lq = dbscan(q, eps, min_pts);
    const auto cp = core_of(p);
    // Core points are clustered, and two cores share a cluster in one order iff they do in the other.
    for (std::size_t a = 0; a < 40; ++a) {
      if (!cp[perm[a]]) continue;
      CHECK(lq[a] >= 0);
      for (std::size_t b = 0; b < 40; ++b) {
        if (cp[perm[b]]) REQUIRE((lq[a] == lq[b]) == (lp[perm[a]] == lp[perm[b]]));
      }
    }
  }
}

TEST_CASE("dbscan: invalid parameters are rejected") {
  CHECK_THROWS_AS(dbscan(Matrix(3, 2), 0.0, 2), InvalidArgument);
  CHECK_THROWS_AS(dbscan(Matrix(3, 2), 1.0, 0), InvalidArgument);
}

TEST_CASE("knn: majority with ties to the smallest label") {
  CHECK(majority_label(std::vector<int>{2, 2, 5}) == 2);
  CHECK(majority_label(std::vector<int>{3, 1}) == 1);
}

TEST_CASE("knn: a reference spectrum with k = 1 returns its own label") {
  StateModel m;
  m.reference_spectra = Matrix(3, kChannels);
  m.reference_points = Matrix(3, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < kChannels; ++j) m.reference_spectra(i, j) = 10.0 * static_cast<double>(i);
    m.reference_points(i, 0) = 5.0 * static_cast<double>(i);
  }
  m.reference_labels = {4, 7, 9};
  m.k = 1;
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<float> q(kChannels, static_cast<float>(10.0 * static_cast<double>(i)));
    CHECK(knn_assign(m, q) == m.reference_labels[i]);
  }
  CHECK_THROWS(knn_assign(StateModel{}, std::vector<float>(kChannels, 0.0f)));
}

TEST_CASE("state model: full sample covers all rows, same seed gives the same model, JSON round trip") {
  const auto t = plcgrid::testing::chain(3);
  sim::SynthesisOptions so;
  so.with_tonemaps = false;
  const auto [ds, gt] = sim::synthesize_dataset(t, sim::TransferModel::linear(10, 60), sim::NoiseModel{},
                                                {plcgrid::testing::kT0, plcgrid::testing::kT0 + kDaySeconds}, 1, so);
  std::size_t rows = 0;
  for (const auto& [id, s] : ds.series) rows += s.size();
  StateParams params;
  params.tsne = quick_tsne(0, 20.0);
  const auto a = fit_connection_states(ds, rows, params, 5);
  CHECK(a.size() == rows);
  std::set<std::string> ids(a.reference_ids.begin(), a.reference_ids.end());
  CHECK(ids.size() == rows);
  const auto b = fit_connection_states(ds, rows, params, 5);
  CHECK(state_model_to_json(a) == state_model_to_json(b));
  CHECK(state_model_to_json(state_model_from_json(state_model_to_json(a))) == state_model_to_json(a));
  CHECK_THROWS_AS(fit_connection_states(ds, rows + 1, params, 5), InvalidArgument);
  // Every non-noise cluster has at least min_pts members and one centroid.
  std::map<int, std::size_t> counts;
  for (int l : a.reference_labels) {
    if (l >= 0) ++counts[l];
  }
  CHECK(counts.size() == a.cluster_count());
  for (const auto& [l, c] : counts) CHECK(c >= a.min_pts);
}
