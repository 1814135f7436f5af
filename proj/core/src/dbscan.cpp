#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "plcgrid/embed.hpp"
#include "plcgrid/error.hpp"

namespace plcgrid::embed {

namespace {

constexpr int kUnvisited = -2;
constexpr int kNoise = -1;

double sq_dist(const Matrix& pts, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (std::size_t c = 0; c < pts.cols; ++c) {
    const double d = pts(a, c) - pts(b, c);
    s += d * d;
  }
  return s;
}

std::vector<std::size_t> region(const Matrix& pts, std::size_t p, double eps2) {
  std::vector<std::size_t> out;
  for (std::size_t q = 0; q < pts.rows; ++q) {
    if (sq_dist(pts, p, q) <= eps2) out.push_back(q);
  }
  return out;
}

}  // namespace

std::vector<int> dbscan(const Matrix& points, double eps, std::size_t min_pts) {
  if (!(eps > 0.0)) throw InvalidArgument("dbscan: eps must be > 0");
  if (min_pts < 1) throw InvalidArgument("dbscan: minPts must be >= 1");
  const std::size_t n = points.rows;
  const double eps2 = eps * eps;
  std::vector<int> labels(n, kUnvisited);
  int cluster = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (labels[p] != kUnvisited) continue;
    auto seeds = region(points, p, eps2);
    if (seeds.size() < min_pts) {
      labels[p] = kNoise;
      continue;
    }
    labels[p] = cluster;
    std::deque<std::size_t> queue(seeds.begin(), seeds.end());
    while (!queue.empty()) {
      const std::size_t q = queue.front();
      queue.pop_front();
      if (labels[q] == kNoise) labels[q] = cluster;  // border point
      if (labels[q] != kUnvisited) continue;
      labels[q] = cluster;
      auto nq = region(points, q, eps2);
      if (nq.size() >= min_pts) queue.insert(queue.end(), nq.begin(), nq.end());
    }
    ++cluster;
  }
  return labels;
}

double kdistance_elbow(const Matrix& points, std::size_t min_pts) {
  const std::size_t n = points.rows;
  if (n < 3) throw InvalidArgument("kdistance_elbow needs at least 3 points");
  // The point itself counts toward minPts, so the k-th neighbour is min_pts - 1 away.
  const std::size_t k = std::clamp<std::size_t>(min_pts > 1 ? min_pts - 1 : 1, 1, n - 1);
  std::vector<double> kd(n);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[j] = sq_dist(points, i, j);
    d[i] = std::numeric_limits<double>::infinity();
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
    kd[i] = std::sqrt(d[k - 1]);
  }
  std::sort(kd.begin(), kd.end());
  const double lo = kd.front();
  const double hi = kd.back();
  if (hi - lo <= 0.0) return hi > 0.0 ? hi : 1e-9;
  std::size_t best = 0;
  double best_gap = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double xn = static_cast<double>(i) / static_cast<double>(n - 1);
    const double yn = (kd[i] - lo) / (hi - lo);
    if (xn - yn > best_gap) {
      best_gap = xn - yn;
      best = i;
    }
  }
  return std::max(kd[best], 1e-9);
}

}  // namespace plcgrid::embed
