#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "plcgrid/embed.hpp"
#include "plcgrid/error.hpp"
#include "plcgrid/random.hpp"

namespace plcgrid::embed {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kMinProb = 1e-12;

double kl_divergence(const Matrix& p, const std::vector<double>& num, double sum_num) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double pij = p.data[i];
    if (pij <= 0.0) continue;
    const double qij = std::max(num[i] / sum_num, kMinProb);
    kl += pij * std::log(pij / qij);
  }
  return std::max(kl, 0.0);
}

}  // namespace

Matrix squared_distances(const Matrix& x) {
  const auto n = static_cast<Eigen::Index>(x.rows);
  Eigen::Map<const RowMatrix> xm(x.data.data(), n, static_cast<Eigen::Index>(x.cols));
  Matrix d(x.rows, x.rows);
  // Direct differences keep duplicates at exactly zero distance.
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (xm.row(i) - xm.row(j)).squaredNorm();
      d(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = v;
      d(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) = v;
    }
  }
  return d;
}

Matrix conditional_probabilities(const Matrix& sq_dist, double perplexity, double tol) {
  const std::size_t n = sq_dist.rows;
  const double target = std::log(perplexity);
  Matrix p(n, n);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dmin = std::min(dmin, sq_dist(i, j));
    }
    double beta = 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 200; ++iter) {
      double sum = 0.0;
      double weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
          row[j] = 0.0;
          continue;
        }
        const double shifted = sq_dist(i, j) - dmin;
        row[j] = std::exp(-beta * shifted);
        sum += row[j];
        weighted += shifted * row[j];
      }
      // Entropy of the normalized row, in nats.
      const double entropy = std::log(sum) + beta * weighted / sum;
      const double diff = entropy - target;
      if (std::abs(diff) < tol) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    double sum = 0.0;
    for (double v : row) sum += v;
    for (std::size_t j = 0; j < n; ++j) p(i, j) = row[j] / sum;
  }
  return p;
}

Matrix joint_probabilities(const Matrix& conditional) {
  const std::size_t n = conditional.rows;
  Matrix p(n, n);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) p(i, j) = (conditional(i, j) + conditional(j, i)) * scale;
  }
  return p;
}

EmbeddingResult tsne(const Matrix& x, const TsneParams& params) {
  const std::size_t n = x.rows;
  if (n < 5) throw InvalidArgument("tsne requires at least 5 points");
  if (!(params.perplexity > 1.0) ||
      !(params.perplexity < (static_cast<double>(n) - 1.0) / 3.0)) {
    throw InvalidArgument("perplexity " + std::to_string(params.perplexity) +
                          " infeasible for n = " + std::to_string(n) +
                          " (need 1 < perplexity < (n - 1) / 3)");
  }
  if (params.iters < 1 || params.kl_every < 1) throw InvalidArgument("tsne: iters must be >= 1");

  const Matrix p = joint_probabilities(conditional_probabilities(squared_distances(x),
                                                                 params.perplexity));

  EmbeddingResult r;
  r.params = params;
  r.points = Matrix(n, 2);
  Rng rng(derive_seed(params.seed, "tsne-init"));
  std::normal_distribution<double> init(0.0, 1e-4);
  for (auto& v : r.points.data) v = init(rng);

  const double rate = params.learning_rate > 0.0
                          ? params.learning_rate
                          : static_cast<double>(n) / (4.0 * std::max(params.exaggeration, 1.0));
  std::vector<double> update(n * 2, 0.0);
  std::vector<double> gains(n * 2, 1.0);
  std::vector<double> grad(n * 2, 0.0);
  std::vector<double> num(n * n, 0.0);
  auto& y = r.points.data;

  for (int iter = 0; iter < params.iters; ++iter) {
    const bool exaggerate = iter < params.exaggeration_iters;
    const double pscale = exaggerate ? params.exaggeration : 1.0;
    const double momentum = exaggerate ? 0.5 : 0.8;

    double sum_num = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num[i * n + i] = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[2 * i] - y[2 * j];
        const double dy = y[2 * i + 1] - y[2 * j + 1];
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * n + j] = v;
        num[j * n + i] = v;
        sum_num += 2.0 * v;
      }
    }
    // dC/dy_i = 4 sum_j (p_ij - q_ij) (1 + |y_i - y_j|^2)^-1 (y_i - y_j)
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0.0;
      double gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = num[i * n + j];
        const double m = (pscale * p.data[i * n + j] - w / sum_num) * w;
        gx += m * (y[2 * i] - y[2 * j]);
        gy += m * (y[2 * i + 1] - y[2 * j + 1]);
      }
      grad[2 * i] = 4.0 * gx;
      grad[2 * i + 1] = 4.0 * gy;
    }
    for (std::size_t k = 0; k < n * 2; ++k) {
      const bool same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
      gains[k] = same_sign ? std::max(gains[k] * 0.8, 0.01) : gains[k] + 0.2;
      update[k] = momentum * update[k] - rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }

    if ((iter + 1) % params.kl_every == 0 || iter + 1 == params.iters) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        num[i * n + i] = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
          const double dx = y[2 * i] - y[2 * j];
          const double dy = y[2 * i + 1] - y[2 * j + 1];
          const double v = 1.0 / (1.0 + dx * dx + dy * dy);
          num[i * n + j] = v;
          num[j * n + i] = v;
          s += 2.0 * v;
        }
      }
      r.kl_trace.push_back(kl_divergence(p, num, s));
      r.kl_iters.push_back(iter + 1);
    }
  }
  return r;
}

}  // namespace plcgrid::embed
