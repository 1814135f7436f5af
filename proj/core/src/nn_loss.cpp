#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "plcgrid/error.hpp"
#include "plcgrid/nn.hpp"

namespace plcgrid::nn {

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape) {
    throw InvalidArgument(std::string(what) + ": shapes " + to_string(a.shape) + " and " +
                          to_string(b.shape) + " differ");
  }
  if (a.size() == 0) throw InvalidArgument(std::string(what) + ": empty input");
}

}  // namespace

LossValue mae_loss(const Tensor& pred, const Tensor& target) {
  same_shape(pred, target, "mae_loss");
  LossValue r{0.0, Tensor(pred.shape)};
  const double inv = 1.0 / double(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    r.value += std::abs(d);
    r.grad[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
  }
  r.value *= inv;
  return r;
}

LossValue mse_loss(const Tensor& pred, const Tensor& target) {
  same_shape(pred, target, "mse_loss");
  LossValue r{0.0, Tensor(pred.shape)};
  const double inv = 1.0 / double(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    r.value += d * d;
    r.grad[i] = 2.0 * d * inv;
  }
  r.value *= inv;
  return r;
}

LossValue bce_with_logits(const Tensor& logits, const Tensor& target, const Tensor& mask) {
  same_shape(logits, target, "bce_with_logits");
  same_shape(logits, mask, "bce_with_logits");
  LossValue r{0.0, Tensor(logits.shape)};
  std::size_t count = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) count += mask[i] != 0.0 ? 1 : 0;
  if (count == 0) return r;
  const double inv = 1.0 / double(count);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double z = logits[i];
    const double t = target[i];
    // softplus(z) - t z, written to stay finite for large |z|.
    const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    r.value += softplus - t * z;
    const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    r.grad[i] = (sig - t) * inv;
  }
  r.value *= inv;
  return r;
}

LossValue supervised_contrastive_loss(const Tensor& embeddings, std::span<const int> labels,
                                      double temperature) {
  if (embeddings.rank() != 2) throw InvalidArgument("supcon: embeddings must be [b, d]");
  const std::size_t b = embeddings.dim(0), d = embeddings.dim(1);
  if (b < 2) throw InvalidArgument("supcon: batch must hold at least 2 embeddings");
  if (labels.size() != b) throw InvalidArgument("supcon: one label per embedding required");
  if (!(temperature > 0.0)) throw InvalidArgument("supcon: temperature must be > 0");

  std::vector<double> z(b * d), norm(b);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += embeddings[i * d + k] * embeddings[i * d + k];
    norm[i] = std::max(std::sqrt(s), 1e-12);
    for (std::size_t k = 0; k < d; ++k) z[i * d + k] = embeddings[i * d + k] / norm[i];
  }
  std::vector<double> sim(b * b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += z[i * d + k] * z[j * d + k];
      sim[i * b + j] = s / temperature;
    }
  }

  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i && labels[j] == labels[i]) {
        anchors.push_back(i);
        break;
      }
    }
  }
  if (anchors.empty()) throw InvalidArgument("supcon: no anchor has a positive in the batch");

  // G[i][j] = dL/dsim_ij.
  std::vector<double> g(b * b, 0.0);
  LossValue r{0.0, Tensor(embeddings.shape)};
  const double inv_anchors = 1.0 / double(anchors.size());
  for (std::size_t i : anchors) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < b; ++a) {
      if (a != i) mx = std::max(mx, sim[i * b + a]);
    }
    double denom = 0.0;
    for (std::size_t a = 0; a < b; ++a) {
      if (a != i) denom += std::exp(sim[i * b + a] - mx);
    }
    const double log_denom = mx + std::log(denom);
    std::size_t npos = 0;
    double pos_sum = 0.0;
    for (std::size_t p = 0; p < b; ++p) {
      if (p != i && labels[p] == labels[i]) {
        ++npos;
        pos_sum += sim[i * b + p];
      }
    }
    r.value += (log_denom - pos_sum / double(npos)) * inv_anchors;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const double q = std::exp(sim[i * b + j] - log_denom);
      const double pos = labels[j] == labels[i] ? 1.0 / double(npos) : 0.0;
      g[i * b + j] = (q - pos) * inv_anchors;
    }
  }

  // dL/dz_k = sum_j (G_kj + G_jk) z_j / tau, then through the normalization.
  std::vector<double> dz(d);
  for (std::size_t k = 0; k < b; ++k) {
    std::fill(dz.begin(), dz.end(), 0.0);
    for (std::size_t j = 0; j < b; ++j) {
      const double w = (g[k * b + j] + g[j * b + k]) / temperature;
      if (w == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) dz[c] += w * z[j * d + c];
    }
    double dot = 0.0;
    for (std::size_t c = 0; c < d; ++c) dot += dz[c] * z[k * d + c];
    for (std::size_t c = 0; c < d; ++c) r.grad[k * d + c] = (dz[c] - z[k * d + c] * dot) / norm[k];
  }
  return r;
}

}  // namespace plcgrid::nn
