#include <algorithm>
#include <cmath>
#include <numeric>

#include "plcgrid/error.hpp"
#include "plcgrid/nn.hpp"
#include "plcgrid/random.hpp"

namespace plcgrid::nn {

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw InvalidArgument("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

void Optimizer::step(const std::vector<Parameter*>& params) {
  ++t_;
  for (Parameter* p : params) {
    if (p->frozen) continue;
    auto& w = p->value.data;
    const auto& g = p->value.grad;
    if (params_.kind == OptimizerKind::sgd) {
      if (params_.momentum == 0.0) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= params_.learning_rate * g[i];
        continue;
      }
      auto& m = m_[p];
      if (m.empty()) m.assign(w.size(), 0.0);
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = params_.momentum * m[i] + g[i];
        w[i] -= params_.learning_rate * m[i];
      }
      continue;
    }
    auto& m = m_[p];
    auto& v = v_[p];
    if (m.empty()) {
      m.assign(w.size(), 0.0);
      v.assign(w.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(params_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(params_.beta2, double(t_));
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = params_.beta1 * m[i] + (1.0 - params_.beta1) * g[i];
      v[i] = params_.beta2 * v[i] + (1.0 - params_.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= params_.learning_rate * mhat / (std::sqrt(vhat) + params_.epsilon);
    }
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(derive_seed(seed, "epoch"), epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TrainResult train(Sequential& net, const Tensor& x, const Tensor& y, LossKind loss,
                  const TrainParams& params) {
  if (x.rank() == 0 || x.dim(0) == 0) throw InvalidArgument("train: empty dataset");
  if (y.rank() == 0 || y.dim(0) != x.dim(0)) throw InvalidArgument("train: inputs and targets differ in count");
  if (params.batch == 0) throw InvalidArgument("train: batch must be >= 1");
  const std::size_t n = x.dim(0);
  Optimizer opt(params.optimizer);
  TrainResult result;
  for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
    const auto order = epoch_order(n, params.seed, epoch);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += params.batch) {
      const std::size_t stop = std::min(n, start + params.batch);
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Tensor xb = x.gather(idx);
      const Tensor yb = y.gather(idx);
      net.zero_grad();
      const Tensor out = net.forward(xb);
      const LossValue lv = loss == LossKind::mae ? mae_loss(out, yb) : mse_loss(out, yb);
      if (!std::isfinite(lv.value)) {
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) +
                              ", batch starting at " + std::to_string(start) +
                              "; lower the learning rate");
      }
      net.backward(lv.grad);
      opt.step(net.parameters());
      total += lv.value * double(stop - start);
    }
    result.loss_curve.push_back(total / double(n));
  }
  return result;
}

double half_square_loss(const Tensor& output, Tensor& grad) {
  grad = Tensor(output.shape);
  double s = 0.0;
  for (std::size_t i = 0; i < output.size(); ++i) {
    s += 0.5 * output[i] * output[i];
    grad[i] = output[i];
  }
  return s;
}

GradCheckResult grad_check(Sequential& net, const Tensor& input, const ScalarLoss& loss,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw InvalidArgument("grad_check: eps must be > 0");
  auto params = net.parameters();
  for (auto* p : params) {
    for (double v : p->value.data) {
      if (!std::isfinite(v)) throw InvalidArgument("grad_check: non-finite parameter in " + p->name);
    }
  }
  GradCheckResult result;
  net.zero_grad();
  Tensor grad;
  const double base = loss(net.forward(input), grad);
  if (!std::isfinite(base)) throw InvalidArgument("grad_check: non-finite loss");
  net.backward(grad);

  auto eval = [&]() {
    Tensor scratch;
    const double v = loss(net.forward(input), scratch);
    if (!std::isfinite(v)) throw InvalidArgument("grad_check: non-finite loss");
    return v;
  };

  Rng rng(derive_seed(options.seed, "grad-check"));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    if (p->frozen) continue;
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_per_parameter > 0 && coords.size() > options.max_per_parameter) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_per_parameter);
    }
    // backward() is not re-run below, so the analytic gradient stays intact.
    const std::vector<double> analytic = p->value.grad;
    for (std::size_t c : coords) {
      const double orig = p->value.data[c];
      p->value.data[c] = orig + options.eps;
      const double up = eval();
      p->value.data[c] = orig - options.eps;
      const double down = eval();
      p->value.data[c] = orig;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[c];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_parameter = "#" + std::to_string(pi) + " " + p->name + "[" + std::to_string(c) + "]";
      }
    }
  }
  // Leave the caches consistent with the unperturbed parameters.
  net.forward(input);
  return result;
}

}  // namespace plcgrid::nn
