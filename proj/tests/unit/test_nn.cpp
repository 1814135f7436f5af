#include <doctest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "plcgrid/error.hpp"
#include "plcgrid/nn.hpp"

using namespace plcgrid;
using namespace plcgrid::nn;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
  Tensor t(std::move(s));
  Rng rng(seed);
  std::normal_distribution<double> g;
  for (auto& v : t.data) v = g(rng);
  return t;
}

/// Dense layer whose backward pass doubles the gradient of its first weight.
class CorruptedDense final : public Layer {
 public:
  CorruptedDense(std::size_t in, std::size_t out) : inner_(in, out) {}
  std::string kind() const override { return "corrupted_dense"; }
  LayerSpec spec() const override { return inner_.spec(); }
  Tensor forward(const Tensor& x) override { return inner_.forward(x); }
  Tensor backward(const Tensor& g) override {
    const double before = inner_.weight().grad()[0];
    auto dx = inner_.backward(g);
    inner_.weight().grad()[0] += inner_.weight().grad()[0] - before;
    return dx;
  }
  std::vector<Parameter*> parameters() override { return inner_.parameters(); }
  void initialize(std::uint64_t seed) override { inner_.initialize(seed); }

 private:
  Dense inner_;
};

void fill(Parameter& p, double v) { std::fill(p.value.data.begin(), p.value.data.end(), v); }

/// L = 0.5 * ||y||^2 evaluated after a forward pass, then backward.
double forward_backward(Sequential& net, const Tensor& x) {
  auto y = net.forward(x);
  Tensor g;
  const double l = half_square_loss(y, g);
  net.zero_grad();
  net.backward(g);
  return l;
}

}  // namespace

TEST_CASE("dense: identity weights pass input through, zero weights give zero") {
  Sequential net;
  auto& d = net.emplace<Dense>(3, 3);
  fill(d.weight(), 0.0);
  fill(d.bias(), 0.0);
  for (std::size_t i = 0; i < 3; ++i) d.weight().value[i * 3 + i] = 1.0;
  const Tensor x({2, 3}, {1, -2, 3, 0.5, 0, -1});
  CHECK(net.forward(x).data == x.data);
  fill(d.weight(), 0.0);
  for (double v : net.forward(x).data) CHECK(v == 0.0);
}

TEST_CASE("relu: negative to zero, positive unchanged") {
  ReLU r;
  const auto y = r.forward(Tensor({1, 2}, {-1.0, 2.0}));
  CHECK(y.data == std::vector<double>{0.0, 2.0});
}

TEST_CASE("shape mismatch names the failing layer; backward needs forward") {
  Sequential net;
  net.emplace<Dense>(4, 2);
  net.emplace<Dense>(3, 1);
  try {
    net.forward(Tensor({1, 4}));
    FAIL("expected a shape error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
  Sequential fresh;
  fresh.emplace<Dense>(2, 2);
  CHECK_THROWS_AS(fresh.backward(Tensor({1, 2})), InvalidArgument);
}

TEST_CASE("backward: linear net gradient is y x^T and parameters stay put") {
  Sequential net;
  auto& d = net.emplace<Dense>(2, 2);
  net.initialize(3);
  fill(d.bias(), 0.0);
  const auto before = net.flat_parameters();
  const Tensor x({1, 2}, {0.5, -1.5});
  const auto y = net.forward(x);
  forward_backward(net, x);
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t i = 0; i < 2; ++i) CHECK(d.weight().grad()[o * 2 + i] == doctest::Approx(y[o] * x[i]));
  }
  CHECK(net.flat_parameters() == before);
}

TEST_CASE("backward: two dense layers match a hand-derived 2x2 gradient") {
  Sequential net;
  auto& a = net.emplace<Dense>(2, 2);
  auto& b = net.emplace<Dense>(2, 2);
  a.weight().value.data = {1, 2, 3, 4};
  a.bias().value.data = {0, 0};
  b.weight().value.data = {1, -1, 0, 2};
  b.bias().value.data = {0, 0};
  const Tensor x({1, 2}, {1, 1});
  // h = (3, 7); y = (h0 - h1, 2 h1) = (-4, 14); dL/dy = y.
  forward_backward(net, x);
  CHECK(b.weight().grad()[0] == doctest::Approx(-12));
  CHECK(b.weight().grad()[1] == doctest::Approx(-28));
  CHECK(b.weight().grad()[2] == doctest::Approx(42));
  CHECK(b.weight().grad()[3] == doctest::Approx(98));
  // dL/dh = W2^T y = (-4, 4 + 28) = (-4, 32); dL/dW1 = dL/dh x^T.
  CHECK(a.weight().grad()[0] == doctest::Approx(-4));
  CHECK(a.weight().grad()[1] == doctest::Approx(-4));
  CHECK(a.weight().grad()[2] == doctest::Approx(32));
  CHECK(a.weight().grad()[3] == doctest::Approx(32));
}

TEST_CASE("frozen layers get zero gradient") {
  Sequential net;
  auto& d = net.emplace<Dense>(3, 2);
  net.initialize(1);
  d.set_frozen(true);
  forward_backward(net, random_tensor({2, 3}, 2));
  for (double g : d.weight().grad()) CHECK(g == 0.0);
}

TEST_CASE("grad_check: every layer type passes; a corrupted gradient is caught; no parameters is vacuous") {
  std::vector<std::pair<Sequential, Shape>> nets;
  {
    Sequential s;
    s.emplace<Conv1d>(2, 3, 5, 3);
    s.emplace<ReLU>();
    s.emplace<ResidualBlock>(3, 4, 3, 2);
    s.emplace<ChannelGroupPool>(2);
    s.emplace<AvgPool1d>(2);
    s.emplace<GlobalAvgPool>();
    s.emplace<Affine>(2.0, 0.5);
    s.emplace<Dense>(2, 1);
    nets.emplace_back(std::move(s), Shape{3, 2, 12});
  }
  {
    Sequential s;
    s.emplace<Dense>(5, 4);
    s.emplace<EdgesToSequence>();
    s.emplace<Conv1d>(4, 2, 3, 2);
    s.emplace<Flatten>();
    nets.emplace_back(std::move(s), Shape{6, 5});
  }
  for (std::size_t k = 0; k < nets.size(); ++k) {
    auto& [net, shape] = nets[k];
    net.initialize(10 + k);
    const auto r = grad_check(net, random_tensor(shape, 20 + k), half_square_loss);
    CHECK(r.max_rel_error <= 1e-3);
    CHECK(r.checked == net.parameter_count());
  }

  Sequential net;
  net.emplace<CorruptedDense>(3, 2);
  net.initialize(4);
  CHECK(grad_check(net, random_tensor({2, 3}, 5), half_square_loss).max_rel_error >= 0.3);

  Sequential empty;
  empty.emplace<ReLU>();
  CHECK(grad_check(empty, random_tensor({2, 3}, 5), half_square_loss).max_rel_error == 0.0);
}

TEST_CASE("dilated conv: an impulse reaches exactly the receptive field") {
  for (std::size_t k : {3UL, 5UL}) {
    for (std::size_t dil : {1UL, 2UL, 3UL}) {
      Conv1d conv(1, 1, k, dil);
      conv.initialize(7);
      fill(conv.bias(), 0.0);
      for (auto& w : conv.weight().value.data) w = 1.0;
      Tensor x({1, 1, 31});
      x[15] = 1.0;
      const auto y = conv.forward(x);
      std::size_t nonzero = 0;
      for (std::size_t i = 0; i < 31; ++i) {
        const std::size_t offset = i > 15 ? i - 15 : 15 - i;
        const bool on_tap = offset % dil == 0 && offset / dil <= (k - 1) / 2;
        CHECK((y[i] != 0.0) == on_tap);
        nonzero += y[i] != 0.0;
      }
      CHECK(nonzero == k);
      CHECK(conv.receptive_field() == 1 + (k - 1) * dil);
    }
  }
}

TEST_CASE("residual block with a zeroed branch is the identity") {
  ResidualBlock block(3, 3, 3);
  block.initialize(2);
  fill(block.conv2().weight(), 0.0);
  fill(block.conv2().bias(), 0.0);
  const auto x = random_tensor({2, 3, 9}, 3);
  CHECK(block.forward(x).data == x.data);
  CHECK_FALSE(block.has_projection());
}

TEST_CASE("optimizers: zero gradient leaves parameters unchanged") {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    Sequential net;
    net.emplace<Dense>(3, 2);
    net.initialize(1);
    net.zero_grad();
    const auto before = net.flat_parameters();
    OptimizerParams p;
    p.kind = kind;
    p.momentum = 0.9;
    Optimizer opt(p);
    for (int i = 0; i < 3; ++i) opt.step(net.parameters());
    CHECK(net.flat_parameters() == before);
  }
}

TEST_CASE("supervised contrastive loss: examples and batch-order invariance") {
  const Tensor same({2, 3}, {1, 2, 3, 1, 2, 3});
  const std::vector<int> two = {0, 0};
  CHECK(supervised_contrastive_loss(same, two, 0.1).value == doctest::Approx(0.0).epsilon(1e-12));

  const auto z = random_tensor({4, 3}, 9);
  const std::vector<int> labels = {0, 1, 0, 1};
  const double tau = 0.5;
  // Direct evaluation of the formula.
  std::vector<std::vector<double>> u(4, std::vector<double>(3));
  for (std::size_t i = 0; i < 4; ++i) {
    double n = 0.0;
    for (std::size_t d = 0; d < 3; ++d) n += z.data[i * 3 + d] * z.data[i * 3 + d];
    for (std::size_t d = 0; d < 3; ++d) u[i][d] = z.data[i * 3 + d] / std::sqrt(n);
  }
  auto dot = [&](std::size_t a, std::size_t b) { return u[a][0] * u[b][0] + u[a][1] * u[b][1] + u[a][2] * u[b][2]; };
  double total = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double denom = 0.0;
    for (std::size_t a = 0; a < 4; ++a) {
      if (a != i) denom += std::exp(dot(i, a) / tau);
    }
    double s = 0.0;
    std::size_t np = 0;
    for (std::size_t p = 0; p < 4; ++p) {
      if (p == i || labels[p] != labels[i]) continue;
      s += std::log(std::exp(dot(i, p) / tau) / denom);
      ++np;
    }
    total += -s / static_cast<double>(np);
  }
  const auto loss = supervised_contrastive_loss(z, labels, tau);
  CHECK(loss.value == doctest::Approx(total / 4).epsilon(1e-12));

  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  const std::vector<int> permuted_labels = {0, 0, 1, 1};
  CHECK(supervised_contrastive_loss(z.gather(perm), permuted_labels, tau).value == doctest::Approx(loss.value).epsilon(1e-12));
  const std::vector<int> lonely = {0, 1, 2, 3};
  CHECK_THROWS_AS(supervised_contrastive_loss(z, lonely, tau), InvalidArgument);
}

TEST_CASE("train: linear regression recovers the slope; zero rate changes nothing; seeded runs agree") {
  Tensor x({200, 1}), y({200, 1});
  Rng rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (std::size_t i = 0; i < 200; ++i) {
    x[i] = u(rng);
    y[i] = 3.0 * x[i] + 1.0 + noise(rng);
  }
  auto make = [] {
    Sequential net;
    net.emplace<Dense>(1, 1);
    net.initialize(2);
    return net;
  };
  TrainParams p;
  p.epochs = 200;
  p.batch = 20;
  p.optimizer.learning_rate = 0.05;
  p.seed = 3;
  auto net = make();
  const auto r = train(net, x, y, LossKind::mse, p);
  CHECK(r.loss_curve.size() == 200);
  CHECK(std::abs(net.flat_parameters()[0] - 3.0) < 0.05);

  auto twin = make();
  train(twin, x, y, LossKind::mse, p);
  CHECK(twin.flat_parameters() == net.flat_parameters());

  auto frozen = make();
  const auto before = frozen.flat_parameters();
  p.optimizer.kind = OptimizerKind::sgd;
  p.optimizer.learning_rate = 0.0;
  p.epochs = 2;
  train(frozen, x, y, LossKind::mae, p);
  CHECK(frozen.flat_parameters() == before);
}

TEST_CASE("train: a non-finite loss aborts") {
  Sequential net;
  net.emplace<Dense>(1, 1);
  net.initialize(1);
  Tensor x({2, 1}, {1.0, std::nan("")}), y({2, 1}, {1.0, 1.0});
  TrainParams p;
  p.epochs = 1;
  CHECK_THROWS_AS(train(net, x, y, LossKind::mse, p), DivergenceError);
}

TEST_CASE("masked BCE ignores masked entries") {
  const Tensor logits({1, 3}, {0.3, -2.0, 5.0}), target({1, 3}, {1, 0, 1}), mask({1, 3}, {1, 1, 0});
  auto perturbed = logits;
  perturbed[2] = -40.0;
  const auto a = bce_with_logits(logits, target, mask), b = bce_with_logits(perturbed, target, mask);
  CHECK(a.value == b.value);
  CHECK(a.grad[2] == 0.0);
  CHECK(bce_with_logits(logits, target, Tensor({1, 3})).value == 0.0);
}

TEST_CASE("serialization: a network survives a round trip; corrupted files are rejected") {
  Sequential net;
  net.emplace<Affine>(0.5, -1.0);
  net.emplace<Conv1d>(2, 3, 3, 2);
  net.emplace<ResidualBlock>(3, 4, 3);
  net.emplace<GlobalAvgPool>();
  net.emplace<Dense>(4, 1);
  net.initialize(6);
  const auto bytes = serialize_network(net, R"({"kind":"test"})");
  auto stored = deserialize_network(bytes);
  CHECK(stored.net.specs() == net.specs());
  CHECK(stored.net.flat_parameters() == net.flat_parameters());
  const auto x = random_tensor({2, 2, 7}, 1);
  CHECK(stored.net.forward(x).data == net.forward(x).data);
  CHECK_THROWS_AS(deserialize_network("garbage"), ParseError);
  CHECK_THROWS_AS(deserialize_network(bytes.substr(0, bytes.size() - 8)), ParseError);
}
