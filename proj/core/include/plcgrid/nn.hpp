#pragma once

// A small reverse-mode engine: dense and dilated 1-d convolution layers,
// residual blocks, pooling, losses, optimizers and finite-difference checks.
//
// Activations carry the batch as their first dimension: [B, F] for dense
// layers and [B, C, L] for convolutions. Storage and accumulation are double.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace plcgrid::nn {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<double> data;
  /// Empty, or the same length as `data`.
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  std::size_t size() const noexcept { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const noexcept { return shape.size(); }
  bool has_grad() const noexcept { return !grad.empty(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  /// Rows (first-axis slices) at `index`, in that order.
  Tensor gather(std::span<const std::size_t> index) const;
  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape s) const;
};

std::size_t element_count(const Shape& shape);

struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;

  Parameter(std::string n, Shape s) : name(std::move(n)), value(std::move(s)) {
    value.grad.assign(value.size(), 0.0);
  }
  std::span<double> grad() { return value.grad; }
};

/// Serializable description of a layer: kind plus numeric attributes.
struct LayerSpec {
  std::string kind;
  std::map<std::string, double> attrs;

  double at(const std::string& key) const;
  bool operator==(const LayerSpec&) const = default;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual LayerSpec spec() const = 0;
  /// Caches what backward needs. Throws InvalidArgument on a shape mismatch.
  virtual Tensor forward(const Tensor& x) = 0;
  /// Accumulates parameter gradients and returns dL/dx.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
  /// Seeded fan-in scaled uniform initialization; biases start at zero.
  virtual void initialize(std::uint64_t /*seed*/) {}

  /// Freezing zeroes this layer's gradients on every backward pass.
  void set_frozen(bool frozen);
  bool frozen() const noexcept { return frozen_; }

 protected:
  bool frozen_ = false;
};

/// y = x W^T + b on [B, in].
class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out);
  std::string kind() const override { return "dense"; }
  LayerSpec spec() const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  void initialize(std::uint64_t seed) override;

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  std::size_t in() const noexcept { return in_; }
  std::size_t out() const noexcept { return out_; }

 private:
  std::size_t in_, out_;
  Parameter weight_;  // [out, in]
  Parameter bias_;    // [out]
  Tensor input_;
};

/// Dilated 1-d convolution with "same" zero padding on [B, C, L]. The kernel
/// must be odd; the receptive field is 1 + (kernel - 1) * dilation.
class Conv1d final : public Layer {
 public:
  Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t dilation = 1);
  std::string kind() const override { return "conv1d"; }
  LayerSpec spec() const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  void initialize(std::uint64_t seed) override;

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  std::size_t receptive_field() const noexcept { return 1 + (kernel_ - 1) * dilation_; }

 private:
  std::size_t cin_, cout_, kernel_, dilation_;
  Parameter weight_;  // [out, in, kernel]
  Parameter bias_;    // [out]
  Tensor input_;
};

class ReLU final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  LayerSpec spec() const override { return {"relu", {}}; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor input_;
};

/// Fixed elementwise y = scale * x + shift (input normalization).
class Affine final : public Layer {
 public:
  Affine(double scale, double shift) : scale_(scale), shift_(shift) {}
  std::string kind() const override { return "affine"; }
  LayerSpec spec() const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  double scale_, shift_;
  Shape shape_;
};

/// Averages contiguous groups of `group` channels: [B, C, L] -> [B, C/group, L].
class ChannelGroupPool final : public Layer {
 public:
  explicit ChannelGroupPool(std::size_t group);
  std::string kind() const override { return "channel_group_pool"; }
  LayerSpec spec() const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::size_t group_;
  Shape shape_;
};

/// Non-overlapping average pooling along L; a ragged tail is dropped.
class AvgPool1d final : public Layer {
 public:
  explicit AvgPool1d(std::size_t size);
  std::string kind() const override { return "avg_pool1d"; }
  LayerSpec spec() const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::size_t size_;
  Shape shape_;
};

/// [B, C, L] -> [B, C].
class GlobalAvgPool final : public Layer {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  LayerSpec spec() const override { return {"global_avg_pool", {}}; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape shape_;
};

/// out = skip(x) + conv2(relu(conv1(x))); skip is the identity when the
/// channel counts match and a 1x1 convolution otherwise.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                std::size_t dilation = 1);
  std::string kind() const override { return "residual"; }
  LayerSpec spec() const override;
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override;
  void initialize(std::uint64_t seed) override;

  Conv1d& conv1() { return conv1_; }
  Conv1d& conv2() { return conv2_; }
  bool has_projection() const noexcept { return projection_ != nullptr; }

 private:
  std::size_t cin_, cout_, kernel_, dilation_;
  Conv1d conv1_;
  ReLU relu_;
  Conv1d conv2_;
  std::unique_ptr<Conv1d> projection_;
};

/// [B, ...] -> [B, prod(...)].
class Flatten final : public Layer {
 public:
  std::string kind() const override { return "flatten"; }
  LayerSpec spec() const override { return {"flatten", {}}; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape shape_;
};

/// Per-edge features [E, F] -> one sequence [1, F, E] for the convolutions.
class EdgesToSequence final : public Layer {
 public:
  std::string kind() const override { return "edges_to_sequence"; }
  LayerSpec spec() const override { return {"edges_to_sequence", {}}; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape shape_;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec);

/// Ordered layers with a parameter registry. Range arguments select the
/// half-open layer interval [begin, end) so callers can tap intermediate
/// activations (e.g. an embedding before the head).
class Sequential {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  Sequential& add(std::unique_ptr<Layer> layer);
  template <class L, class... Args>
  L& emplace(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    add(std::move(p));
    return ref;
  }

  std::size_t size() const noexcept { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  void initialize(std::uint64_t seed);
  std::uint64_t seed() const noexcept { return seed_; }

  /// Errors name the failing layer.
  Tensor forward(const Tensor& x, std::size_t begin = 0, std::size_t end = npos);
  /// Throws when the matching forward pass has not run.
  Tensor backward(const Tensor& grad_out, std::size_t begin = 0, std::size_t end = npos);

  std::vector<Parameter*> parameters();
  std::size_t parameter_count();
  void zero_grad();
  /// Copies parameter values; shapes must agree.
  std::vector<double> flat_parameters();
  void set_flat_parameters(std::span<const double> values);
  std::vector<LayerSpec> specs() const;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<bool> forwarded_;
  std::uint64_t seed_ = 0;
};

// ---- losses -----------------------------------------------------------------

struct LossValue {
  double value = 0.0;
  /// dL/d(prediction), same shape as the prediction.
  Tensor grad;
};

LossValue mae_loss(const Tensor& pred, const Tensor& target);
LossValue mse_loss(const Tensor& pred, const Tensor& target);
/// Mean binary cross-entropy over entries whose mask is nonzero; logits input.
/// Masked entries get zero gradient; an all-masked input gives 0.
LossValue bce_with_logits(const Tensor& logits, const Tensor& target, const Tensor& mask);
/// Supervised contrastive loss on [b, d] embeddings (L2-normalized internally).
LossValue supervised_contrastive_loss(const Tensor& embeddings, std::span<const int> labels,
                                      double temperature);

enum class LossKind { mae, mse };

// ---- optimizers -------------------------------------------------------------

enum class OptimizerKind { sgd, adam };

struct OptimizerParams {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.0;  // sgd only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

OptimizerKind parse_optimizer(std::string_view name);

class Optimizer {
 public:
  explicit Optimizer(OptimizerParams params) : params_(params) {}
  /// Applies one update from the accumulated gradients; frozen parameters are skipped.
  void step(const std::vector<Parameter*>& params);

 private:
  OptimizerParams params_;
  std::map<const Parameter*, std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// ---- training ---------------------------------------------------------------

struct TrainParams {
  std::size_t epochs = 10;
  std::size_t batch = 32;
  OptimizerParams optimizer;
  std::uint64_t seed = 0;
};

struct TrainResult {
  /// Mean per-sample loss of each epoch.
  std::vector<double> loss_curve;
};

/// Seeded permutation of 0..n-1 for epoch `epoch`.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// Mini-batch training of `net` on inputs x [N, ...] and targets y [N, ...].
/// Throws DivergenceError on a non-finite loss.
TrainResult train(Sequential& net, const Tensor& x, const Tensor& y, LossKind loss,
                  const TrainParams& params);

// ---- gradient checking ------------------------------------------------------

/// Scalar loss of a network output; fills `grad` with dL/d(output).
using ScalarLoss = std::function<double(const Tensor& output, Tensor& grad)>;

struct GradCheckOptions {
  double eps = 1e-4;
  /// Coordinates checked per parameter tensor (0 = all); sampled with `seed`.
  std::size_t max_per_parameter = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
};

/// Central differences against backward(); relative error per coordinate is
/// |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(Sequential& net, const Tensor& input, const ScalarLoss& loss,
                           const GradCheckOptions& options = {});

/// 0.5 * sum(y^2); a smooth loss for checks.
double half_square_loss(const Tensor& output, Tensor& grad);

// ---- serialization ----------------------------------------------------------

struct StoredNetwork {
  Sequential net;
  /// Caller metadata saved alongside the layers (a JSON object).
  std::string metadata_json;
};

/// Versioned binary container: magic, version, JSON header, raw doubles.
std::string serialize_network(Sequential& net, const std::string& metadata_json = "{}");
StoredNetwork deserialize_network(std::string_view bytes);

}  // namespace plcgrid::nn
