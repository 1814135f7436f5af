#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "plcgrid/error.hpp"
#include "plcgrid/nn.hpp"
#include "plcgrid/random.hpp"

namespace plcgrid::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMatrix>;
using ConstMapMat = Eigen::Map<const RowMatrix>;

void expect_rank(const Tensor& x, std::size_t rank, const char* what) {
  if (x.rank() != rank) {
    throw InvalidArgument(std::string(what) + " expects a rank-" + std::to_string(rank) +
                          " input, got " + to_string(x.shape));
  }
}

void uniform_fill(Parameter& p, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : p.value.data) v = u(rng);
}

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

}  // namespace

// ---- Dense ------------------------------------------------------------------

Dense::Dense(std::size_t in, std::size_t out)
    : in_(in), out_(out), weight_("weight", {out, in}), bias_("bias", {out}) {
  if (in == 0 || out == 0) throw InvalidArgument("dense: zero width");
}

LayerSpec Dense::spec() const {
  return {"dense", {{"in", double(in_)}, {"out", double(out_)}}};
}

void Dense::initialize(std::uint64_t seed) {
  Rng rng(seed);
  uniform_fill(weight_, std::sqrt(6.0 / double(in_)), rng);
  std::fill(bias_.value.data.begin(), bias_.value.data.end(), 0.0);
}

Tensor Dense::forward(const Tensor& x) {
  expect_rank(x, 2, "dense");
  if (x.dim(1) != in_) {
    throw InvalidArgument("dense expects " + std::to_string(in_) + " features, got " + to_string(x.shape));
  }
  input_ = x;
  const std::size_t b = x.dim(0);
  Tensor y({b, out_});
  ConstMapMat xm(x.data.data(), idx(b), idx(in_));
  ConstMapMat w(weight_.value.data.data(), idx(out_), idx(in_));
  MapMat ym(y.data.data(), idx(b), idx(out_));
  ym.noalias() = xm * w.transpose();
  Eigen::Map<const Eigen::RowVectorXd> bias(bias_.value.data.data(), idx(out_));
  ym.rowwise() += bias;
  return y;
}

Tensor Dense::backward(const Tensor& grad_out) {
  const std::size_t b = input_.dim(0);
  if (grad_out.shape != Shape{b, out_}) throw InvalidArgument("dense: gradient shape mismatch");
  ConstMapMat g(grad_out.data.data(), idx(b), idx(out_));
  ConstMapMat xm(input_.data.data(), idx(b), idx(in_));
  MapMat dw(weight_.value.grad.data(), idx(out_), idx(in_));
  dw.noalias() += g.transpose() * xm;
  Eigen::Map<Eigen::RowVectorXd> db(bias_.value.grad.data(), idx(out_));
  db += g.colwise().sum();
  ConstMapMat w(weight_.value.data.data(), idx(out_), idx(in_));
  Tensor dx({b, in_});
  MapMat dxm(dx.data.data(), idx(b), idx(in_));
  dxm.noalias() = g * w;
  return dx;
}

// ---- Conv1d -----------------------------------------------------------------

Conv1d::Conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t dilation)
    : cin_(in_channels),
      cout_(out_channels),
      kernel_(kernel),
      dilation_(dilation),
      weight_("weight", {out_channels, in_channels, kernel}),
      bias_("bias", {out_channels}) {
  if (cin_ == 0 || cout_ == 0) throw InvalidArgument("conv1d: zero channels");
  if (kernel_ == 0 || kernel_ % 2 == 0) throw InvalidArgument("conv1d: kernel must be odd");
  if (dilation_ == 0) throw InvalidArgument("conv1d: dilation must be >= 1");
}

LayerSpec Conv1d::spec() const {
  return {"conv1d",
          {{"in", double(cin_)}, {"out", double(cout_)}, {"kernel", double(kernel_)},
           {"dilation", double(dilation_)}}};
}

void Conv1d::initialize(std::uint64_t seed) {
  Rng rng(seed);
  uniform_fill(weight_, std::sqrt(6.0 / double(cin_ * kernel_)), rng);
  std::fill(bias_.value.data.begin(), bias_.value.data.end(), 0.0);
}

namespace {

// col[(c * k + j), l] = x[c, l + j * dilation - pad], zero outside.
void im2col(const double* x, std::size_t c, std::size_t len, std::size_t k, std::size_t dil,
            RowMatrix& col) {
  const auto pad = static_cast<std::ptrdiff_t>((k - 1) * dil / 2);
  col.setZero(idx(c * k), idx(len));
  for (std::size_t ci = 0; ci < c; ++ci) {
    const double* row = x + ci * len;
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j * dil) - pad;
      double* dst = col.data() + (ci * k + j) * len;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len),
                                                         static_cast<std::ptrdiff_t>(len) - shift);
      for (std::ptrdiff_t l = lo; l < hi; ++l) dst[l] = row[l + shift];
    }
  }
}

void col2im(const RowMatrix& col, std::size_t c, std::size_t len, std::size_t k, std::size_t dil,
            double* dx) {
  const auto pad = static_cast<std::ptrdiff_t>((k - 1) * dil / 2);
  for (std::size_t ci = 0; ci < c; ++ci) {
    double* row = dx + ci * len;
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j * dil) - pad;
      const double* src = col.data() + (ci * k + j) * len;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len),
                                                         static_cast<std::ptrdiff_t>(len) - shift);
      for (std::ptrdiff_t l = lo; l < hi; ++l) row[l + shift] += src[l];
    }
  }
}

}  // namespace

Tensor Conv1d::forward(const Tensor& x) {
  expect_rank(x, 3, "conv1d");
  if (x.dim(1) != cin_) {
    throw InvalidArgument("conv1d expects " + std::to_string(cin_) + " channels, got " + to_string(x.shape));
  }
  input_ = x;
  const std::size_t b = x.dim(0), len = x.dim(2);
  Tensor y({b, cout_, len});
  ConstMapMat w(weight_.value.data.data(), idx(cout_), idx(cin_ * kernel_));
  Eigen::Map<const Eigen::VectorXd> bias(bias_.value.data.data(), idx(cout_));
  RowMatrix col;
  for (std::size_t s = 0; s < b; ++s) {
    MapMat ys(y.data.data() + s * cout_ * len, idx(cout_), idx(len));
    if (kernel_ == 1) {
      ConstMapMat xs(x.data.data() + s * cin_ * len, idx(cin_), idx(len));
      ys.noalias() = w * xs;
    } else {
      im2col(x.data.data() + s * cin_ * len, cin_, len, kernel_, dilation_, col);
      ys.noalias() = w * col;
    }
    ys.colwise() += bias;
  }
  return y;
}

Tensor Conv1d::backward(const Tensor& grad_out) {
  const std::size_t b = input_.dim(0), len = input_.dim(2);
  if (grad_out.shape != Shape{b, cout_, len}) throw InvalidArgument("conv1d: gradient shape mismatch");
  MapMat dw(weight_.value.grad.data(), idx(cout_), idx(cin_ * kernel_));
  Eigen::Map<Eigen::VectorXd> db(bias_.value.grad.data(), idx(cout_));
  ConstMapMat w(weight_.value.data.data(), idx(cout_), idx(cin_ * kernel_));
  Tensor dx({b, cin_, len});
  RowMatrix col, dcol;
  for (std::size_t s = 0; s < b; ++s) {
    ConstMapMat g(grad_out.data.data() + s * cout_ * len, idx(cout_), idx(len));
    db += g.rowwise().sum();
    if (kernel_ == 1) {
      ConstMapMat xs(input_.data.data() + s * cin_ * len, idx(cin_), idx(len));
      dw.noalias() += g * xs.transpose();
      MapMat dxs(dx.data.data() + s * cin_ * len, idx(cin_), idx(len));
      dxs.noalias() = w.transpose() * g;
    } else {
      im2col(input_.data.data() + s * cin_ * len, cin_, len, kernel_, dilation_, col);
      dw.noalias() += g * col.transpose();
      dcol.noalias() = w.transpose() * g;
      col2im(dcol, cin_, len, kernel_, dilation_, dx.data.data() + s * cin_ * len);
    }
  }
  return dx;
}

// ---- elementwise --------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x) {
  input_ = x;
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  if (grad_out.shape != input_.shape) throw InvalidArgument("relu: gradient shape mismatch");
  Tensor dx(input_.shape);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = input_[i] > 0.0 ? grad_out[i] : 0.0;
  return dx;
}

LayerSpec Affine::spec() const { return {"affine", {{"scale", scale_}, {"shift", shift_}}}; }

Tensor Affine::forward(const Tensor& x) {
  shape_ = x.shape;
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = scale_ * x[i] + shift_;
  return y;
}

Tensor Affine::backward(const Tensor& grad_out) {
  if (grad_out.shape != shape_) throw InvalidArgument("affine: gradient shape mismatch");
  Tensor dx(shape_);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = scale_ * grad_out[i];
  return dx;
}

// ---- pooling ----------------------------------------------------------------

ChannelGroupPool::ChannelGroupPool(std::size_t group) : group_(group) {
  if (group == 0) throw InvalidArgument("channel_group_pool: group must be >= 1");
}

LayerSpec ChannelGroupPool::spec() const { return {"channel_group_pool", {{"group", double(group_)}}}; }

Tensor ChannelGroupPool::forward(const Tensor& x) {
  expect_rank(x, 3, "channel_group_pool");
  if (x.dim(1) % group_ != 0) {
    throw InvalidArgument("channel_group_pool: " + std::to_string(x.dim(1)) +
                          " channels not divisible by " + std::to_string(group_));
  }
  shape_ = x.shape;
  const std::size_t b = x.dim(0), c = x.dim(1), len = x.dim(2), g = c / group_;
  Tensor y({b, g, len});
  const double inv = 1.0 / double(group_);
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* src = x.data.data() + (s * c + ci) * len;
      double* dst = y.data.data() + (s * g + ci / group_) * len;
      for (std::size_t l = 0; l < len; ++l) dst[l] += src[l] * inv;
    }
  }
  return y;
}

Tensor ChannelGroupPool::backward(const Tensor& grad_out) {
  const std::size_t b = shape_[0], c = shape_[1], len = shape_[2], g = c / group_;
  if (grad_out.shape != Shape{b, g, len}) throw InvalidArgument("channel_group_pool: gradient shape mismatch");
  Tensor dx(shape_);
  const double inv = 1.0 / double(group_);
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* src = grad_out.data.data() + (s * g + ci / group_) * len;
      double* dst = dx.data.data() + (s * c + ci) * len;
      for (std::size_t l = 0; l < len; ++l) dst[l] = src[l] * inv;
    }
  }
  return dx;
}

AvgPool1d::AvgPool1d(std::size_t size) : size_(size) {
  if (size == 0) throw InvalidArgument("avg_pool1d: size must be >= 1");
}

LayerSpec AvgPool1d::spec() const { return {"avg_pool1d", {{"size", double(size_)}}}; }

Tensor AvgPool1d::forward(const Tensor& x) {
  expect_rank(x, 3, "avg_pool1d");
  if (x.dim(2) < size_) throw InvalidArgument("avg_pool1d: input shorter than pool size");
  shape_ = x.shape;
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2), out_len = len / size_;
  Tensor y({x.dim(0), x.dim(1), out_len});
  const double inv = 1.0 / double(size_);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out_len; ++o) {
      double s = 0.0;
      for (std::size_t j = 0; j < size_; ++j) s += x.data[r * len + o * size_ + j];
      y.data[r * out_len + o] = s * inv;
    }
  }
  return y;
}

Tensor AvgPool1d::backward(const Tensor& grad_out) {
  const std::size_t rows = shape_[0] * shape_[1], len = shape_[2], out_len = len / size_;
  if (grad_out.shape != Shape{shape_[0], shape_[1], out_len}) {
    throw InvalidArgument("avg_pool1d: gradient shape mismatch");
  }
  Tensor dx(shape_);
  const double inv = 1.0 / double(size_);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out_len; ++o) {
      const double g = grad_out.data[r * out_len + o] * inv;
      for (std::size_t j = 0; j < size_; ++j) dx.data[r * len + o * size_ + j] = g;
    }
  }
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
  expect_rank(x, 3, "global_avg_pool");
  shape_ = x.shape;
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
  if (len == 0) throw InvalidArgument("global_avg_pool: empty length");
  Tensor y({x.dim(0), x.dim(1)});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t l = 0; l < len; ++l) s += x.data[r * len + l];
    y.data[r] = s / double(len);
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  const std::size_t rows = shape_[0] * shape_[1], len = shape_[2];
  if (grad_out.shape != Shape{shape_[0], shape_[1]}) throw InvalidArgument("global_avg_pool: gradient shape mismatch");
  Tensor dx(shape_);
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = grad_out.data[r] / double(len);
    std::fill_n(dx.data.begin() + static_cast<std::ptrdiff_t>(r * len), len, g);
  }
  return dx;
}

// ---- residual -----------------------------------------------------------------

ResidualBlock::ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                             std::size_t dilation)
    : cin_(in_channels),
      cout_(out_channels),
      kernel_(kernel),
      dilation_(dilation),
      conv1_(in_channels, out_channels, kernel, dilation),
      conv2_(out_channels, out_channels, kernel, dilation) {
  if (in_channels != out_channels) projection_ = std::make_unique<Conv1d>(in_channels, out_channels, 1, 1);
}

LayerSpec ResidualBlock::spec() const {
  return {"residual",
          {{"in", double(cin_)}, {"out", double(cout_)}, {"kernel", double(kernel_)},
           {"dilation", double(dilation_)}}};
}

std::vector<Parameter*> ResidualBlock::parameters() {
  std::vector<Parameter*> out = conv1_.parameters();
  for (auto* p : conv2_.parameters()) out.push_back(p);
  if (projection_) {
    for (auto* p : projection_->parameters()) out.push_back(p);
  }
  return out;
}

void ResidualBlock::initialize(std::uint64_t seed) {
  conv1_.initialize(derive_seed(seed, "conv1"));
  conv2_.initialize(derive_seed(seed, "conv2"));
  // Start close to the skip path so deep stacks train stably.
  for (auto& w : conv2_.weight().value.data) w *= 0.5;
  if (projection_) projection_->initialize(derive_seed(seed, "projection"));
}

Tensor ResidualBlock::forward(const Tensor& x) {
  expect_rank(x, 3, "residual");
  Tensor h = conv2_.forward(relu_.forward(conv1_.forward(x)));
  const Tensor skip = projection_ ? projection_->forward(x) : x;
  for (std::size_t i = 0; i < h.size(); ++i) h[i] += skip[i];
  return h;
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
  Tensor dx = conv1_.backward(relu_.backward(conv2_.backward(grad_out)));
  const Tensor dskip = projection_ ? projection_->backward(grad_out) : grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dskip[i];
  return dx;
}

// ---- reshaping ----------------------------------------------------------------

Tensor Flatten::forward(const Tensor& x) {
  if (x.rank() < 1) throw InvalidArgument("flatten: scalar input");
  shape_ = x.shape;
  return x.reshaped({x.dim(0), x.dim(0) == 0 ? 0 : x.size() / x.dim(0)});
}

Tensor Flatten::backward(const Tensor& grad_out) { return grad_out.reshaped(shape_); }

Tensor EdgesToSequence::forward(const Tensor& x) {
  expect_rank(x, 2, "edges_to_sequence");
  shape_ = x.shape;
  const std::size_t e = x.dim(0), f = x.dim(1);
  Tensor y({1, f, e});
  for (std::size_t i = 0; i < e; ++i) {
    for (std::size_t j = 0; j < f; ++j) y.data[j * e + i] = x.data[i * f + j];
  }
  return y;
}

Tensor EdgesToSequence::backward(const Tensor& grad_out) {
  const std::size_t e = shape_[0], f = shape_[1];
  if (grad_out.shape != Shape{1, f, e}) throw InvalidArgument("edges_to_sequence: gradient shape mismatch");
  Tensor dx(shape_);
  for (std::size_t i = 0; i < e; ++i) {
    for (std::size_t j = 0; j < f; ++j) dx.data[i * f + j] = grad_out.data[j * e + i];
  }
  return dx;
}

// ---- factory ------------------------------------------------------------------

std::unique_ptr<Layer> make_layer(const LayerSpec& s) {
  auto n = [&](const char* key) { return static_cast<std::size_t>(s.at(key)); };
  if (s.kind == "dense") return std::make_unique<Dense>(n("in"), n("out"));
  if (s.kind == "conv1d") return std::make_unique<Conv1d>(n("in"), n("out"), n("kernel"), n("dilation"));
  if (s.kind == "relu") return std::make_unique<ReLU>();
  if (s.kind == "affine") return std::make_unique<Affine>(s.at("scale"), s.at("shift"));
  if (s.kind == "channel_group_pool") return std::make_unique<ChannelGroupPool>(n("group"));
  if (s.kind == "avg_pool1d") return std::make_unique<AvgPool1d>(n("size"));
  if (s.kind == "global_avg_pool") return std::make_unique<GlobalAvgPool>();
  if (s.kind == "residual") return std::make_unique<ResidualBlock>(n("in"), n("out"), n("kernel"), n("dilation"));
  if (s.kind == "flatten") return std::make_unique<Flatten>();
  if (s.kind == "edges_to_sequence") return std::make_unique<EdgesToSequence>();
  throw ParseError("unknown layer kind '" + s.kind + "'");
}

}  // namespace plcgrid::nn
