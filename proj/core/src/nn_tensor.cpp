#include <algorithm>
#include <cmath>
#include <numeric>

#include "plcgrid/error.hpp"
#include "plcgrid/nn.hpp"
#include "plcgrid/random.hpp"

namespace plcgrid::nn {

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(element_count(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != element_count(shape)) {
    throw InvalidArgument("tensor: " + std::to_string(data.size()) + " values for shape " +
                          to_string(shape));
  }
}

Tensor Tensor::gather(std::span<const std::size_t> index) const {
  if (shape.empty()) throw InvalidArgument("gather on a scalar tensor");
  const std::size_t stride = shape[0] == 0 ? 0 : data.size() / shape[0];
  Shape s = shape;
  s[0] = index.size();
  Tensor out(s);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape[0]) throw InvalidArgument("gather index out of range");
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(index[i] * stride), stride,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return out;
}

Tensor Tensor::reshaped(Shape s) const {
  if (element_count(s) != data.size()) {
    throw InvalidArgument("cannot reshape " + to_string(shape) + " to " + to_string(s));
  }
  return Tensor(std::move(s), data);
}

double LayerSpec::at(const std::string& key) const {
  auto it = attrs.find(key);
  if (it == attrs.end()) throw ParseError("layer '" + kind + "' lacks attribute '" + key + "'");
  return it->second;
}

void Layer::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto* p : parameters()) p->frozen = frozen;
}

Sequential& Sequential::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
  forwarded_.push_back(false);
  return *this;
}

void Sequential::initialize(std::uint64_t seed) {
  seed_ = seed;
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->initialize(derive_seed(seed, i));
}

Tensor Sequential::forward(const Tensor& x, std::size_t begin, std::size_t end) {
  end = std::min(end, layers_.size());
  Tensor h = x;
  for (std::size_t i = begin; i < end; ++i) {
    try {
      h = layers_[i]->forward(h);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("layer " + std::to_string(i) + " (" + layers_[i]->kind() + "): " +
                            e.what());
    }
    forwarded_[i] = true;
  }
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out, std::size_t begin, std::size_t end) {
  end = std::min(end, layers_.size());
  Tensor g = grad_out;
  for (std::size_t i = end; i-- > begin;) {
    if (!forwarded_[i]) {
      throw InvalidArgument("backward through layer " + std::to_string(i) + " (" +
                            layers_[i]->kind() + ") before forward");
    }
    g = layers_[i]->backward(g);
    if (layers_[i]->frozen()) {
      for (auto* p : layers_[i]->parameters()) std::fill(p->grad().begin(), p->grad().end(), 0.0);
    }
  }
  return g;
}

std::vector<Parameter*> Sequential::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    for (auto* p : l->parameters()) out.push_back(p);
  }
  return out;
}

std::size_t Sequential::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

void Sequential::zero_grad() {
  for (auto* p : parameters()) std::fill(p->grad().begin(), p->grad().end(), 0.0);
}

std::vector<double> Sequential::flat_parameters() {
  std::vector<double> out;
  for (auto* p : parameters()) out.insert(out.end(), p->value.data.begin(), p->value.data.end());
  return out;
}

void Sequential::set_flat_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw InvalidArgument("expected " + std::to_string(parameter_count()) + " parameter values, got " +
                          std::to_string(values.size()));
  }
  std::size_t off = 0;
  for (auto* p : parameters()) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p->value.size(), p->value.data.begin());
    off += p->value.size();
  }
}

std::vector<LayerSpec> Sequential::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers_) out.push_back(l->spec());
  return out;
}

}  // namespace plcgrid::nn
