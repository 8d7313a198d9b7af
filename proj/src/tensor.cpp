#include "dfs/tensor.hpp"

#include <cmath>

namespace dfs {

Tensor::Tensor(std::vector<int> shp) : shape(std::move(shp)) {
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str());
  }
  data.assign(static_cast<size_t>(numel()), 0.0f);
}

int64_t Tensor::numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string Tensor::shape_str_of(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
}

void Tensor::zero_grad() {
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
}

void Tensor::set_requires_grad(bool rg) {
  requires_grad = rg;
  if (rg) ensure_grad();
}

TensorPtr Tensor::zeros(std::vector<int> shape) {
  return std::make_shared<Tensor>(std::move(shape));
}

TensorPtr Tensor::full(std::vector<int> shape, float value) {
  auto t = std::make_shared<Tensor>(std::move(shape));
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

TensorPtr Tensor::from_data(std::vector<int> shape, std::vector<float> values) {
  auto t = std::make_shared<Tensor>(std::move(shape));
  if (static_cast<int64_t>(values.size()) != t->numel()) {
    throw ShapeError("from_data: " + std::to_string(values.size()) + " values for shape " +
                     t->shape_str());
  }
  t->data = std::move(values);
  return t;
}

TensorPtr Tensor::scalar(float value) { return full({1}, value); }

TensorPtr Tensor::randn(std::vector<int> shape, std::mt19937& rng, float stddev) {
  auto t = std::make_shared<Tensor>(std::move(shape));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& v : t->data) v = dist(rng);
  return t;
}

TensorPtr Tensor::uniform(std::vector<int> shape, std::mt19937& rng, float lo, float hi) {
  auto t = std::make_shared<Tensor>(std::move(shape));
  std::uniform_real_distribution<float> dist(lo, hi);
  for (auto& v : t->data) v = dist(rng);
  return t;
}

void Graph::record(std::function<void()> backward_fn) {
  if (recording_) nodes_.push_back(std::move(backward_fn));
}

void Graph::backward(const TensorPtr& loss) {
  if (!recording_) throw UsageError("backward on a non-recording graph");
  if (consumed_) throw UsageError("backward called twice on the same graph");
  if (loss->numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + loss->shape_str());
  }
  consumed_ = true;
  loss->ensure_grad();
  loss->grad[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

Sgd::Sgd(std::vector<TensorPtr> params, float momentum, float weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    velocity_[i].assign(params_[i]->data.size(), 0.0f);
  }
}

void Sgd::step(float lr) {
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = *params_[i];
    if (w.grad.empty()) continue;
    auto& v = velocity_[i];
    for (size_t j = 0; j < w.data.size(); ++j) {
      v[j] = momentum_ * v[j] + w.grad[j] + weight_decay_ * w.data[j];
      w.data[j] -= lr * v[j];
    }
    w.zero_grad();
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void check_finite(const Tensor& t, const std::string& what) {
  for (float v : t.data) {
    if (!std::isfinite(v)) throw NumericError(what + ": non-finite value");
  }
}

}  // namespace dfs
