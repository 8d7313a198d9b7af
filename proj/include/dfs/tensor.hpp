#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dfs/error.hpp"

namespace dfs {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense n-dimensional float32 value in row-major order, with an optional
// same-shape gradient buffer. All math in the project runs on these.
class Tensor {
 public:
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty unless requires_grad
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<int> shp);

  int64_t numel() const { return numel_of(shape); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  // Allocates (or re-zeroes) the gradient buffer.
  void ensure_grad();
  void zero_grad();

  // Marks the tensor as a trainable leaf and allocates its grad buffer.
  void set_requires_grad(bool rg);

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const { return shape_str_of(shape); }

  static int64_t numel_of(const std::vector<int>& shape);
  static std::string shape_str_of(const std::vector<int>& shape);

  // Factories.
  static TensorPtr zeros(std::vector<int> shape);
  static TensorPtr full(std::vector<int> shape, float value);
  static TensorPtr from_data(std::vector<int> shape, std::vector<float> values);
  static TensorPtr scalar(float value);
  // Normal(0, stddev) entries.
  static TensorPtr randn(std::vector<int> shape, std::mt19937& rng, float stddev = 1.0f);
  // Uniform(lo, hi) entries.
  static TensorPtr uniform(std::vector<int> shape, std::mt19937& rng, float lo, float hi);
};

// Dynamic tape of one forward pass. Ops append a backward closure per
// recorded primitive; backward() replays them in reverse. The tape is
// rebuilt every forward pass and must be consumed at most once.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  // Records the backward closure of one primitive. No-op when not recording.
  void record(std::function<void()> backward_fn);

  // Reverse-mode sweep from a scalar loss. Populates grad on every
  // requires_grad tensor that fed into the loss.
  void backward(const TensorPtr& loss);

 private:
  std::vector<std::function<void()>> nodes_;
  bool recording_ = true;
  bool consumed_ = false;
};

// Decides whether an op output participates in the tape.
inline bool track_grad(const Graph& g, const TensorPtr& a) {
  return g.recording() && a->requires_grad;
}
inline bool track_grad(const Graph& g, const TensorPtr& a, const TensorPtr& b) {
  return g.recording() && (a->requires_grad || b->requires_grad);
}

// SGD with momentum and L2 weight decay:
//   v <- momentum * v + grad + weight_decay * w
//   w <- w - lr * v
// step() clears gradients afterwards.
class Sgd {
 public:
  Sgd(std::vector<TensorPtr> params, float momentum, float weight_decay);

  void step(float lr);
  void zero_grad();

  const std::vector<TensorPtr>& params() const { return params_; }

 private:
  std::vector<TensorPtr> params_;
  std::vector<std::vector<float>> velocity_;
  float momentum_;
  float weight_decay_;
};

// Throws NumericError naming `what` if any entry is NaN/Inf.
void check_finite(const Tensor& t, const std::string& what);

}  // namespace dfs
