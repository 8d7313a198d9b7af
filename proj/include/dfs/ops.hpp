#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dfs/tensor.hpp"

namespace dfs {

// Autograd primitives. Every op appends its backward closure to the graph
// when recording and any input requires a gradient. Inputs are NCHW for
// image tensors, OIHW for convolution weights.

// Cross-correlation with zero padding. Output extents must divide exactly.
TensorPtr conv2d(Graph& g, const TensorPtr& input, const TensorPtr& weight, int stride, int pad);

// Batch normalization over (N, H, W) per channel. Train mode normalizes by
// batch statistics (biased variance) and updates the running buffers in
// place; eval mode reads them. gamma/beta are length-C.
TensorPtr batchnorm2d(Graph& g, const TensorPtr& input, const TensorPtr& gamma,
                      const TensorPtr& beta, const TensorPtr& running_mean,
                      const TensorPtr& running_var, bool train, float momentum, float eps);

struct LstmParams {
  TensorPtr wx;    // [D, 4H], gate order i, f, g, o
  TensorPtr wh;    // [H, 4H]
  TensorPtr bias;  // [4H]
};

// Standard LSTM cell update on a batch: x [N, D], h/c [N, H].
std::pair<TensorPtr, TensorPtr> lstm_cell(Graph& g, const TensorPtr& x, const TensorPtr& h,
                                          const TensorPtr& c, const LstmParams& params);

TensorPtr relu(Graph& g, const TensorPtr& x);
TensorPtr add(Graph& g, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Graph& g, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Graph& g, const TensorPtr& x, float factor);
TensorPtr add_const(Graph& g, const TensorPtr& x, float value);

// x [N, D] * w [D, M] + b [M]  ->  [N, M]
TensorPtr affine(Graph& g, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

// [N, C, H, W] -> [N, C] channel means.
TensorPtr global_avg_pool(Graph& g, const TensorPtr& x);

// Softmax along `axis` (negative counts from the back).
TensorPtr softmax(Graph& g, const TensorPtr& x, int axis = -1);

// Mean negative log-likelihood of logits [N, C] at integer labels,
// computed with log-sum-exp stabilization. Returns a scalar.
TensorPtr cross_entropy(Graph& g, const TensorPtr& logits, const std::vector<int>& labels);

// Per-sample convex mixture: out[s] = sum_k coeffs[s, k] * branches[k][s].
// coeffs is [N, K]; every branch is [N, ...] of identical shape. Branches
// whose coefficient is exactly zero for a sample contribute nothing and the
// sum keeps option order, so a one-hot row reproduces that branch bit-exactly.
TensorPtr mix(Graph& g, const std::vector<TensorPtr>& branches, const TensorPtr& coeffs);

// Scalar sum_{s,k} p[s, k] * weights[k] over a [N, K] tensor.
TensorPtr weighted_sum(Graph& g, const TensorPtr& p, std::span<const double> weights);

// Scalar sum of all entries.
TensorPtr sum(Graph& g, const TensorPtr& x);

// C[M,N] += A[M,K] * B[K,N], row-major. Exposed for reuse by ops and tests.
void gemm_acc(int m, int n, int k, const float* a, const float* b, float* c);

}  // namespace dfs
