#pragma once

// Test-only oracles, deliberately independent of the library's fast paths:
// a direct six-loop convolution, central finite differences, and a FLOP
// tally that recomputes costs from layer dimensions alone.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "dfs/tensor.hpp"

namespace oracle {

// Direct cross-correlation, six nested loops, no im2col.
inline dfs::TensorPtr conv2d_naive(const dfs::TensorPtr& x, const dfs::TensorPtr& w, int stride,
                                   int pad) {
  const int n = x->dim(0), ci = x->dim(1), h = x->dim(2), wd = x->dim(3);
  const int co = w->dim(0), kh = w->dim(2), kw = w->dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  auto out = dfs::Tensor::zeros({n, co, ho, wo});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < co; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (int c = 0; c < ci; ++c)
            for (int ki = 0; ki < kh; ++ki)
              for (int kj = 0; kj < kw; ++kj) {
                const int iy = oy * stride - pad + ki;
                const int ix = ox * stride - pad + kj;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += static_cast<double>(
                           x->data[((static_cast<size_t>(b) * ci + c) * h + iy) * wd + ix]) *
                       w->data[((static_cast<size_t>(o) * ci + c) * kh + ki) * kw + kj];
              }
          out->data[((static_cast<size_t>(b) * co + o) * ho + oy) * wo + ox] =
              static_cast<float>(acc);
        }
  return out;
}

// Central finite difference of a scalar-valued function w.r.t. one entry of
// one tensor. `f` must rebuild the whole forward pass on every call.
inline double finite_diff(const std::function<double()>& f, dfs::TensorPtr t, size_t index,
                          double delta = 1e-3) {
  const float saved = t->data[index];
  t->data[index] = static_cast<float>(saved + delta);
  const double fp = f();
  t->data[index] = static_cast<float>(saved - delta);
  const double fm = f();
  t->data[index] = saved;
  return (fp - fm) / (2.0 * delta);
}

// Fixed +-1 tensor; used to turn op outputs into small centered scalar
// losses so float32 finite differences stay precise.
inline dfs::TensorPtr rademacher(std::vector<int> shape, std::mt19937& rng) {
  auto t = dfs::Tensor::zeros(std::move(shape));
  std::bernoulli_distribution coin(0.5);
  for (auto& v : t->data) v = coin(rng) ? 1.0f : -1.0f;
  return t;
}

// Checks entries of `param` (or a random subset) against central differences
// of `loss_fn` with the usual atol+rtol criterion, where the absolute slack
// is rtol-scaled to the tensor's gradient magnitude. Returns the worst
// normalized deviation; <= 1 means every probe is within tolerance.
inline double check_grad_entries(const std::function<double()>& loss_fn,
                                 const std::function<void()>& backward_fn,
                                 const dfs::TensorPtr& param, std::mt19937& rng,
                                 int max_probes = -1, double delta = 1e-3, double rtol = 1e-3) {
  backward_fn();  // populates param->grad
  std::vector<float> analytic = param->grad;
  double gmax = 0.0;
  for (float v : analytic) gmax = std::max(gmax, static_cast<double>(std::abs(v)));
  const double atol = rtol * std::max(1.0, gmax);
  std::vector<size_t> idx(param->data.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (max_probes > 0 && idx.size() > static_cast<size_t>(max_probes)) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<size_t>(max_probes));
  }
  double worst = 0.0;
  for (size_t i : idx) {
    const double fd = finite_diff(loss_fn, param, i, delta);
    const double dev = std::abs(analytic[i] - fd) / (atol + rtol * std::abs(fd));
    worst = std::max(worst, dev);
  }
  return worst;
}

// FLOPs of one convolution, recomputed from dimensions: 2 per MAC.
inline int64_t conv_flops(int c_in, int c_out, int kh, int kw, int h_out, int w_out) {
  return 2LL * kh * kw * c_in * c_out * h_out * w_out;
}

}  // namespace oracle
