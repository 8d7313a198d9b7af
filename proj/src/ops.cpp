#include "dfs/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dfs {

namespace {

inline float sigmoidf(float v) { return 1.0f / (1.0f + std::exp(-v)); }

// col[(c*kh+ki)*kw+kj, oy*wo+ox] = x[c, oy*stride-pad+ki, ox*stride-pad+kj]
void im2col(const float* x, int c_in, int h, int w, int kh, int kw, int stride, int pad, int ho,
            int wo, float* col) {
  const int plane = h * w;
  for (int c = 0; c < c_in; ++c) {
    const float* xc = x + static_cast<size_t>(c) * plane;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        float* row = col + (static_cast<size_t>((c * kh + ki) * kw + kj)) * (ho * wo);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          float* dst = row + static_cast<size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::memset(dst, 0, sizeof(float) * static_cast<size_t>(wo));
            continue;
          }
          const float* src = xc + static_cast<size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_acc(const float* col, int c_in, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, float* dx) {
  const int plane = h * w;
  for (int c = 0; c < c_in; ++c) {
    float* dxc = dx + static_cast<size_t>(c) * plane;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const float* row = col + (static_cast<size_t>((c * kh + ki) * kw + kj)) * (ho * wo);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          const float* src = row + static_cast<size_t>(oy) * wo;
          float* dst = dxc + static_cast<size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
void gemm_acc_ta(int m, int n, int k, const float* a, const float* b, float* c) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = a[static_cast<size_t>(p) * m + i];
      if (av == 0.0f) continue;
      const float* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_acc_tb(int m, int n, int k, const float* a, const float* b, float* c) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + static_cast<size_t>(j) * k;
      float acc = 0.0f;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

}  // namespace

void gemm_acc(int m, int n, int k, const float* a, const float* b, float* c) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<size_t>(i) * n;
    const float* arow = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

TensorPtr conv2d(Graph& g, const TensorPtr& input, const TensorPtr& weight, int stride, int pad) {
  if (input->rank() != 4 || weight->rank() != 4) {
    throw ShapeError("conv2d: expected NCHW input and OIHW weight, got " + input->shape_str() +
                     " and " + weight->shape_str());
  }
  if (stride <= 0) throw ConfigError("conv2d: stride must be positive");
  if (pad < 0) throw ConfigError("conv2d: pad must be non-negative");
  const int n = input->dim(0), c_in = input->dim(1), h = input->dim(2), w = input->dim(3);
  const int c_out = weight->dim(0), kh = weight->dim(2), kw = weight->dim(3);
  if (weight->dim(1) != c_in) {
    throw ShapeError("conv2d: input channels " + std::to_string(c_in) +
                     " != weight input channels " + std::to_string(weight->dim(1)) + " (input " +
                     input->shape_str() + ", weight " + weight->shape_str() + ")");
  }
  if (kh > h + 2 * pad || kw > w + 2 * pad) {
    throw ConfigError("conv2d: kernel " + weight->shape_str() + " does not fit padded input " +
                      input->shape_str() + " at pad " + std::to_string(pad));
  }
  if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0) {
    throw ConfigError("conv2d: output extent is not an exact division for input " +
                      input->shape_str() + ", kernel " + weight->shape_str() + ", stride " +
                      std::to_string(stride) + ", pad " + std::to_string(pad));
  }
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w + 2 * pad - kw) / stride + 1;
  const int ck = c_in * kh * kw;
  const int out_plane = ho * wo;

  auto out = Tensor::zeros({n, c_out, ho, wo});
  const size_t col_size = static_cast<size_t>(ck) * out_plane;
#pragma omp parallel
  {
    std::vector<float> col(col_size);
#pragma omp for schedule(static)
    for (int b = 0; b < n; ++b) {
      const float* xb = input->data.data() + static_cast<size_t>(b) * c_in * h * w;
      im2col(xb, c_in, h, w, kh, kw, stride, pad, ho, wo, col.data());
      float* yb = out->data.data() + static_cast<size_t>(b) * c_out * out_plane;
      gemm_acc(c_out, out_plane, ck, weight->data.data(), col.data(), yb);
    }
  }

  out->requires_grad = track_grad(g, input, weight);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([input, weight, out, stride, pad, n, c_in, h, w, c_out, kh, kw, ho, wo, ck,
              out_plane, col_size]() {
      // d_input = W^T * d_out, scattered back; samples are independent.
      if (input->requires_grad) {
#pragma omp parallel
        {
          std::vector<float> dcol(col_size);
#pragma omp for schedule(static)
          for (int b = 0; b < n; ++b) {
            const float* dyb = out->grad.data() + static_cast<size_t>(b) * c_out * out_plane;
            std::fill(dcol.begin(), dcol.end(), 0.0f);
            gemm_acc_ta(ck, out_plane, c_out, weight->data.data(), dyb, dcol.data());
            float* dxb = input->grad.data() + static_cast<size_t>(b) * c_in * h * w;
            col2im_acc(dcol.data(), c_in, h, w, kh, kw, stride, pad, ho, wo, dxb);
          }
        }
      }
      // d_weight accumulates over samples; keep the sample loop serial so
      // the summation order is fixed.
      if (weight->requires_grad) {
        std::vector<float> col(col_size);
        for (int b = 0; b < n; ++b) {
          const float* xb = input->data.data() + static_cast<size_t>(b) * c_in * h * w;
          im2col(xb, c_in, h, w, kh, kw, stride, pad, ho, wo, col.data());
          const float* dyb = out->grad.data() + static_cast<size_t>(b) * c_out * out_plane;
          gemm_acc_tb(c_out, ck, out_plane, dyb, col.data(), weight->grad.data());
        }
      }
    });
  }
  return out;
}

TensorPtr batchnorm2d(Graph& g, const TensorPtr& input, const TensorPtr& gamma,
                      const TensorPtr& beta, const TensorPtr& running_mean,
                      const TensorPtr& running_var, bool train, float momentum, float eps) {
  if (input->rank() != 4) {
    throw ShapeError("batchnorm2d: expected NCHW input, got " + input->shape_str());
  }
  const int n = input->dim(0), c = input->dim(1), h = input->dim(2), w = input->dim(3);
  if (gamma->numel() != c || beta->numel() != c) {
    throw ShapeError("batchnorm2d: gamma " + gamma->shape_str() + " / beta " + beta->shape_str() +
                     " do not match channel count " + std::to_string(c));
  }
  if (running_mean->numel() != c || running_var->numel() != c) {
    throw ShapeError("batchnorm2d: running stats do not match channel count " +
                     std::to_string(c));
  }
  if (eps <= 0.0f) throw ConfigError("batchnorm2d: eps must be positive");

  const int plane = h * w;
  const int64_t per_channel = static_cast<int64_t>(n) * plane;
  auto out = Tensor::zeros({n, c, h, w});
  auto xhat = std::make_shared<std::vector<float>>(input->data.size());
  auto inv_std = std::make_shared<std::vector<float>>(c);

#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    float mean, var;
    if (train) {
      double s = 0.0;
      for (int b = 0; b < n; ++b) {
        const float* x = input->data.data() + (static_cast<size_t>(b) * c + ch) * plane;
        for (int i = 0; i < plane; ++i) s += x[i];
      }
      mean = static_cast<float>(s / static_cast<double>(per_channel));
      double sq = 0.0;
      for (int b = 0; b < n; ++b) {
        const float* x = input->data.data() + (static_cast<size_t>(b) * c + ch) * plane;
        for (int i = 0; i < plane; ++i) {
          const double d = x[i] - mean;
          sq += d * d;
        }
      }
      var = static_cast<float>(sq / static_cast<double>(per_channel));
      running_mean->data[ch] = (1.0f - momentum) * running_mean->data[ch] + momentum * mean;
      running_var->data[ch] = (1.0f - momentum) * running_var->data[ch] + momentum * var;
    } else {
      mean = running_mean->data[ch];
      var = running_var->data[ch];
    }
    const float istd = 1.0f / std::sqrt(var + eps);
    (*inv_std)[ch] = istd;
    const float gm = gamma->data[ch], bt = beta->data[ch];
    for (int b = 0; b < n; ++b) {
      const size_t base = (static_cast<size_t>(b) * c + ch) * plane;
      const float* x = input->data.data() + base;
      float* xh = xhat->data() + base;
      float* y = out->data.data() + base;
      for (int i = 0; i < plane; ++i) {
        xh[i] = (x[i] - mean) * istd;
        y[i] = gm * xh[i] + bt;
      }
    }
  }

  out->requires_grad = g.recording() &&
                       (input->requires_grad || gamma->requires_grad || beta->requires_grad);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([input, gamma, beta, out, xhat, inv_std, train, n, c, plane, per_channel]() {
#pragma omp parallel for schedule(static)
      for (int ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < n; ++b) {
          const size_t base = (static_cast<size_t>(b) * c + ch) * plane;
          const float* dy = out->grad.data() + base;
          const float* xh = xhat->data() + base;
          for (int i = 0; i < plane; ++i) {
            sum_dy += dy[i];
            sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
          }
        }
        if (gamma->requires_grad) gamma->grad[ch] += static_cast<float>(sum_dy_xhat);
        if (beta->requires_grad) beta->grad[ch] += static_cast<float>(sum_dy);
        if (input->requires_grad) {
          const float gm = gamma->data[ch], istd = (*inv_std)[ch];
          if (train) {
            const float mean_dy = static_cast<float>(sum_dy / static_cast<double>(per_channel));
            const float mean_dy_xhat =
                static_cast<float>(sum_dy_xhat / static_cast<double>(per_channel));
            for (int b = 0; b < n; ++b) {
              const size_t base = (static_cast<size_t>(b) * c + ch) * plane;
              const float* dy = out->grad.data() + base;
              const float* xh = xhat->data() + base;
              float* dx = input->grad.data() + base;
              for (int i = 0; i < plane; ++i) {
                dx[i] += gm * istd * (dy[i] - mean_dy - xh[i] * mean_dy_xhat);
              }
            }
          } else {
            for (int b = 0; b < n; ++b) {
              const size_t base = (static_cast<size_t>(b) * c + ch) * plane;
              const float* dy = out->grad.data() + base;
              float* dx = input->grad.data() + base;
              for (int i = 0; i < plane; ++i) dx[i] += gm * istd * dy[i];
            }
          }
        }
      }
    });
  }
  return out;
}

std::pair<TensorPtr, TensorPtr> lstm_cell(Graph& g, const TensorPtr& x, const TensorPtr& h,
                                          const TensorPtr& c, const LstmParams& params) {
  if (x->rank() != 2 || h->rank() != 2 || c->rank() != 2) {
    throw ShapeError("lstm_cell: expected 2-d x/h/c, got " + x->shape_str() + ", " +
                     h->shape_str() + ", " + c->shape_str());
  }
  const int n = x->dim(0), d = x->dim(1), hs = h->dim(1);
  if (h->dim(0) != n || c->dim(0) != n || c->dim(1) != hs) {
    throw ShapeError("lstm_cell: batch/state mismatch between x " + x->shape_str() + ", h " +
                     h->shape_str() + ", c " + c->shape_str());
  }
  if (params.wx->rank() != 2 || params.wx->dim(0) != d || params.wx->dim(1) != 4 * hs ||
      params.wh->rank() != 2 || params.wh->dim(0) != hs || params.wh->dim(1) != 4 * hs ||
      params.bias->numel() != 4 * hs) {
    throw ShapeError("lstm_cell: parameter shapes wx " + params.wx->shape_str() + ", wh " +
                     params.wh->shape_str() + ", bias " + params.bias->shape_str() +
                     " inconsistent with x " + x->shape_str() + " and h " + h->shape_str());
  }

  const int g4 = 4 * hs;
  // preact = x*wx + h*wh + bias
  auto pre = std::make_shared<std::vector<float>>(static_cast<size_t>(n) * g4);
  for (int b = 0; b < n; ++b) {
    float* row = pre->data() + static_cast<size_t>(b) * g4;
    std::memcpy(row, params.bias->data.data(), sizeof(float) * static_cast<size_t>(g4));
  }
  gemm_acc(n, g4, d, x->data.data(), params.wx->data.data(), pre->data());
  gemm_acc(n, g4, hs, h->data.data(), params.wh->data.data(), pre->data());

  auto h_out = Tensor::zeros({n, hs});
  auto c_out = Tensor::zeros({n, hs});
  auto gates = std::make_shared<std::vector<float>>(static_cast<size_t>(n) * g4);
  for (int b = 0; b < n; ++b) {
    const float* p = pre->data() + static_cast<size_t>(b) * g4;
    float* gt = gates->data() + static_cast<size_t>(b) * g4;
    const float* cp = c->data.data() + static_cast<size_t>(b) * hs;
    float* co = c_out->data.data() + static_cast<size_t>(b) * hs;
    float* ho = h_out->data.data() + static_cast<size_t>(b) * hs;
    for (int j = 0; j < hs; ++j) {
      const float gi = sigmoidf(p[j]);
      const float gf = sigmoidf(p[hs + j]);
      const float gg = std::tanh(p[2 * hs + j]);
      const float go = sigmoidf(p[3 * hs + j]);
      gt[j] = gi;
      gt[hs + j] = gf;
      gt[2 * hs + j] = gg;
      gt[3 * hs + j] = go;
      co[j] = gf * cp[j] + gi * gg;
      ho[j] = go * std::tanh(co[j]);
    }
  }

  const bool rg = g.recording() &&
                  (x->requires_grad || h->requires_grad || c->requires_grad ||
                   params.wx->requires_grad || params.wh->requires_grad ||
                   params.bias->requires_grad);
  h_out->requires_grad = rg;
  c_out->requires_grad = rg;
  if (rg) {
    h_out->ensure_grad();
    c_out->ensure_grad();
    g.record([x, h, c, params, h_out, c_out, gates, n, d, hs, g4]() {
      std::vector<float> dpre(static_cast<size_t>(n) * g4, 0.0f);
      for (int b = 0; b < n; ++b) {
        const float* gt = gates->data() + static_cast<size_t>(b) * g4;
        const float* co = c_out->data.data() + static_cast<size_t>(b) * hs;
        const float* dho = h_out->grad.data() + static_cast<size_t>(b) * hs;
        const float* dco_in = c_out->grad.data() + static_cast<size_t>(b) * hs;
        const float* cp = c->data.data() + static_cast<size_t>(b) * hs;
        float* dp = dpre.data() + static_cast<size_t>(b) * g4;
        float* dc_prev = c->requires_grad ? c->grad.data() + static_cast<size_t>(b) * hs : nullptr;
        for (int j = 0; j < hs; ++j) {
          const float gi = gt[j], gf = gt[hs + j], gg = gt[2 * hs + j], go = gt[3 * hs + j];
          const float tc = std::tanh(co[j]);
          const float dc = dco_in[j] + dho[j] * go * (1.0f - tc * tc);
          const float do_ = dho[j] * tc;
          dp[j] = dc * gg * gi * (1.0f - gi);
          dp[hs + j] = dc * cp[j] * gf * (1.0f - gf);
          dp[2 * hs + j] = dc * gi * (1.0f - gg * gg);
          dp[3 * hs + j] = do_ * go * (1.0f - go);
          if (dc_prev) dc_prev[j] += dc * gf;
        }
      }
      if (x->requires_grad) gemm_acc_tb(n, d, g4, dpre.data(), params.wx->data.data(), x->grad.data());
      if (h->requires_grad) gemm_acc_tb(n, hs, g4, dpre.data(), params.wh->data.data(), h->grad.data());
      if (params.wx->requires_grad)
        gemm_acc_ta(d, g4, n, x->data.data(), dpre.data(), params.wx->grad.data());
      if (params.wh->requires_grad)
        gemm_acc_ta(hs, g4, n, h->data.data(), dpre.data(), params.wh->grad.data());
      if (params.bias->requires_grad) {
        for (int b = 0; b < n; ++b) {
          const float* dp = dpre.data() + static_cast<size_t>(b) * g4;
          for (int j = 0; j < g4; ++j) params.bias->grad[j] += dp[j];
        }
      }
    });
  }
  return {h_out, c_out};
}

TensorPtr relu(Graph& g, const TensorPtr& x) {
  auto out = Tensor::zeros(x->shape);
  for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] > 0.0f ? x->data[i] : 0.0f;
  out->requires_grad = track_grad(g, x);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([x, out]() {
      if (!x->requires_grad) return;
      for (size_t i = 0; i < x->data.size(); ++i) {
        if (x->data[i] > 0.0f) x->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr add(Graph& g, const TensorPtr& a, const TensorPtr& b) {
  if (!a->same_shape(*b)) {
    throw ShapeError("add: shape mismatch " + a->shape_str() + " vs " + b->shape_str());
  }
  auto out = Tensor::zeros(a->shape);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
  out->requires_grad = track_grad(g, a, b);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([a, b, out]() {
      if (a->requires_grad)
        for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i];
      if (b->requires_grad)
        for (size_t i = 0; i < b->data.size(); ++i) b->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr mul(Graph& g, const TensorPtr& a, const TensorPtr& b) {
  if (!a->same_shape(*b)) {
    throw ShapeError("mul: shape mismatch " + a->shape_str() + " vs " + b->shape_str());
  }
  auto out = Tensor::zeros(a->shape);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
  out->requires_grad = track_grad(g, a, b);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([a, b, out]() {
      if (a->requires_grad)
        for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += b->data[i] * out->grad[i];
      if (b->requires_grad)
        for (size_t i = 0; i < b->data.size(); ++i) b->grad[i] += a->data[i] * out->grad[i];
    });
  }
  return out;
}

TensorPtr scale(Graph& g, const TensorPtr& x, float factor) {
  auto out = Tensor::zeros(x->shape);
  for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = factor * x->data[i];
  out->requires_grad = track_grad(g, x);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([x, out, factor]() {
      for (size_t i = 0; i < x->data.size(); ++i) x->grad[i] += factor * out->grad[i];
    });
  }
  return out;
}

TensorPtr add_const(Graph& g, const TensorPtr& x, float value) {
  auto out = Tensor::zeros(x->shape);
  for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] + value;
  out->requires_grad = track_grad(g, x);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([x, out]() {
      for (size_t i = 0; i < x->data.size(); ++i) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr affine(Graph& g, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  if (x->rank() != 2 || w->rank() != 2 || x->dim(1) != w->dim(0)) {
    throw ShapeError("affine: x " + x->shape_str() + " incompatible with w " + w->shape_str());
  }
  const int n = x->dim(0), d = x->dim(1), m = w->dim(1);
  if (b->numel() != m) {
    throw ShapeError("affine: bias " + b->shape_str() + " does not match output width " +
                     std::to_string(m));
  }
  auto out = Tensor::zeros({n, m});
  for (int i = 0; i < n; ++i) {
    std::memcpy(out->data.data() + static_cast<size_t>(i) * m, b->data.data(),
                sizeof(float) * static_cast<size_t>(m));
  }
  gemm_acc(n, m, d, x->data.data(), w->data.data(), out->data.data());
  out->requires_grad =
      g.recording() && (x->requires_grad || w->requires_grad || b->requires_grad);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([x, w, b, out, n, d, m]() {
      if (x->requires_grad) gemm_acc_tb(n, d, m, out->grad.data(), w->data.data(), x->grad.data());
      if (w->requires_grad) gemm_acc_ta(d, m, n, x->data.data(), out->grad.data(), w->grad.data());
      if (b->requires_grad) {
        for (int i = 0; i < n; ++i) {
          const float* dy = out->grad.data() + static_cast<size_t>(i) * m;
          for (int j = 0; j < m; ++j) b->grad[j] += dy[j];
        }
      }
    });
  }
  return out;
}

TensorPtr global_avg_pool(Graph& g, const TensorPtr& x) {
  if (x->rank() != 4) {
    throw ShapeError("global_avg_pool: expected NCHW input, got " + x->shape_str());
  }
  const int n = x->dim(0), c = x->dim(1), plane = x->dim(2) * x->dim(3);
  auto out = Tensor::zeros({n, c});
  const float inv = 1.0f / static_cast<float>(plane);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const float* p = x->data.data() + (static_cast<size_t>(b) * c + ch) * plane;
      double s = 0.0;
      for (int i = 0; i < plane; ++i) s += p[i];
      out->data[static_cast<size_t>(b) * c + ch] = static_cast<float>(s) * inv;
    }
  }
  out->requires_grad = track_grad(g, x);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([x, out, n, c, plane, inv]() {
      for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
          const float dy = out->grad[static_cast<size_t>(b) * c + ch] * inv;
          float* dx = x->grad.data() + (static_cast<size_t>(b) * c + ch) * plane;
          for (int i = 0; i < plane; ++i) dx[i] += dy;
        }
      }
    });
  }
  return out;
}

TensorPtr softmax(Graph& g, const TensorPtr& x, int axis) {
  const int r = x->rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("softmax: axis out of range for shape " + x->shape_str());
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x->dim(i);
  const int k = x->dim(axis);
  for (int i = axis + 1; i < r; ++i) inner *= x->dim(i);

  auto out = Tensor::zeros(x->shape);
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const size_t base = static_cast<size_t>(o) * k * inner + in;
      float mx = x->data[base];
      for (int j = 1; j < k; ++j) mx = std::max(mx, x->data[base + static_cast<size_t>(j) * inner]);
      double denom = 0.0;
      for (int j = 0; j < k; ++j) {
        const float e = std::exp(x->data[base + static_cast<size_t>(j) * inner] - mx);
        out->data[base + static_cast<size_t>(j) * inner] = e;
        denom += e;
      }
      const float inv = static_cast<float>(1.0 / denom);
      for (int j = 0; j < k; ++j) out->data[base + static_cast<size_t>(j) * inner] *= inv;
    }
  }
  out->requires_grad = track_grad(g, x);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([x, out, outer, inner, k]() {
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          const size_t base = static_cast<size_t>(o) * k * inner + in;
          double dot = 0.0;
          for (int j = 0; j < k; ++j) {
            const size_t idx = base + static_cast<size_t>(j) * inner;
            dot += static_cast<double>(out->grad[idx]) * out->data[idx];
          }
          for (int j = 0; j < k; ++j) {
            const size_t idx = base + static_cast<size_t>(j) * inner;
            x->grad[idx] += out->data[idx] * (out->grad[idx] - static_cast<float>(dot));
          }
        }
      }
    });
  }
  return out;
}

TensorPtr cross_entropy(Graph& g, const TensorPtr& logits, const std::vector<int>& labels) {
  if (logits->rank() != 2) {
    throw ShapeError("cross_entropy: expected [N, C] logits, got " + logits->shape_str());
  }
  const int n = logits->dim(0), c = logits->dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(n));
  }
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= c) {
      throw InputError("cross_entropy: label " + std::to_string(labels[i]) +
                       " out of range [0, " + std::to_string(c) + ")");
    }
  }
  auto out = Tensor::zeros({1});
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* row = logits->data.data() + static_cast<size_t>(i) * c;
    float mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double lse = 0.0;
    for (int j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
    total += mx + std::log(lse) - row[labels[i]];
  }
  out->data[0] = static_cast<float>(total / n);

  out->requires_grad = track_grad(g, logits);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([logits, out, labels, n, c]() {
      const float dl = out->grad[0] / static_cast<float>(n);
      for (int i = 0; i < n; ++i) {
        const float* row = logits->data.data() + static_cast<size_t>(i) * c;
        float* drow = logits->grad.data() + static_cast<size_t>(i) * c;
        float mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double lse = 0.0;
        for (int j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
        const float inv = static_cast<float>(1.0 / lse);
        for (int j = 0; j < c; ++j) {
          float p = std::exp(row[j] - mx) * inv;
          if (j == labels[i]) p -= 1.0f;
          drow[j] += dl * p;
        }
      }
    });
  }
  return out;
}

TensorPtr mix(Graph& g, const std::vector<TensorPtr>& branches, const TensorPtr& coeffs) {
  if (branches.empty()) throw UsageError("mix: no branches");
  if (coeffs->rank() != 2) {
    throw ShapeError("mix: expected [N, K] coefficients, got " + coeffs->shape_str());
  }
  const int n = coeffs->dim(0), k = coeffs->dim(1);
  if (static_cast<int>(branches.size()) != k) {
    throw ShapeError("mix: " + std::to_string(branches.size()) + " branches for " +
                     std::to_string(k) + " coefficient columns");
  }
  for (const auto& br : branches) {
    if (!br->same_shape(*branches[0]) || br->dim(0) != n) {
      throw ShapeError("mix: branch shape " + br->shape_str() + " inconsistent with " +
                       branches[0]->shape_str() + " for batch " + std::to_string(n));
    }
  }
  const size_t per = static_cast<size_t>(branches[0]->numel() / n);
  auto out = Tensor::zeros(branches[0]->shape);
  for (int s = 0; s < n; ++s) {
    float* y = out->data.data() + static_cast<size_t>(s) * per;
    for (int j = 0; j < k; ++j) {
      const float cf = coeffs->data[static_cast<size_t>(s) * k + j];
      if (cf == 0.0f) continue;
      const float* br = branches[static_cast<size_t>(j)]->data.data() + static_cast<size_t>(s) * per;
      for (size_t i = 0; i < per; ++i) y[i] += cf * br[i];
    }
  }

  bool rg = coeffs->requires_grad;
  for (const auto& br : branches) rg = rg || br->requires_grad;
  out->requires_grad = g.recording() && rg;
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([branches, coeffs, out, n, k, per]() {
      for (int s = 0; s < n; ++s) {
        const float* dy = out->grad.data() + static_cast<size_t>(s) * per;
        for (int j = 0; j < k; ++j) {
          const auto& br = branches[static_cast<size_t>(j)];
          const float cf = coeffs->data[static_cast<size_t>(s) * k + j];
          if (br->requires_grad && cf != 0.0f) {
            float* dbr = br->grad.data() + static_cast<size_t>(s) * per;
            for (size_t i = 0; i < per; ++i) dbr[i] += cf * dy[i];
          }
          if (coeffs->requires_grad) {
            const float* bv = br->data.data() + static_cast<size_t>(s) * per;
            double dot = 0.0;
            for (size_t i = 0; i < per; ++i) dot += static_cast<double>(bv[i]) * dy[i];
            coeffs->grad[static_cast<size_t>(s) * k + j] += static_cast<float>(dot);
          }
        }
      }
    });
  }
  return out;
}

TensorPtr weighted_sum(Graph& g, const TensorPtr& p, std::span<const double> weights) {
  if (p->rank() != 2 || static_cast<size_t>(p->dim(1)) != weights.size()) {
    throw ShapeError("weighted_sum: tensor " + p->shape_str() + " incompatible with " +
                     std::to_string(weights.size()) + " weights");
  }
  const int n = p->dim(0), k = p->dim(1);
  auto out = Tensor::zeros({1});
  double total = 0.0;
  for (int s = 0; s < n; ++s) {
    for (int j = 0; j < k; ++j) {
      total += static_cast<double>(p->data[static_cast<size_t>(s) * k + j]) * weights[j];
    }
  }
  out->data[0] = static_cast<float>(total);
  out->requires_grad = track_grad(g, p);
  if (out->requires_grad) {
    out->ensure_grad();
    std::vector<float> wf(weights.begin(), weights.end());
    g.record([p, out, wf, n, k]() {
      const float dl = out->grad[0];
      for (int s = 0; s < n; ++s) {
        for (int j = 0; j < k; ++j) {
          p->grad[static_cast<size_t>(s) * k + j] += dl * wf[static_cast<size_t>(j)];
        }
      }
    });
  }
  return out;
}

TensorPtr sum(Graph& g, const TensorPtr& x) {
  auto out = Tensor::zeros({1});
  double total = 0.0;
  for (float v : x->data) total += v;
  out->data[0] = static_cast<float>(total);
  out->requires_grad = track_grad(g, x);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([x, out]() {
      const float dl = out->grad[0];
      for (size_t i = 0; i < x->data.size(); ++i) x->grad[i] += dl;
    });
  }
  return out;
}

}  // namespace dfs
