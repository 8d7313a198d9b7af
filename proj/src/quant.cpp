#include "dfs/quant.hpp"

#include <algorithm>
#include <cmath>

namespace dfs {

BitOption BitOption::quant(int bits) {
  if (bits < 2 || bits > 31) {
    throw ConfigError("quant option bits must be in [2, 31], got " + std::to_string(bits));
  }
  return {Kind::Quant, bits};
}

double BitOption::rel_cost() const {
  switch (kind) {
    case Kind::Skip:
      return 0.0;
    case Kind::Keep:
      return 1.0;
    case Kind::Quant: {
      const double f = static_cast<double>(bits) / 32.0;
      return f * f;
    }
  }
  return 1.0;
}

std::string BitOption::name() const {
  switch (kind) {
    case Kind::Skip:
      return "skip";
    case Kind::Keep:
      return "keep";
    case Kind::Quant:
      return "q" + std::to_string(bits);
  }
  return "keep";
}

std::vector<BitOption> make_option_set(std::vector<BitOption> options) {
  if (options.empty()) throw ConfigError("option set must not be empty");
  std::sort(options.begin(), options.end(),
            [](const BitOption& a, const BitOption& b) { return a.rel_cost() < b.rel_cost(); });
  int keeps = 0;
  for (size_t i = 0; i < options.size(); ++i) {
    if (options[i].kind == BitOption::Kind::Keep) ++keeps;
    if (i > 0 && options[i] == options[i - 1]) {
      throw ConfigError("option set contains duplicate option " + options[i].name());
    }
  }
  if (keeps != 1) {
    throw ConfigError("option set must contain keep exactly once, found " +
                      std::to_string(keeps));
  }
  return options;
}

std::vector<BitOption> default_option_set() {
  return make_option_set(
      {BitOption::skip(), BitOption::quant(8), BitOption::quant(16), BitOption::keep()});
}

TensorPtr fake_quantize(Graph& g, const TensorPtr& x, int bits) {
  if (bits < 2 || bits > 31) {
    throw ConfigError("fake_quantize: bits must be in [2, 31], got " + std::to_string(bits));
  }
  float s = 0.0f;
  for (float v : x->data) s = std::max(s, std::abs(v));

  auto out = Tensor::zeros(x->shape);
  if (s == 0.0f) {
    out->data = x->data;
  } else {
    const double q = static_cast<double>((1LL << (bits - 1)) - 1);
    const double delta = static_cast<double>(s) / q;
    for (size_t i = 0; i < x->data.size(); ++i) {
      const double v = std::clamp(static_cast<double>(x->data[i]), -static_cast<double>(s),
                                  static_cast<double>(s));
      const double k = std::nearbyint(v / delta);
      out->data[i] = static_cast<float>(k * delta);
    }
  }

  out->requires_grad = track_grad(g, x);
  if (out->requires_grad) {
    out->ensure_grad();
    g.record([x, out, s]() {
      // straight-through estimator, clipped at the range boundary
      for (size_t i = 0; i < x->data.size(); ++i) {
        if (std::abs(x->data[i]) <= s) x->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr quantized_conv2d(Graph& g, const TensorPtr& input, const TensorPtr& weight, int bits,
                           int stride, int pad) {
  auto qx = fake_quantize(g, input, bits);
  auto qw = fake_quantize(g, weight, bits);
  return conv2d(g, qx, qw, stride, pad);
}

}  // namespace dfs
