#pragma once

#include <string>
#include <vector>

#include "dfs/ops.hpp"
#include "dfs/tensor.hpp"

namespace dfs {

// One execution choice for a gated block. Cost is relative to running the
// block at full bitwidth: skip is free, b-bit execution costs (b/32)^2
// because both weights and activations shrink.
struct BitOption {
  enum class Kind { Skip, Quant, Keep };

  Kind kind = Kind::Keep;
  int bits = 32;  // meaningful for Quant only

  static BitOption skip() { return {Kind::Skip, 0}; }
  static BitOption quant(int bits);
  static BitOption keep() { return {Kind::Keep, 32}; }

  double rel_cost() const;
  std::string name() const;  // "skip", "q8", "q16", "keep"

  bool operator==(const BitOption& other) const {
    return kind == other.kind && bits == other.bits;
  }
};

// Validates and normalizes an option list: sorted ascending by rel_cost,
// exactly one Keep, no duplicates.
std::vector<BitOption> make_option_set(std::vector<BitOption> options);

// Paper default: skip, 8 bits, 16 bits, keep.
std::vector<BitOption> default_option_set();

// Per-tensor symmetric uniform fake quantization with a dynamic max-abs
// range: out = round(clamp(x, -s, s) / d) * d with s = max|x| and
// d = s / (2^(bits-1) - 1). All-zero input is returned unchanged. Gradients
// pass straight through where |x| <= s and are cut outside.
TensorPtr fake_quantize(Graph& g, const TensorPtr& x, int bits);

// Convolution with both weights and input activations fake-quantized.
TensorPtr quantized_conv2d(Graph& g, const TensorPtr& input, const TensorPtr& weight, int bits,
                           int stride, int pad);

}  // namespace dfs
