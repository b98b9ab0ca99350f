#pragma once

#include <span>
#include <vector>

#include "nestquant/rounding.hpp"
#include "nestquant/tensor.hpp"

namespace nestquant {

// Symmetric signed linear quantization, no zero-point. Dequantized value is
// scale * ints elementwise.
struct QuantizedTensor {
  IntTensor ints;
  float scale = 1.0f;
};

// Per-tensor scale: max|w| / (2^(bits-1) - 1), or 1 for an all-zero tensor.
float compute_scale(const FloatTensor& w, int bits);

// One scale per slice along `axis`.
std::vector<float> compute_channel_scales(const FloatTensor& w, int bits, int axis = 0);

// Clip(round(w/scale), -2^(bits-1), 2^(bits-1)-1). Nearest rounds half away
// from zero; Adaptive balances per-group rounding error (groups along
// `group_axis`) before clipping.
IntTensor quantize(const FloatTensor& w, float scale, int bits,
                   RoundingStrategy strategy = RoundingStrategy::Nearest, int group_axis = 0);

QuantizedTensor quantize_tensor(const FloatTensor& w, int bits,
                                RoundingStrategy strategy = RoundingStrategy::Nearest,
                                int group_axis = 0);

IntTensor quantize_per_channel(const FloatTensor& w, std::span<const float> scales, int bits,
                               int axis = 0,
                               RoundingStrategy strategy = RoundingStrategy::Nearest);

FloatTensor dequantize(const QuantizedTensor& q);

// (w - scale*ints) / scale == w/scale - ints, the residual in integer units.
FloatTensor perturbation(const FloatTensor& w, const QuantizedTensor& q);

}  // namespace nestquant
