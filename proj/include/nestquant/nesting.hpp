#pragma once

#include <map>
#include <string>
#include <vector>

#include "nestquant/packed_tensor.hpp"
#include "nestquant/quantize.hpp"
#include "nestquant/rounding.hpp"

namespace nestquant {

// One layer after decomposition: the high part is a standalone h-bit weight
// with scale * 2^l, the low part is the residual widened by one bit so that
// high * 2^l + low always reproduces the full integer weights exactly.
struct NestedLayer {
  std::string name;
  Shape shape;
  int full_bits = 8;   // n
  int high_bits = 8;   // h; equal to full_bits for a flat (non-nested) layer
  float scale = 1.0f;
  PackedTensor high;   // h-bit
  PackedTensor low;    // (l+1)-bit, empty when flat

  int low_shift() const { return full_bits - high_bits; }
  bool flat() const { return high_bits == full_bits; }
  float high_scale() const {
    return scale * static_cast<float>(std::int64_t{1} << low_shift());
  }
};

struct NestedModel {
  int full_bits = 8;
  int high_bits = 8;
  std::vector<NestedLayer> layers;

  bool flat() const { return high_bits == full_bits; }
  Index param_count() const {
    Index n = 0;
    for (const auto& l : layers) n += shape_numel(l.shape);
    return n;
  }
};

// Named FP32 tensors, the input side of the pipeline.
struct FloatModel {
  struct Layer {
    std::string name;
    FloatTensor weights;
  };
  std::vector<Layer> layers;
};

struct Decomposition {
  IntTensor high;
  IntTensor low;
  Index low_clip_events = 0;  // residuals clipped; always 0 when compensated
};

// Split n-bit integers into an h-bit high part (strategy-rounded ints/2^l,
// clipped to the h-bit range) and the residual. With compensate the residual
// is stored un-clipped in the one-bit-wider (l+1)-bit range, which makes
// recomposition lossless; without it the residual is clipped to l bits.
Decomposition decompose(const IntTensor& ints, int high_bits, RoundingStrategy strategy,
                        bool compensate = true, int group_axis = 0);

// Elementwise high * 2^low_shift + low. Result must fit
// (high.bits + low_shift) bits or the inputs are corrupt.
IntTensor recompose(const IntTensor& high, const IntTensor& low, int low_shift);

// Exhaustive decompose/recompose error statistics for one (strategy, n, h)
// cell, run without compensation over all 2^n representable values.
struct ErrorCensus {
  RoundingStrategy strategy = RoundingStrategy::Nearest;
  int full_bits = 8;
  int high_bits = 4;
  Index nonzero_count = 0;
  std::int32_t error_min = 0;
  std::int32_t error_max = 0;
  std::map<std::int32_t, Index> histogram;  // error value -> count, zero included
};

ErrorCensus error_census(int full_bits, int high_bits, RoundingStrategy strategy);

// Nested-bits recommendation from the FP32 model size:
//   size <  30 MB -> n/2 + 1
//   size < 300 MB -> n/2
//   otherwise     -> n/2 - 1
int advise_nested_bits(double fp32_model_size_mb, int full_bits);

struct NestOptions {
  int full_bits = 8;
  int high_bits = 4;
  RoundingStrategy strategy = RoundingStrategy::Adaptive;  // applied to the high part
  int group_axis = 0;
  int jobs = 1;
};

// Full pipeline per layer: per-tensor scale, adaptive n-bit quantization,
// strategy-rounded h-bit high part, compensated residual, both packed.
NestedModel nest_model(const FloatModel& model, const NestOptions& options);

// Single-bitwidth quantization into a flat container (no low payloads).
NestedModel quantize_model(const FloatModel& model, int bits,
                           RoundingStrategy strategy = RoundingStrategy::Adaptive, int jobs = 1);

// Valid (n, h) nesting pairs: n in {6, 8}, h in 3..n-1.
bool valid_nesting(int full_bits, int high_bits);

}  // namespace nestquant
