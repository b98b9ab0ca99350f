#include "nestquant/quantize.hpp"

#include <algorithm>
#include <cmath>

namespace nestquant {

namespace {

void check_weight_bits(int bits) {
  if (bits < 2 || bits > 8)
    throw InvalidBitwidthError("weight bitwidth must be in [2,8], got " + std::to_string(bits));
}

void check_finite(const FloatTensor& w) {
  for (Index i = 0; i < w.numel(); ++i)
    if (!std::isfinite(w.data[i]))
      throw DataError("non-finite weight at index " + std::to_string(i));
}

float scale_from_absmax(float absmax, int bits) {
  if (absmax == 0.0f) return 1.0f;  // degenerate all-zero tensor keeps scale > 0
  return absmax / static_cast<float>((1 << (bits - 1)) - 1);
}

}  // namespace

float compute_scale(const FloatTensor& w, int bits) {
  check_weight_bits(bits);
  if (w.numel() == 0) throw DataError("cannot compute a scale for an empty tensor");
  check_finite(w);
  return scale_from_absmax(w.data.abs().maxCoeff(), bits);
}

std::vector<float> compute_channel_scales(const FloatTensor& w, int bits, int axis) {
  check_weight_bits(bits);
  if (axis < 0 || axis >= w.rank())
    throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " +
                     std::to_string(w.rank()));
  check_finite(w);

  const Index dim = w.shape[static_cast<std::size_t>(axis)];
  Index stride = 1;
  for (int a = axis + 1; a < w.rank(); ++a) stride *= w.shape[static_cast<std::size_t>(a)];

  std::vector<float> absmax(static_cast<std::size_t>(dim), 0.0f);
  for (Index i = 0; i < w.numel(); ++i) {
    const auto c = static_cast<std::size_t>((i / stride) % dim);
    absmax[c] = std::max(absmax[c], std::abs(w.data[i]));
  }
  std::vector<float> scales(absmax.size());
  for (std::size_t c = 0; c < absmax.size(); ++c) scales[c] = scale_from_absmax(absmax[c], bits);
  return scales;
}

IntTensor quantize(const FloatTensor& w, float scale, int bits, RoundingStrategy strategy,
                   int group_axis) {
  check_weight_bits(bits);
  if (!(scale > 0.0f)) throw DataError("scale must be positive");
  const IntRange range = int_range(bits);

  IntTensor out(w.shape, bits);
  if (strategy == RoundingStrategy::Adaptive) {
    Tensor<double> scaled;
    scaled.shape = w.shape;
    scaled.data = w.data.cast<double>() / static_cast<double>(scale);
    Tensor<std::int32_t> rounded = adaptive_round(scaled, group_axis);
    for (Index i = 0; i < w.numel(); ++i)
      out.data[i] = std::clamp(rounded.data[i], range.min, range.max);
    return out;
  }

  for (Index i = 0; i < w.numel(); ++i) {
    const double x = static_cast<double>(w.data[i]) / static_cast<double>(scale);
    if (!std::isfinite(x)) throw DataError("non-finite weight at index " + std::to_string(i));
    double r;
    switch (strategy) {
      case RoundingStrategy::Nearest: r = round_half_away(x); break;
      case RoundingStrategy::Up: r = std::ceil(x); break;
      case RoundingStrategy::BitShift:
      case RoundingStrategy::Down: r = std::floor(x); break;
      default: r = round_half_away(x); break;
    }
    r = std::clamp(r, static_cast<double>(range.min), static_cast<double>(range.max));
    out.data[i] = static_cast<std::int32_t>(r);
  }
  return out;
}

QuantizedTensor quantize_tensor(const FloatTensor& w, int bits, RoundingStrategy strategy,
                                int group_axis) {
  const float scale = compute_scale(w, bits);
  return {quantize(w, scale, bits, strategy, group_axis), scale};
}

IntTensor quantize_per_channel(const FloatTensor& w, std::span<const float> scales, int bits,
                               int axis, RoundingStrategy strategy) {
  check_weight_bits(bits);
  if (axis < 0 || axis >= w.rank()) throw ShapeError("invalid channel axis");
  const Index dim = w.shape[static_cast<std::size_t>(axis)];
  if (static_cast<Index>(scales.size()) != dim)
    throw ShapeError("expected " + std::to_string(dim) + " scales, got " +
                     std::to_string(scales.size()));
  Index stride = 1;
  for (int a = axis + 1; a < w.rank(); ++a) stride *= w.shape[static_cast<std::size_t>(a)];

  const IntRange range = int_range(bits);
  IntTensor out(w.shape, bits);
  for (Index i = 0; i < w.numel(); ++i) {
    const float s = scales[static_cast<std::size_t>((i / stride) % dim)];
    if (!(s > 0.0f)) throw DataError("scale must be positive");
    const double x = static_cast<double>(w.data[i]) / static_cast<double>(s);
    double r;
    switch (strategy) {
      case RoundingStrategy::Up: r = std::ceil(x); break;
      case RoundingStrategy::BitShift:
      case RoundingStrategy::Down: r = std::floor(x); break;
      default: r = round_half_away(x); break;
    }
    r = std::clamp(r, static_cast<double>(range.min), static_cast<double>(range.max));
    out.data[i] = static_cast<std::int32_t>(r);
  }
  return out;
}

FloatTensor dequantize(const QuantizedTensor& q) {
  FloatTensor out;
  out.shape = q.ints.shape;
  out.data = q.ints.data.cast<float>() * q.scale;
  return out;
}

FloatTensor perturbation(const FloatTensor& w, const QuantizedTensor& q) {
  if (w.shape != q.ints.shape)
    throw ShapeError("perturbation shapes differ: " + shape_string(w.shape) + " vs " +
                     shape_string(q.ints.shape));
  FloatTensor out;
  out.shape = w.shape;
  out.data.resize(w.numel());
  for (Index i = 0; i < w.numel(); ++i)
    out.data[i] = static_cast<float>(static_cast<double>(w.data[i]) / q.scale -
                                     static_cast<double>(q.ints.data[i]));
  return out;
}

}  // namespace nestquant
