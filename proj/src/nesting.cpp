#include "nestquant/nesting.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace nestquant {

Decomposition decompose(const IntTensor& ints, int high_bits, RoundingStrategy strategy,
                        bool compensate, int group_axis) {
  const int n = ints.bits;
  if (high_bits >= n)
    throw InvalidBitwidthError("nested bitwidth " + std::to_string(high_bits) +
                               " must be below full bitwidth " + std::to_string(n));
  if (high_bits < 2) throw InvalidBitwidthError("nested bitwidth must be at least 2");
  const int shift = n - high_bits;
  const IntRange high_range = int_range(high_bits);
  const IntRange low_range =
      compensate ? IntRange{-(1 << shift), (1 << shift) - 1} : int_range(shift);

  Decomposition out;
  out.high = IntTensor(ints.shape, high_bits);
  out.low = IntTensor(ints.shape, compensate ? shift + 1 : shift);

  if (strategy == RoundingStrategy::Adaptive) {
    // ints / 2^shift is a dyadic rational with a tiny exponent, so the double
    // path below is exact.
    Tensor<double> scaled;
    scaled.shape = ints.shape;
    scaled.data = ints.data.cast<double>() / static_cast<double>(std::int64_t{1} << shift);
    Tensor<std::int32_t> rounded = adaptive_round(scaled, group_axis);
    for (Index i = 0; i < ints.numel(); ++i)
      out.high.data[i] = std::clamp(rounded.data[i], high_range.min, high_range.max);
  } else {
    for (Index i = 0; i < ints.numel(); ++i) {
      const auto r = static_cast<std::int32_t>(round_scalar(ints.data[i], shift, strategy));
      out.high.data[i] = std::clamp(r, high_range.min, high_range.max);
    }
  }

  for (Index i = 0; i < ints.numel(); ++i) {
    const std::int32_t residual = ints.data[i] - (out.high.data[i] << shift);
    const std::int32_t stored = std::clamp(residual, low_range.min, low_range.max);
    if (stored != residual) ++out.low_clip_events;
    out.low.data[i] = stored;
  }
  return out;
}

IntTensor recompose(const IntTensor& high, const IntTensor& low, int low_shift) {
  if (high.shape != low.shape)
    throw ShapeError("recompose shapes differ: " + shape_string(high.shape) + " vs " +
                     shape_string(low.shape));
  if (low_shift < 0 || low_shift > 30) throw InvalidBitwidthError("invalid low shift");
  const int n = high.bits + low_shift;
  const IntRange range = int_range(n);
  const IntRange low_declared = int_range(low.bits);

  IntTensor out(high.shape, n);
  for (Index i = 0; i < high.numel(); ++i) {
    if (low.data[i] < low_declared.min || low.data[i] > low_declared.max)
      throw RangeError("low value at index " + std::to_string(i) + " outside its bitwidth", i);
    const std::int32_t v = (high.data[i] << low_shift) + low.data[i];
    if (v < range.min || v > range.max)
      throw RangeError("recomposed value " + std::to_string(v) + " at index " +
                           std::to_string(i) + " outside int" + std::to_string(n) + " range",
                       i);
    out.data[i] = v;
  }
  return out;
}

ErrorCensus error_census(int full_bits, int high_bits, RoundingStrategy strategy) {
  if (strategy == RoundingStrategy::Adaptive)
    throw ConfigError("the census covers the elementwise strategies only");
  if (full_bits > 8) throw InvalidBitwidthError("census is defined for up to 8 bits");

  const IntRange full = int_range(full_bits);
  const int shift = full_bits - high_bits;
  const IntRange high_range = int_range(high_bits);
  const IntRange low_range = int_range(shift);

  ErrorCensus census;
  census.strategy = strategy;
  census.full_bits = full_bits;
  census.high_bits = high_bits;
  census.error_min = census.error_max = 0;

  bool first = true;
  for (std::int32_t w = full.min; w <= full.max; ++w) {
    const auto rounded = static_cast<std::int32_t>(round_scalar(w, shift, strategy));
    const std::int32_t high = std::clamp(rounded, high_range.min, high_range.max);
    const std::int32_t low = std::clamp(w - (high << shift), low_range.min, low_range.max);
    const std::int32_t error = w - ((high << shift) + low);

    ++census.histogram[error];
    if (error != 0) ++census.nonzero_count;
    if (first || error < census.error_min) census.error_min = error;
    if (first || error > census.error_max) census.error_max = error;
    first = false;
  }
  return census;
}

int advise_nested_bits(double fp32_model_size_mb, int full_bits) {
  if (full_bits != 6 && full_bits != 8)
    throw InvalidBitwidthError("nesting advice covers 6- and 8-bit models");
  if (!(fp32_model_size_mb > 0)) throw DataError("model size must be positive");
  if (fp32_model_size_mb < 30.0) return full_bits / 2 + 1;
  if (fp32_model_size_mb < 300.0) return full_bits / 2;
  return full_bits / 2 - 1;
}

bool valid_nesting(int full_bits, int high_bits) {
  if (full_bits != 6 && full_bits != 8) return false;
  return high_bits >= 3 && high_bits < full_bits;
}

namespace {

NestedLayer nest_layer(const std::string& name, const FloatTensor& weights,
                       const NestOptions& options) {
  const float scale = compute_scale(weights, options.full_bits);
  const IntTensor ints = quantize(weights, scale, options.full_bits, RoundingStrategy::Adaptive,
                                  options.group_axis);
  Decomposition dec =
      decompose(ints, options.high_bits, options.strategy, /*compensate=*/true,
                options.group_axis);

  NestedLayer layer;
  layer.name = name;
  layer.shape = weights.shape;
  layer.full_bits = options.full_bits;
  layer.high_bits = options.high_bits;
  layer.scale = scale;
  layer.high = pack(dec.high);
  layer.low = pack(dec.low);
  return layer;
}

NestedLayer flat_layer(const std::string& name, const FloatTensor& weights, int bits,
                       RoundingStrategy strategy) {
  const float scale = compute_scale(weights, bits);
  const IntTensor ints = quantize(weights, scale, bits, strategy, 0);

  NestedLayer layer;
  layer.name = name;
  layer.shape = weights.shape;
  layer.full_bits = bits;
  layer.high_bits = bits;
  layer.scale = scale;
  layer.high = pack(ints);
  return layer;
}

// Runs fn(i) over layer indices on `jobs` threads; the first failure wins and
// is rethrown on the caller, tagged with the layer name.
template <typename Fn>
void for_each_layer(const FloatModel& model, int jobs, Fn fn) {
  const auto layer_count = model.layers.size();
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(layer_count)));

  if (jobs == 1) {
    for (std::size_t i = 0; i < layer_count; ++i) {
      try {
        fn(i);
      } catch (const Error& e) {
        throw Error("layer '" + model.layers[i].name + "': " + e.what());
      }
    }
    return;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::string> failures(layer_count);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < layer_count; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (const std::exception& e) {
          failures[i] = e.what();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (std::size_t i = 0; i < layer_count; ++i)
    if (!failures[i].empty())
      throw Error("layer '" + model.layers[i].name + "': " + failures[i]);
}

}  // namespace

NestedModel nest_model(const FloatModel& model, const NestOptions& options) {
  if (!valid_nesting(options.full_bits, options.high_bits))
    throw InvalidBitwidthError("unsupported nesting INT(" + std::to_string(options.full_bits) +
                               "|" + std::to_string(options.high_bits) + ")");
  NestedModel out;
  out.full_bits = options.full_bits;
  out.high_bits = options.high_bits;
  out.layers.resize(model.layers.size());
  for_each_layer(model, options.jobs, [&](std::size_t i) {
    out.layers[i] = nest_layer(model.layers[i].name, model.layers[i].weights, options);
  });
  return out;
}

NestedModel quantize_model(const FloatModel& model, int bits, RoundingStrategy strategy,
                           int jobs) {
  NestedModel out;
  out.full_bits = bits;
  out.high_bits = bits;
  out.layers.resize(model.layers.size());
  for_each_layer(model, jobs, [&](std::size_t i) {
    out.layers[i] = flat_layer(model.layers[i].name, model.layers[i].weights, bits, strategy);
  });
  return out;
}

}  // namespace nestquant
