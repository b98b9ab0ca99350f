#include <doctest.h>

#include <random>

#include "nestquant/nesting.hpp"

using namespace nestquant;

namespace {

IntTensor single(std::int32_t v, int bits) { return IntTensor(Shape{1}, {v}, bits); }

const std::vector<RoundingStrategy> kAllStrategies = {
    RoundingStrategy::BitShift, RoundingStrategy::Nearest, RoundingStrategy::Up,
    RoundingStrategy::Down, RoundingStrategy::Adaptive};

}  // namespace

TEST_CASE("worked example: -67 at INT(8|4)") {
  const IntTensor w = single(-67, 8);

  const Decomposition clipped = decompose(w, 4, RoundingStrategy::BitShift, false);
  CHECK(clipped.high.data[0] == -5);
  CHECK(clipped.low.data[0] == 7);
  CHECK(clipped.low.bits == 4);
  const IntTensor lossy = recompose(clipped.high, clipped.low, 4);
  CHECK(lossy.data[0] == -73);
  CHECK(w.data[0] - lossy.data[0] == 6);

  const Decomposition comp = decompose(w, 4, RoundingStrategy::BitShift, true);
  CHECK(comp.high.data[0] == -5);
  CHECK(comp.low.data[0] == 13);
  CHECK(comp.low.bits == 5);
  CHECK(comp.low_clip_events == 0);
  CHECK(recompose(comp.high, comp.low, 4).data[0] == -67);
}

TEST_CASE("zero decomposes to zeros") {
  for (auto strategy : kAllStrategies)
    for (int h = 3; h < 8; ++h) {
      const Decomposition d = decompose(single(0, 8), h, strategy, true);
      CHECK(d.high.data[0] == 0);
      CHECK(d.low.data[0] == 0);
    }
}

TEST_CASE("recompose basics") {
  CHECK(recompose(single(-5, 4), single(13, 5), 4).data[0] == -67);
  CHECK(recompose(single(-5, 4), single(7, 4), 4).data[0] == -73);
  CHECK(recompose(single(0, 4), single(0, 5), 4).data[0] == 0);
  // corrupt inputs surface as range errors
  CHECK_THROWS_AS(recompose(single(-8, 4), single(-16, 5), 4), RangeError);
  CHECK_THROWS_AS(recompose(single(1, 4), single(99, 5), 4), RangeError);
  CHECK_THROWS_AS(recompose(IntTensor(Shape{2}, {0, 0}, 4), single(0, 5), 4), ShapeError);
}

TEST_CASE("invalid combinations") {
  CHECK_THROWS_AS(decompose(single(0, 8), 8, RoundingStrategy::Nearest, true),
                  InvalidBitwidthError);
  CHECK_THROWS_AS(decompose(single(0, 4), 6, RoundingStrategy::Nearest, true),
                  InvalidBitwidthError);
}

TEST_CASE("lossless nesting, exhaustive over all representable values") {
  for (int n : {6, 8})
    for (int h = 3; h < n; ++h)
      for (auto strategy : kAllStrategies) {
        const IntRange range = int_range(n);
        std::vector<std::int32_t> all;
        for (std::int32_t v = range.min; v <= range.max; ++v) all.push_back(v);
        // rank-2 shape so the adaptive path exercises real groups
        const IntTensor ints(Shape{8, static_cast<Index>(all.size()) / 8}, all, n);

        const Decomposition d = decompose(ints, h, strategy, true);
        CHECK(d.low_clip_events == 0);
        const IntTensor back = recompose(d.high, d.low, n - h);
        for (Index i = 0; i < ints.numel(); ++i) REQUIRE(back.data[i] == ints.data[i]);

        const IntRange low_range = int_range(n - h + 1);
        for (Index i = 0; i < d.low.numel(); ++i) {
          REQUIRE(d.low.data[i] >= low_range.min);
          REQUIRE(d.low.data[i] <= low_range.max);
        }
      }
}

TEST_CASE("lossless nesting, random tensors") {
  std::mt19937_64 rng(41);
  Index checked = 0;
  for (int n : {6, 8})
    for (int h = 3; h < n; ++h)
      for (auto strategy : kAllStrategies) {
        const IntRange range = int_range(n);
        std::uniform_int_distribution<std::int32_t> dist(range.min, range.max);
        for (int trial = 0; trial < 40; ++trial) {
          const Index rows = 1 + static_cast<Index>(rng() % 8);
          const Index cols = 1 + static_cast<Index>(rng() % 40);
          IntTensor ints(Shape{rows, cols}, n);
          for (Index i = 0; i < ints.numel(); ++i) ints.data[i] = dist(rng);

          const Decomposition d = decompose(ints, h, strategy, true);
          REQUIRE(d.low_clip_events == 0);
          const IntTensor back = recompose(d.high, d.low, n - h);
          for (Index i = 0; i < ints.numel(); ++i) REQUIRE(back.data[i] == ints.data[i]);
          checked += ints.numel();
        }
      }
  CHECK(checked >= 100'000);
}

TEST_CASE("census reproduces the exhaustive INT8 table") {
  struct Cell {
    RoundingStrategy strategy;
    int h;
    Index nonzero;
    std::int32_t lo, hi;
  };
  const std::vector<Cell> expected = {
      {RoundingStrategy::BitShift, 7, 128, 0, 1},  {RoundingStrategy::BitShift, 6, 128, 0, 2},
      {RoundingStrategy::BitShift, 5, 128, 0, 4},  {RoundingStrategy::BitShift, 4, 128, 0, 8},
      {RoundingStrategy::BitShift, 3, 128, 0, 16}, {RoundingStrategy::Nearest, 7, 65, 0, 1},
      {RoundingStrategy::Nearest, 6, 34, 0, 2},    {RoundingStrategy::Nearest, 5, 20, 0, 4},
      {RoundingStrategy::Nearest, 4, 16, 0, 8},    {RoundingStrategy::Nearest, 3, 20, 0, 16},
      {RoundingStrategy::Up, 7, 1, 0, 1},          {RoundingStrategy::Up, 6, 65, -1, 2},
      {RoundingStrategy::Up, 5, 97, -3, 4},        {RoundingStrategy::Up, 4, 113, -7, 8},
      {RoundingStrategy::Up, 3, 121, -15, 16},     {RoundingStrategy::Down, 7, 128, 0, 1},
      {RoundingStrategy::Down, 6, 128, 0, 2},      {RoundingStrategy::Down, 5, 128, 0, 4},
      {RoundingStrategy::Down, 4, 128, 0, 8},      {RoundingStrategy::Down, 3, 128, 0, 16},
  };
  for (const auto& cell : expected) {
    const ErrorCensus census = error_census(8, cell.h, cell.strategy);
    CAPTURE(strategy_name(cell.strategy));
    CAPTURE(cell.h);
    CHECK(census.nonzero_count == cell.nonzero);
    CHECK(census.error_min == cell.lo);
    CHECK(census.error_max == cell.hi);

    Index total = 0;
    for (const auto& [error, count] : census.histogram) total += count;
    CHECK(total == 256);
  }
}

TEST_CASE("compensated nesting leaves no error anywhere") {
  for (int h = 3; h < 8; ++h)
    for (auto strategy : kAllStrategies) {
      std::vector<std::int32_t> all;
      for (std::int32_t v = -128; v <= 127; ++v) all.push_back(v);
      const IntTensor ints(Shape{256}, all, 8);
      const Decomposition d = decompose(ints, h, strategy, true);
      const IntTensor back = recompose(d.high, d.low, 8 - h);
      for (Index i = 0; i < 256; ++i) REQUIRE(back.data[i] == ints.data[i]);
    }
}

TEST_CASE("census rejects bad inputs") {
  CHECK_THROWS_AS(error_census(8, 4, RoundingStrategy::Adaptive), ConfigError);
  CHECK_THROWS_AS(error_census(9, 4, RoundingStrategy::Nearest), InvalidBitwidthError);
}

TEST_CASE("nested-bits advice") {
  CHECK(advise_nested_bits(16.3, 8) == 5);
  CHECK(advise_nested_bits(44.7, 8) == 4);
  CHECK(advise_nested_bits(97.8, 8) == 4);
  CHECK(advise_nested_bits(170.5, 8) == 4);
  CHECK(advise_nested_bits(330.3, 8) == 3);
  CHECK(advise_nested_bits(1161.0, 8) == 3);
  // boundaries are half-open
  CHECK(advise_nested_bits(29.999, 8) == 5);
  CHECK(advise_nested_bits(30.0, 8) == 4);
  CHECK(advise_nested_bits(300.0, 8) == 3);
  CHECK(advise_nested_bits(25.0, 6) == 4);
  CHECK_THROWS_AS(advise_nested_bits(10.0, 7), InvalidBitwidthError);
  CHECK_THROWS_AS(advise_nested_bits(0.0, 8), DataError);
}

namespace {
FloatModel two_layer_model(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  FloatModel m;
  for (const auto& [name, rows, cols] :
       {std::tuple<const char*, Index, Index>{"dense0", 16, 32},
        std::tuple<const char*, Index, Index>{"dense1", 4, 16}}) {
    FloatTensor w(Shape{rows, cols});
    for (Index i = 0; i < w.numel(); ++i) w.data[i] = dist(rng);
    m.layers.push_back({name, w});
  }
  return m;
}
}  // namespace

TEST_CASE("nest_model structure at INT(8|4)") {
  const FloatModel fm = two_layer_model(99);
  NestOptions options;
  options.full_bits = 8;
  options.high_bits = 4;
  options.strategy = RoundingStrategy::Adaptive;
  const NestedModel nested = nest_model(fm, options);

  REQUIRE(nested.layers.size() == 2);
  for (const auto& layer : nested.layers) {
    CHECK(layer.high.bits == 4);
    CHECK(layer.low.bits == 5);
    CHECK(layer.high.logical_len == shape_numel(layer.shape));
    CHECK(layer.high_scale() == layer.scale * 16.0f);
  }
  CHECK(nested.layers[0].name == "dense0");
  CHECK_FALSE(nested.flat());
}

TEST_CASE("full-bit reconstruction equals the directly quantized model") {
  const FloatModel fm = two_layer_model(7);
  NestOptions options;
  options.full_bits = 8;
  options.high_bits = 5;
  const NestedModel nested = nest_model(fm, options);
  const NestedModel flat = quantize_model(fm, 8, RoundingStrategy::Adaptive);

  for (std::size_t l = 0; l < fm.layers.size(); ++l) {
    const IntTensor direct = unpack(flat.layers[l].high);
    const IntTensor rebuilt = recompose(unpack(nested.layers[l].high),
                                        unpack(nested.layers[l].low),
                                        nested.layers[l].low_shift());
    CHECK(nested.layers[l].scale == flat.layers[l].scale);
    for (Index i = 0; i < direct.numel(); ++i) REQUIRE(rebuilt.data[i] == direct.data[i]);
  }
}

TEST_CASE("adaptive beats plain bitshift on part-bit fidelity") {
  const FloatModel fm = two_layer_model(123);
  const auto layer_mse = [&](RoundingStrategy strategy) {
    NestOptions options;
    options.full_bits = 8;
    options.high_bits = 4;
    options.strategy = strategy;
    const NestedModel nested = nest_model(fm, options);
    double mse = 0;
    Index count = 0;
    for (const auto& layer : nested.layers) {
      const IntTensor high = unpack(layer.high);
      const IntTensor low = unpack(layer.low);
      const IntTensor full = recompose(high, low, layer.low_shift());
      for (Index i = 0; i < full.numel(); ++i) {
        const double full_dq = static_cast<double>(layer.scale) * full.data[i];
        const double part_dq = static_cast<double>(layer.high_scale()) * high.data[i];
        mse += (full_dq - part_dq) * (full_dq - part_dq);
        ++count;
      }
    }
    return mse / static_cast<double>(count);
  };
  CHECK(layer_mse(RoundingStrategy::Adaptive) < layer_mse(RoundingStrategy::BitShift));
}

TEST_CASE("nest_model rejects unsupported combinations") {
  const FloatModel fm = two_layer_model(1);
  NestOptions options;
  options.full_bits = 8;
  options.high_bits = 8;
  CHECK_THROWS_AS(nest_model(fm, options), InvalidBitwidthError);
  options.full_bits = 5;
  options.high_bits = 4;
  CHECK_THROWS_AS(nest_model(fm, options), InvalidBitwidthError);
}

TEST_CASE("layer errors carry the layer name") {
  FloatModel fm;
  FloatTensor bad(Shape{2});
  bad.data[0] = 1.0f;
  bad.data[1] = std::numeric_limits<float>::quiet_NaN();
  fm.layers.push_back({"dense0", bad});
  NestOptions options;
  options.full_bits = 8;
  options.high_bits = 4;
  try {
    nest_model(fm, options);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("dense0") != std::string::npos);
  }
}

TEST_CASE("layer-parallel nesting matches single-threaded output") {
  std::mt19937_64 rng(55);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  FloatModel fm;
  for (int l = 0; l < 9; ++l) {
    FloatTensor w(Shape{8, 24});
    for (Index i = 0; i < w.numel(); ++i) w.data[i] = dist(rng);
    fm.layers.push_back({"dense" + std::to_string(l), w});
  }
  NestOptions serial;
  serial.full_bits = 8;
  serial.high_bits = 4;
  NestOptions parallel = serial;
  parallel.jobs = 4;

  const NestedModel a = nest_model(fm, serial);
  const NestedModel b = nest_model(fm, parallel);
  REQUIRE(a.layers.size() == b.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    CHECK(a.layers[l].scale == b.layers[l].scale);
    CHECK(a.layers[l].high.words == b.layers[l].high.words);
    CHECK(a.layers[l].low.words == b.layers[l].low.words);
  }
}
