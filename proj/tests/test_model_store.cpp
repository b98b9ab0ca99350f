#include <doctest.h>

#include <fstream>
#include <random>

#include "nestquant/model_store.hpp"

using namespace nestquant;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "nestquant_store_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

FloatModel random_model(std::uint64_t seed, const std::vector<std::pair<Index, Index>>& dims) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  FloatModel m;
  int i = 0;
  for (const auto& [rows, cols] : dims) {
    FloatTensor w(Shape{rows, cols});
    for (Index j = 0; j < w.numel(); ++j) w.data[j] = dist(rng);
    m.layers.push_back({"dense" + std::to_string(i++), w});
  }
  return m;
}

NestedModel random_nested(std::uint64_t seed, int n, int h) {
  NestOptions options;
  options.full_bits = n;
  options.high_bits = h;
  return nest_model(random_model(seed, {{12, 30}, {7, 12}, {4, 7}}), options);
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("save-load-save is byte deterministic") {
  const NestedModel model = random_nested(3, 8, 4);
  const auto p1 = temp_path("det1.nqt");
  const auto p2 = temp_path("det2.nqt");
  const Index written = save(model, p1);
  CHECK(written == static_cast<Index>(std::filesystem::file_size(p1)));

  const NestedModel loaded = load(p1);
  save(loaded, p2);
  CHECK(file_bytes(p1) == file_bytes(p2));
}

TEST_CASE("round-trip preserves every weight") {
  const NestedModel model = random_nested(11, 8, 5);
  const auto p = temp_path("roundtrip.nqt");
  save(model, p);
  const NestedModel loaded = load(p);

  REQUIRE(loaded.layers.size() == model.layers.size());
  CHECK(loaded.full_bits == 8);
  CHECK(loaded.high_bits == 5);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    CHECK(loaded.layers[l].name == model.layers[l].name);
    CHECK(loaded.layers[l].shape == model.layers[l].shape);
    CHECK(loaded.layers[l].scale == model.layers[l].scale);
    const IntTensor before_high = unpack(model.layers[l].high);
    const IntTensor after_high = unpack(loaded.layers[l].high);
    const IntTensor before_low = unpack(model.layers[l].low);
    const IntTensor after_low = unpack(loaded.layers[l].low);
    for (Index i = 0; i < before_high.numel(); ++i) {
      REQUIRE(after_high.data[i] == before_high.data[i]);
      REQUIRE(after_low.data[i] == before_low.data[i]);
    }
  }
}

TEST_CASE("empty model is a fixed-size header") {
  NestedModel empty;
  empty.full_bits = 8;
  empty.high_bits = 4;
  const auto p = temp_path("empty.nqt");
  CHECK(save(empty, p) == 12);
  const NestedModel loaded = load(p);
  CHECK(loaded.layers.empty());
}

TEST_CASE("flat container") {
  const FloatModel fm = random_model(5, {{6, 9}});
  const NestedModel flat = quantize_model(fm, 8);
  const auto p = temp_path("flat.nqt");
  save(flat, p);
  const NestedModel loaded = load(p);
  CHECK(loaded.flat());
  CHECK(loaded.layers[0].low.word_count() == 0);
  CHECK_THROWS_AS(load_low_sections(p), StateError);
}

TEST_CASE("bad magic names offset zero") {
  const auto p = temp_path("badmagic.nqt");
  {
    std::ofstream out(p, std::ios::binary);
    out << "JUNKJUNKJUNKJUNK";
  }
  try {
    load(p);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset == 0);
  }
}

TEST_CASE("unsupported version") {
  const NestedModel model = random_nested(1, 8, 6);
  const auto p = temp_path("badversion.nqt");
  save(model, p);
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char v[2] = {99, 0};
    f.write(v, 2);
  }
  CHECK_THROWS_AS(load(p), VersionError);
}

TEST_CASE("truncation reports expected and actual lengths") {
  const NestedModel model = random_nested(2, 8, 6);
  const auto p = temp_path("trunc.nqt");
  const Index full_size = save(model, p);
  std::filesystem::resize_file(p, static_cast<std::uintmax_t>(full_size - 9));
  try {
    load(p);
    FAIL("expected truncation");
  } catch (const TruncationError& e) {
    CHECK(e.expected > e.actual);
  }
}

TEST_CASE("partial reads: part-bit equals the full view") {
  const NestedModel model = random_nested(21, 8, 6);
  const auto p = temp_path("partbit.nqt");
  save(model, p);

  const PartBitModel part = load_part_bit(p);
  const NestedModel full = load(p);
  REQUIRE(part.layers.size() == full.layers.size());
  for (std::size_t l = 0; l < part.layers.size(); ++l) {
    CHECK(part.layers[l].scale == full.layers[l].scale);
    CHECK(part.layers[l].high.words == full.layers[l].high.words);
  }

  // bytes read == file minus the skipped low words
  const ModelSizeReport rep = size_report(model);
  CHECK(part.bytes_read == rep.total_bytes - rep.low_bytes);

  const LowBitSections low = load_low_sections(p);
  CHECK(low.payload_bytes == rep.low_bytes);
  CHECK(low.bytes_read == rep.total_bytes - rep.high_bytes);
  for (std::size_t l = 0; l < low.low.size(); ++l)
    CHECK(low.low[l].words == full.layers[l].low.words);
}

TEST_CASE("size report matches the file exactly") {
  for (const auto& [n, h] : std::vector<std::pair<int, int>>{{8, 4}, {8, 7}, {6, 5}}) {
    const NestedModel model = random_nested(33, n, h);
    const auto p = temp_path("sizes.nqt");
    const Index written = save(model, p);
    const ModelSizeReport rep = size_report(model);
    CHECK(rep.total_bytes == written);
    CHECK(rep.total_bytes ==
          rep.high_bytes + rep.low_bytes + rep.scale_bytes + rep.header_bytes);
    CHECK(rep.scale_bytes == 4 * static_cast<Index>(model.layers.size()));
    CHECK(rep.fp32_equivalent_bytes == 4 * model.param_count());

    Index high = 0, low = 0;
    for (const auto& layer : model.layers) {
      high += packed_byte_size(shape_numel(layer.shape), h);
      low += packed_byte_size(shape_numel(layer.shape), n - h + 1);
    }
    CHECK(rep.high_bytes == high);
    CHECK(rep.low_bytes == low);
  }
}

TEST_CASE("container index matches the size report") {
  const NestedModel model = random_nested(8, 6, 4);
  const auto p = temp_path("scan.nqt");
  const Index written = save(model, p);
  const ContainerIndex index = scan_container(p);
  CHECK(index.file_bytes == written);
  CHECK(index.low_payload_bytes() == size_report(model).low_bytes);
  REQUIRE(index.layers.size() == model.layers.size());
  for (std::size_t l = 0; l < index.layers.size(); ++l)
    CHECK(index.layers[l].high_bytes == model.layers[l].high.byte_size());
}

TEST_CASE("duplicate layer names are rejected") {
  NestedModel model = random_nested(9, 8, 4);
  model.layers[1].name = model.layers[0].name;
  CHECK_THROWS_AS(save(model, temp_path("dup.nqt")), FormatError);
}

TEST_CASE("float archive round-trip") {
  const FloatModel fm = random_model(77, {{5, 8}, {3, 5}});
  const auto p = temp_path("weights.nqf");
  const Index written = save_float_model(fm, p);
  CHECK(written == static_cast<Index>(std::filesystem::file_size(p)));

  const FloatModel loaded = load_float_model(p);
  REQUIRE(loaded.layers.size() == 2);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(loaded.layers[l].name == fm.layers[l].name);
    CHECK(loaded.layers[l].weights.shape == fm.layers[l].weights.shape);
    for (Index i = 0; i < fm.layers[l].weights.numel(); ++i)
      REQUIRE(loaded.layers[l].weights.data[i] == fm.layers[l].weights.data[i]);
  }

  CHECK_THROWS_AS(load_float_model(temp_path("scan.nqt")), FormatError);
}
