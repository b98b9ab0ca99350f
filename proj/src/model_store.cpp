#include "nestquant/model_store.hpp"

#include <cstring>
#include <fstream>
#include <set>

namespace nestquant {

namespace {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
  }

  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    written_ += static_cast<Index>(n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f32(float v) {
    std::uint32_t raw;
    std::memcpy(&raw, &v, 4);
    le(raw);
  }

  Index written() const { return written_; }
  void close() {
    out_.close();
    if (!out_) throw IoError("write failed");
  }

 private:
  template <typename T>
  void le(T v) {
    std::uint8_t buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
    bytes(buf, sizeof(T));
  }

  std::ofstream out_;
  Index written_ = 0;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open '" + path.string() + "' for reading");
    in_.seekg(0, std::ios::end);
    file_size_ = static_cast<Index>(in_.tellg());
    in_.seekg(0);
  }

  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw TruncationError("unexpected end of file", offset_ + static_cast<Index>(n),
                            offset_ + static_cast<Index>(in_.gcount()));
    offset_ += static_cast<Index>(n);
    read_ += static_cast<Index>(n);
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint16_t u16() { return le<std::uint16_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  float f32() {
    const std::uint32_t raw = le<std::uint32_t>();
    float v;
    std::memcpy(&v, &raw, 4);
    return v;
  }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  void skip(Index n) {
    if (offset_ + n > file_size_)
      throw TruncationError("unexpected end of file", offset_ + n, file_size_);
    in_.seekg(static_cast<std::streamoff>(n), std::ios::cur);
    offset_ += n;
  }

  Index offset() const { return offset_; }
  Index bytes_read() const { return read_; }
  Index file_size() const { return file_size_; }

 private:
  template <typename T>
  T le() {
    std::uint8_t buf[sizeof(T)];
    bytes(buf, sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
  }

  std::ifstream in_;
  Index offset_ = 0;
  Index read_ = 0;
  Index file_size_ = 0;
};

struct LayerMeta {
  std::string name;
  Shape shape;
  float scale = 1.0f;
};

LayerMeta read_layer_meta(Reader& r) {
  LayerMeta meta;
  const std::uint16_t name_len = r.u16();
  meta.name = r.str(name_len);
  const int rank = r.u8();
  meta.shape.resize(static_cast<std::size_t>(rank));
  for (int d = 0; d < rank; ++d) meta.shape[static_cast<std::size_t>(d)] = r.u32();
  meta.scale = r.f32();
  return meta;
}

struct Header {
  int full_bits = 8;
  int high_bits = 8;
  std::uint32_t layer_count = 0;
};

Header read_header(Reader& r) {
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kModelMagic, 4) != 0)
    throw FormatError("bad magic, not a model container", 0);
  const std::uint16_t version = r.u16();
  if (version != kModelVersion)
    throw VersionError("unsupported container version " + std::to_string(version));
  Header h;
  h.full_bits = r.u8();
  h.high_bits = r.u8();
  if (h.full_bits < 2 || h.full_bits > 8 || h.high_bits < 2 || h.high_bits > h.full_bits)
    throw FormatError("invalid bitwidth pair in header", 6);
  h.layer_count = r.u32();
  return h;
}

PackedTensor read_payload(Reader& r, int bits, const Shape& shape) {
  const Index len = shape_numel(shape);
  const Index payload = static_cast<Index>(r.u64());
  const Index expected = packed_byte_size(len, bits);
  if (payload != expected)
    throw FormatError("payload of " + std::to_string(payload) + " bytes, expected " +
                          std::to_string(expected),
                      r.offset() - 8);
  PackedTensor p;
  p.bits = bits;
  p.logical_len = len;
  p.shape = shape;
  p.words.resize(static_cast<std::size_t>(payload / 8));
  for (auto& w : p.words) w = r.u64();
  return p;
}

void validate_packed(const PackedTensor& p, const std::string& layer) {
  // Range is enforced by the width itself; check the padding invariant so a
  // re-save stays byte-identical.
  const Index cap = packed_capacity(p.bits);
  const Index used = p.logical_len % cap;
  if (!p.words.empty() && used != 0) {
    const std::uint64_t tail = p.words.back() >> (used * p.bits);
    if (tail != 0)
      throw FormatError("nonzero padding bits in layer '" + layer + "'");
  }
}

void check_layer(const NestedLayer& layer, int full_bits, int high_bits) {
  if (layer.full_bits != full_bits || layer.high_bits != high_bits)
    throw FormatError("layer '" + layer.name + "' bitwidths disagree with the manifest");
  if (layer.name.size() > 0xFFFF) throw FormatError("layer name too long");
  if (layer.shape.size() > 0xFF) throw FormatError("layer rank too large");
  if (!(layer.scale > 0.0f))
    throw DataError("layer '" + layer.name + "' scale must be positive");
  const Index len = shape_numel(layer.shape);
  if (layer.high.logical_len != len || (!layer.flat() && layer.low.logical_len != len))
    throw ShapeError("layer '" + layer.name + "' payload length mismatch");
  if (layer.high.bits != high_bits) throw InvalidBitwidthError("high payload width mismatch");
  if (!layer.flat() && layer.low.bits != layer.low_shift() + 1)
    throw InvalidBitwidthError("low payload width mismatch");
}

}  // namespace

Index save(const NestedModel& model, const std::filesystem::path& path) {
  std::set<std::string> names;
  for (const auto& layer : model.layers) {
    check_layer(layer, model.full_bits, model.high_bits);
    if (!names.insert(layer.name).second)
      throw FormatError("duplicate layer name '" + layer.name + "'");
  }

  Writer w(path);
  w.bytes(kModelMagic, 4);
  w.u16(kModelVersion);
  w.u8(static_cast<std::uint8_t>(model.full_bits));
  w.u8(static_cast<std::uint8_t>(model.high_bits));
  w.u32(static_cast<std::uint32_t>(model.layers.size()));

  for (const auto& layer : model.layers) {
    w.u16(static_cast<std::uint16_t>(layer.name.size()));
    w.bytes(layer.name.data(), layer.name.size());
    w.u8(static_cast<std::uint8_t>(layer.shape.size()));
    for (Index d : layer.shape) w.u32(static_cast<std::uint32_t>(d));
    w.f32(layer.scale);
    w.u64(static_cast<std::uint64_t>(layer.high.byte_size()));
    for (std::uint64_t word : layer.high.words) w.u64(word);
    w.u64(static_cast<std::uint64_t>(layer.flat() ? 0 : layer.low.byte_size()));
    if (!layer.flat())
      for (std::uint64_t word : layer.low.words) w.u64(word);
  }
  const Index written = w.written();
  w.close();
  return written;
}

NestedModel load(const std::filesystem::path& path) {
  Reader r(path);
  const Header h = read_header(r);

  NestedModel model;
  model.full_bits = h.full_bits;
  model.high_bits = h.high_bits;
  model.layers.reserve(h.layer_count);

  std::set<std::string> names;
  for (std::uint32_t i = 0; i < h.layer_count; ++i) {
    const LayerMeta meta = read_layer_meta(r);
    if (!names.insert(meta.name).second)
      throw FormatError("duplicate layer name '" + meta.name + "'");

    NestedLayer layer;
    layer.name = meta.name;
    layer.shape = meta.shape;
    layer.full_bits = h.full_bits;
    layer.high_bits = h.high_bits;
    layer.scale = meta.scale;
    layer.high = read_payload(r, h.high_bits, meta.shape);
    validate_packed(layer.high, meta.name);

    if (layer.flat()) {
      const Index low_payload = static_cast<Index>(r.u64());
      if (low_payload != 0)
        throw FormatError("flat container carries a low payload", r.offset() - 8);
    } else {
      layer.low = read_payload(r, layer.low_shift() + 1, meta.shape);
      validate_packed(layer.low, meta.name);
    }
    check_layer(layer, h.full_bits, h.high_bits);
    model.layers.push_back(std::move(layer));
  }
  if (r.offset() != r.file_size())
    throw FormatError("trailing bytes after the last layer", r.offset());
  return model;
}

PartBitModel load_part_bit(const std::filesystem::path& path) {
  Reader r(path);
  const Header h = read_header(r);

  PartBitModel model;
  model.full_bits = h.full_bits;
  model.high_bits = h.high_bits;
  model.layers.reserve(h.layer_count);

  for (std::uint32_t i = 0; i < h.layer_count; ++i) {
    const LayerMeta meta = read_layer_meta(r);
    PartBitLayer layer;
    layer.name = meta.name;
    layer.shape = meta.shape;
    layer.scale = meta.scale;
    layer.high = read_payload(r, h.high_bits, meta.shape);
    validate_packed(layer.high, meta.name);
    const Index low_payload = static_cast<Index>(r.u64());
    r.skip(low_payload);
    model.layers.push_back(std::move(layer));
  }
  if (r.offset() != r.file_size())
    throw FormatError("trailing bytes after the last layer", r.offset());
  model.bytes_read = r.bytes_read();
  return model;
}

LowBitSections load_low_sections(const std::filesystem::path& path) {
  Reader r(path);
  const Header h = read_header(r);
  if (h.high_bits == h.full_bits)
    throw StateError("flat container has no low sections");

  LowBitSections out;
  out.full_bits = h.full_bits;
  out.high_bits = h.high_bits;
  const int low_bits = h.full_bits - h.high_bits + 1;

  for (std::uint32_t i = 0; i < h.layer_count; ++i) {
    const LayerMeta meta = read_layer_meta(r);
    const Index high_payload = static_cast<Index>(r.u64());
    r.skip(high_payload);
    PackedTensor low = read_payload(r, low_bits, meta.shape);
    validate_packed(low, meta.name);
    out.payload_bytes += low.byte_size();
    out.low.push_back(std::move(low));
  }
  if (r.offset() != r.file_size())
    throw FormatError("trailing bytes after the last layer", r.offset());
  out.bytes_read = r.bytes_read();
  return out;
}

ModelSizeReport size_report(const NestedModel& model) {
  ModelSizeReport rep;
  Index meta = 12;  // magic + version + bitwidths + layer count
  for (const auto& layer : model.layers) {
    rep.high_bytes += layer.high.byte_size();
    if (!layer.flat()) rep.low_bytes += layer.low.byte_size();
    rep.scale_bytes += 4;
    meta += 2 + static_cast<Index>(layer.name.size()) + 1 +
            4 * static_cast<Index>(layer.shape.size()) + 8 + 8;
    rep.fp32_equivalent_bytes += 4 * shape_numel(layer.shape);
  }
  rep.header_bytes = meta;
  rep.total_bytes = rep.high_bytes + rep.low_bytes + rep.scale_bytes + rep.header_bytes;
  return rep;
}

ContainerIndex scan_container(const std::filesystem::path& path) {
  Reader r(path);
  const Header h = read_header(r);

  ContainerIndex index;
  index.full_bits = h.full_bits;
  index.high_bits = h.high_bits;
  for (std::uint32_t i = 0; i < h.layer_count; ++i) {
    const LayerMeta meta = read_layer_meta(r);
    LayerExtent extent;
    extent.name = meta.name;
    extent.high_bytes = static_cast<Index>(r.u64());
    extent.high_offset = r.offset();
    r.skip(extent.high_bytes);
    extent.low_bytes = static_cast<Index>(r.u64());
    extent.low_offset = r.offset();
    r.skip(extent.low_bytes);
    index.layers.push_back(std::move(extent));
  }
  if (r.offset() != r.file_size())
    throw FormatError("trailing bytes after the last layer", r.offset());
  index.file_bytes = r.file_size();
  return index;
}

Index save_float_model(const FloatModel& model, const std::filesystem::path& path) {
  Writer w(path);
  w.bytes(kFloatMagic, 4);
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    if (layer.name.size() > 0xFFFF) throw FormatError("layer name too long");
    w.u16(static_cast<std::uint16_t>(layer.name.size()));
    w.bytes(layer.name.data(), layer.name.size());
    w.u8(static_cast<std::uint8_t>(layer.weights.shape.size()));
    for (Index d : layer.weights.shape) w.u32(static_cast<std::uint32_t>(d));
    for (Index i = 0; i < layer.weights.numel(); ++i) w.f32(layer.weights.data[i]);
  }
  const Index written = w.written();
  w.close();
  return written;
}

FloatModel load_float_model(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kFloatMagic, 4) != 0)
    throw FormatError("bad magic, not a float-tensor archive", 0);
  const std::uint32_t layer_count = r.u32();

  FloatModel model;
  model.layers.reserve(layer_count);
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    const std::uint16_t name_len = r.u16();
    FloatModel::Layer layer;
    layer.name = r.str(name_len);
    const int rank = r.u8();
    Shape shape(static_cast<std::size_t>(rank));
    for (int d = 0; d < rank; ++d) shape[static_cast<std::size_t>(d)] = r.u32();
    layer.weights = FloatTensor(shape);
    for (Index j = 0; j < layer.weights.numel(); ++j) layer.weights.data[j] = r.f32();
    model.layers.push_back(std::move(layer));
  }
  if (r.offset() != r.file_size())
    throw FormatError("trailing bytes after the last layer", r.offset());
  return model;
}

}  // namespace nestquant
