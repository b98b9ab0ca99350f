#include "nestquant/packed_tensor.hpp"

#include <string>

namespace nestquant {

namespace {
constexpr int kMinBits = 1;
constexpr int kMaxBits = 8;

void check_bits(int bits) {
  if (bits < kMinBits || bits > kMaxBits)
    throw InvalidBitwidthError("packed bitwidth must be in [1,8], got " + std::to_string(bits));
}
}  // namespace

Index packed_capacity(int bits) {
  check_bits(bits);
  return 64 / bits;
}

Index packed_byte_size(Index count, int bits) {
  const Index cap = packed_capacity(bits);
  if (count < 0) throw ShapeError("negative element count");
  return 8 * ((count + cap - 1) / cap);
}

PackedTensor pack(std::span<const std::int32_t> values, int bits, Shape shape) {
  const Index cap = packed_capacity(bits);
  const Index len = static_cast<Index>(values.size());
  if (shape_numel(shape) != len)
    throw ShapeError("shape " + shape_string(shape) + " does not hold " +
                     std::to_string(len) + " elements");

  const IntRange range = int_range(bits);
  const std::uint64_t mask = (1ull << bits) - 1;

  PackedTensor out;
  out.bits = bits;
  out.logical_len = len;
  out.shape = std::move(shape);
  out.words.assign(static_cast<std::size_t>((len + cap - 1) / cap), 0);

  for (Index i = 0; i < len; ++i) {
    const std::int32_t v = values[static_cast<std::size_t>(i)];
    if (v < range.min || v > range.max)
      throw RangeError("value " + std::to_string(v) + " at index " + std::to_string(i) +
                           " does not fit int" + std::to_string(bits),
                       i);
    const std::uint64_t pattern = static_cast<std::uint64_t>(static_cast<std::int64_t>(v)) & mask;
    out.words[static_cast<std::size_t>(i / cap)] |= pattern << ((i % cap) * bits);
  }
  return out;
}

PackedTensor pack(const IntTensor& t) {
  return pack(std::span<const std::int32_t>(t.data.data(), static_cast<std::size_t>(t.numel())),
              t.bits, t.shape);
}

IntTensor unpack(const PackedTensor& p) {
  const Index cap = packed_capacity(p.bits);
  const Index expected_words = (p.logical_len + cap - 1) / cap;
  if (p.word_count() != expected_words)
    throw FormatError("packed tensor holds " + std::to_string(p.word_count()) +
                      " words, expected " + std::to_string(expected_words));
  if (shape_numel(p.shape) != p.logical_len)
    throw ShapeError("packed shape " + shape_string(p.shape) + " does not match length " +
                     std::to_string(p.logical_len));

  const std::uint64_t mask = (1ull << p.bits) - 1;
  const std::uint64_t sign_bit = 1ull << (p.bits - 1);

  IntTensor out(p.shape, p.bits);
  for (Index i = 0; i < p.logical_len; ++i) {
    std::uint64_t raw = (p.words[static_cast<std::size_t>(i / cap)] >> ((i % cap) * p.bits)) & mask;
    if (raw & sign_bit) raw |= ~mask;  // sign extend
    out.data[i] = static_cast<std::int32_t>(static_cast<std::int64_t>(raw));
  }
  return out;
}

}  // namespace nestquant
