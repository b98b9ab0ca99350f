#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nestquant/tensor.hpp"

namespace nestquant {

// k-bit signed integers packed 64/k per little-endian 64-bit word.
// Slot 0 sits in the least-significant k bits; unused trailing slots are zero,
// so equal inputs always produce byte-identical words.
struct PackedTensor {
  int bits = 0;
  Index logical_len = 0;
  Shape shape;
  std::vector<std::uint64_t> words;

  Index word_count() const { return static_cast<Index>(words.size()); }
  Index byte_size() const { return word_count() * 8; }
};

// Number of elements one 64-bit word holds at the given width.
Index packed_capacity(int bits);

// Bytes needed to pack `count` elements at the given width.
Index packed_byte_size(Index count, int bits);

PackedTensor pack(std::span<const std::int32_t> values, int bits, Shape shape);
PackedTensor pack(const IntTensor& t);

IntTensor unpack(const PackedTensor& p);

}  // namespace nestquant
