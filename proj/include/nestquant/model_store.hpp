#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nestquant/nesting.hpp"

namespace nestquant {

// Container layout (.nqt), little-endian throughout:
//   magic "NQNT" | u16 version | u8 n | u8 h | u32 layer_count
//   per layer:
//     u16 name_len | name bytes
//     u8 rank | u32 dims[rank]
//     f32 scale
//     u64 high_payload_bytes | high words
//     u64 low_payload_bytes  | low words
// The high payload precedes the low payload so a single forward scan with
// seeks over the low sections loads the part-bit weights. A flat model is the
// same container with h == n and every low payload empty.
inline constexpr char kModelMagic[4] = {'N', 'Q', 'N', 'T'};
inline constexpr std::uint16_t kModelVersion = 1;

// FP32 input archive (.nqf):
//   magic "NQF0" | u32 layer_count
//   per layer: u16 name_len | name | u8 rank | u32 dims[rank] | f32 data[]
inline constexpr char kFloatMagic[4] = {'N', 'Q', 'F', '0'};

Index save(const NestedModel& model, const std::filesystem::path& path);
NestedModel load(const std::filesystem::path& path);

// The part-bit view: manifest, scales and high payloads only. Low payloads
// are seeked over, so bytes_read is the file size minus the low words.
struct PartBitLayer {
  std::string name;
  Shape shape;
  float scale = 1.0f;
  PackedTensor high;
};

struct PartBitModel {
  int full_bits = 8;
  int high_bits = 8;
  std::vector<PartBitLayer> layers;
  Index bytes_read = 0;
};

PartBitModel load_part_bit(const std::filesystem::path& path);

// The complementary read: only the low payloads, high sections seeked over.
struct LowBitSections {
  int full_bits = 8;
  int high_bits = 8;
  std::vector<PackedTensor> low;  // one per layer, layer order
  Index bytes_read = 0;
  Index payload_bytes = 0;  // low words only, excluding metadata
};

LowBitSections load_low_sections(const std::filesystem::path& path);

struct ModelSizeReport {
  Index high_bytes = 0;   // packed high payload
  Index low_bytes = 0;    // packed low payload
  Index scale_bytes = 0;  // 4 per layer
  Index header_bytes = 0; // magic, manifest, names, dims, payload lengths
  Index total_bytes = 0;  // exact file size
  Index fp32_equivalent_bytes = 0;
};

ModelSizeReport size_report(const NestedModel& model);

// Byte ranges of each layer's payloads inside the container, for partial
// reads and wire splits.
struct LayerExtent {
  std::string name;
  Index high_offset = 0;
  Index high_bytes = 0;
  Index low_offset = 0;  // offset of the low words (after the length field)
  Index low_bytes = 0;
};

struct ContainerIndex {
  int full_bits = 8;
  int high_bits = 8;
  std::vector<LayerExtent> layers;
  Index file_bytes = 0;
  Index low_payload_bytes() const {
    Index n = 0;
    for (const auto& l : layers) n += l.low_bytes;
    return n;
  }
};

ContainerIndex scan_container(const std::filesystem::path& path);

Index save_float_model(const FloatModel& model, const std::filesystem::path& path);
FloatModel load_float_model(const std::filesystem::path& path);

}  // namespace nestquant
