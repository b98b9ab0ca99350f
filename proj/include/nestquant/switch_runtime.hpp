#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <vector>

#include "nestquant/model_store.hpp"
#include "nestquant/resource_model.hpp"

namespace nestquant {

enum class SwitchMode { PartBit, FullBit };

struct TransitionRecord {
  enum class Direction { Upgrade, Downgrade };
  Direction direction;
  Index bytes_paged_in = 0;
  Index bytes_paged_out = 0;
  std::chrono::system_clock::time_point at;
};

// Runtime state machine over the two model instances. Launch reads only the
// high sections; upgrade pages the low sections in and materializes the
// recomposed full-bit weights; downgrade releases them again. Transitions are
// all-or-nothing: a failure leaves the previous state untouched. Callers must
// not run transitions concurrently with reads (single-writer contract).
class SwitchState {
 public:
  static SwitchState launch_part_bit(const std::filesystem::path& path);

  void upgrade();
  void downgrade();

  SwitchMode mode() const { return mode_; }
  int full_bits() const { return part_.full_bits; }
  int high_bits() const { return part_.high_bits; }
  Index launch_bytes_read() const { return part_.bytes_read; }
  Index param_count() const { return param_count_; }

  // Low payload bytes on disk, the cost of one transition in either direction.
  Index low_payload_bytes() const { return low_payload_bytes_; }

  const std::vector<PartBitLayer>& part_layers() const { return part_.layers; }
  const std::vector<IntTensor>& full_weights() const;
  const std::vector<IntTensor>& low_weights() const;
  const std::vector<TransitionRecord>& transition_log() const { return log_; }

  // k/8 of the int8 footprint, k being the resident instance's bitwidth.
  double memory_estimate_bytes() const;

 private:
  SwitchState() = default;

  std::filesystem::path path_;
  SwitchMode mode_ = SwitchMode::PartBit;
  PartBitModel part_;
  std::vector<IntTensor> resident_low_;
  std::vector<IntTensor> resident_full_;
  std::vector<TransitionRecord> log_;
  Index low_payload_bytes_ = 0;
  Index param_count_ = 0;
};

// Switching cost of the separate-models baseline: page in the entering
// model's file, page out the leaving one's.
TransitionRecord diverse_switch_baseline(const std::filesystem::path& entering,
                                         const std::filesystem::path& leaving,
                                         TransitionRecord::Direction direction);

}  // namespace nestquant
