#include "nestquant/switch_runtime.hpp"

namespace nestquant {

SwitchState SwitchState::launch_part_bit(const std::filesystem::path& path) {
  SwitchState state;
  state.path_ = path;
  state.part_ = load_part_bit(path);
  if (state.part_.high_bits == state.part_.full_bits)
    throw StateError("flat container cannot switch instances");
  for (const auto& layer : state.part_.layers) {
    state.param_count_ += layer.high.logical_len;
    state.low_payload_bytes_ +=
        packed_byte_size(layer.high.logical_len,
                         state.part_.full_bits - state.part_.high_bits + 1);
  }
  return state;
}

void SwitchState::upgrade() {
  if (mode_ != SwitchMode::PartBit)
    throw StateError("upgrade requires the part-bit instance");

  // Stage everything before touching the resident state so a failure leaves
  // the part-bit instance serviceable.
  LowBitSections sections = load_low_sections(path_);
  if (sections.low.size() != part_.layers.size())
    throw FormatError("low sections disagree with the resident part-bit model");

  std::vector<IntTensor> low;
  std::vector<IntTensor> full;
  low.reserve(sections.low.size());
  full.reserve(sections.low.size());
  const int shift = part_.full_bits - part_.high_bits;
  for (std::size_t i = 0; i < sections.low.size(); ++i) {
    if (sections.low[i].shape != part_.layers[i].high.shape)
      throw ShapeError("low section shape mismatch in layer '" + part_.layers[i].name + "'");
    IntTensor high = unpack(part_.layers[i].high);
    IntTensor lo = unpack(sections.low[i]);
    full.push_back(recompose(high, lo, shift));
    low.push_back(std::move(lo));
  }

  resident_low_ = std::move(low);
  resident_full_ = std::move(full);
  mode_ = SwitchMode::FullBit;
  log_.push_back({TransitionRecord::Direction::Upgrade, sections.payload_bytes, 0,
                  std::chrono::system_clock::now()});
}

void SwitchState::downgrade() {
  if (mode_ != SwitchMode::FullBit)
    throw StateError("downgrade requires the full-bit instance");
  resident_low_.clear();
  resident_full_.clear();
  mode_ = SwitchMode::PartBit;
  log_.push_back({TransitionRecord::Direction::Downgrade, 0, low_payload_bytes_,
                  std::chrono::system_clock::now()});
}

const std::vector<IntTensor>& SwitchState::full_weights() const {
  if (mode_ != SwitchMode::FullBit) throw StateError("full-bit weights are not resident");
  return resident_full_;
}

const std::vector<IntTensor>& SwitchState::low_weights() const {
  if (mode_ != SwitchMode::FullBit) throw StateError("low weights are not resident");
  return resident_low_;
}

double SwitchState::memory_estimate_bytes() const {
  const int bits = mode_ == SwitchMode::PartBit ? part_.high_bits : part_.full_bits;
  return memory_usage_estimate(static_cast<double>(param_count_), bits);
}

TransitionRecord diverse_switch_baseline(const std::filesystem::path& entering,
                                         const std::filesystem::path& leaving,
                                         TransitionRecord::Direction direction) {
  std::error_code ec;
  const auto in_size = std::filesystem::file_size(entering, ec);
  if (ec) throw IoError("cannot stat '" + entering.string() + "'");
  const auto out_size = std::filesystem::file_size(leaving, ec);
  if (ec) throw IoError("cannot stat '" + leaving.string() + "'");
  return {direction, static_cast<Index>(in_size), static_cast<Index>(out_size),
          std::chrono::system_clock::now()};
}

}  // namespace nestquant
