#include "nestquant/rounding.hpp"

#include <algorithm>
#include <vector>

namespace nestquant {

RoundingStrategy parse_strategy(const std::string& name) {
  if (name == "bitshift") return RoundingStrategy::BitShift;
  if (name == "rtn") return RoundingStrategy::Nearest;
  if (name == "up") return RoundingStrategy::Up;
  if (name == "down") return RoundingStrategy::Down;
  if (name == "adaptive") return RoundingStrategy::Adaptive;
  throw ConfigError("unknown rounding strategy '" + name +
                    "' (expected bitshift|rtn|up|down|adaptive)");
}

std::string strategy_name(RoundingStrategy s) {
  switch (s) {
    case RoundingStrategy::BitShift: return "bitshift";
    case RoundingStrategy::Nearest: return "rtn";
    case RoundingStrategy::Up: return "up";
    case RoundingStrategy::Down: return "down";
    case RoundingStrategy::Adaptive: return "adaptive";
  }
  return "?";
}

std::int64_t round_scalar(std::int64_t value, int shift, RoundingStrategy s) {
  if (shift < 0 || shift > 62) throw InvalidBitwidthError("shift out of range");
  if (shift == 0) return value;
  const std::int64_t den = std::int64_t{1} << shift;
  const std::int64_t fl = value >> shift;  // arithmetic shift == floor division
  const std::int64_t rem = value - (fl << shift);
  switch (s) {
    case RoundingStrategy::BitShift:
    case RoundingStrategy::Down:
      return fl;
    case RoundingStrategy::Up:
      return rem == 0 ? fl : fl + 1;
    case RoundingStrategy::Nearest: {
      const std::int64_t twice = 2 * rem;
      if (twice > den) return fl + 1;
      if (twice < den) return fl;
      return fl >= 0 ? fl + 1 : fl;  // tie: away from zero
    }
    case RoundingStrategy::Adaptive:
      throw ConfigError("round_scalar does not take the adaptive strategy");
  }
  return fl;
}

namespace {

struct FlipCandidate {
  double distance;  // |x - nearest| in [0, 0.5]; flip the largest first
  Index index;
};

}  // namespace

template <typename Scalar>
Tensor<std::int32_t> adaptive_round(const Tensor<Scalar>& fp, int group_axis) {
  const int rank = fp.rank();
  if (rank == 0 && fp.numel() > 0) group_axis = 0;
  if (rank > 0 && (group_axis < 0 || group_axis >= rank))
    throw ShapeError("group axis " + std::to_string(group_axis) + " invalid for rank " +
                     std::to_string(rank));

  Tensor<std::int32_t> out;
  out.shape = fp.shape;
  out.data.resize(fp.numel());

  std::vector<double> values(static_cast<std::size_t>(fp.numel()));
  for (Index i = 0; i < fp.numel(); ++i) {
    const double x = static_cast<double>(fp.data[i]);
    if (!std::isfinite(x)) throw DataError("non-finite value at index " + std::to_string(i));
    if (std::abs(x) > double{1 << 30})
      throw RangeError("value at index " + std::to_string(i) + " too large to round", i);
    values[static_cast<std::size_t>(i)] = x;
    out.data[i] = static_cast<std::int32_t>(round_half_away(x));
  }
  if (fp.numel() == 0) return out;

  // Stride layout of the group axis in the row-major flat index.
  Index axis_dim = 1, axis_stride = 1;
  if (rank > 0) {
    axis_dim = fp.shape[static_cast<std::size_t>(group_axis)];
    for (int a = group_axis + 1; a < rank; ++a) axis_stride *= fp.shape[static_cast<std::size_t>(a)];
  }
  if (axis_dim == 0) return out;

  std::vector<std::vector<Index>> groups(static_cast<std::size_t>(axis_dim));
  for (Index i = 0; i < fp.numel(); ++i)
    groups[static_cast<std::size_t>((i / axis_stride) % axis_dim)].push_back(i);

  std::vector<FlipCandidate> candidates;
  for (const auto& group : groups) {
    double err = 0.0;
    for (Index i : group) err += values[static_cast<std::size_t>(i)] - out.data[i];

    const std::int64_t flips = std::llround(err);
    if (flips == 0) continue;
    const int dir = flips > 0 ? 1 : -1;  // +1 pushes outputs up, which lowers err

    candidates.clear();
    for (Index i : group) {
      const double x = values[static_cast<std::size_t>(i)];
      const double d = x - out.data[i];
      // Only elements rounded against the needed direction can move, and only
      // by one step (integral inputs have nowhere to go).
      if (dir > 0 ? (d > 0.0) : (d < 0.0)) candidates.push_back({std::abs(d), i});
    }
    std::sort(candidates.begin(), candidates.end(), [](const FlipCandidate& a, const FlipCandidate& b) {
      if (a.distance != b.distance) return a.distance > b.distance;
      return a.index < b.index;
    });

    const std::size_t want = static_cast<std::size_t>(flips * dir);
    if (candidates.size() < want)
      throw Error("adaptive rounding ran out of flippable elements");  // cannot happen
    for (std::size_t j = 0; j < want; ++j) out.data[candidates[j].index] += dir;
  }
  return out;
}

template Tensor<std::int32_t> adaptive_round<float>(const Tensor<float>&, int);
template Tensor<std::int32_t> adaptive_round<double>(const Tensor<double>&, int);

}  // namespace nestquant
