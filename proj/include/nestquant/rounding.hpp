#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "nestquant/tensor.hpp"

namespace nestquant {

// The five ways a fractional value may be driven to an integer when deriving
// high-bit weights. Adaptive is group-aware; the other four are elementwise.
enum class RoundingStrategy { BitShift, Nearest, Up, Down, Adaptive };

RoundingStrategy parse_strategy(const std::string& name);
std::string strategy_name(RoundingStrategy s);

// Exact rounding of value / 2^shift. No floating point is involved, so results
// are identical on every platform.
//   BitShift, Down : floor (arithmetic right shift)
//   Nearest        : round half away from zero
//   Up             : ceil
std::int64_t round_scalar(std::int64_t value, int shift, RoundingStrategy s);

// Round half away from zero, matching round_scalar's Nearest rule.
inline double round_half_away(double x) { return std::round(x); }

// Group-aware rounding: every output is floor(x) or ceil(x), chosen so each
// group's accumulated rounding error |sum(x_i - out_i)| stays <= 0.5. Groups
// are the slices along `group_axis` (axis 0 = one group per output channel).
// Starts from Nearest and flips the elements closest to the .5 boundary,
// lowest flat index first on ties.
template <typename Scalar>
Tensor<std::int32_t> adaptive_round(const Tensor<Scalar>& fp, int group_axis = 0);

}  // namespace nestquant
