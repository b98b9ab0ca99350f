#include "nestquant/resource_model.hpp"

namespace nestquant {

double ideal_storage_reduction(int full_bits, int high_bits) {
  if (high_bits < 2 || high_bits >= full_bits)
    throw InvalidBitwidthError("invalid nesting combination");
  return 1.0 - static_cast<double>(full_bits + 1) / static_cast<double>(full_bits + high_bits);
}

PageCosts nest_page_costs(double disk_bytes, int full_bits, int high_bits) {
  if (!(disk_bytes > 0)) throw DataError("disk size must be positive");
  if (high_bits < 2 || high_bits >= full_bits)
    throw InvalidBitwidthError("invalid nesting combination");
  const int stored_bits = full_bits + 1;  // h + (l+1)
  PageCosts costs;
  costs.high_in = disk_bytes * high_bits / stored_bits;
  costs.low_in = disk_bytes - costs.high_in;  // shares partition the disk size exactly
  return costs;
}

double reduced_overhead(const Transition& nest, const Transition& diverse) {
  if (!(diverse.total() > 0))
    throw UndefinedValueError("diverse transition has zero total bytes");
  return 1.0 - nest.total() / diverse.total();
}

OverheadReport make_overhead_report(const Transition& nest, const Transition& diverse) {
  OverheadReport rep;
  rep.nest_page_in = nest.page_in;
  rep.nest_page_out = nest.page_out;
  rep.diverse_page_in = diverse.page_in;
  rep.diverse_page_out = diverse.page_out;
  rep.reduced_fraction = reduced_overhead(nest, diverse);
  return rep;
}

double memory_usage_estimate(double u_int8_bytes, int bits) {
  if (bits < 1 || bits > 8) throw InvalidBitwidthError("bitwidth must be in [1,8]");
  if (u_int8_bytes < 0) throw DataError("memory usage must be non-negative");
  return u_int8_bytes * bits / 8.0;
}

}  // namespace nestquant
