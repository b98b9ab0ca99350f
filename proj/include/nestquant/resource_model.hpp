#pragma once

#include "nestquant/tensor.hpp"

namespace nestquant {

// Closed-form resource arithmetic. Values are exact; rounding to presentation
// precision happens only in the callers that print them.

// Fraction of storage saved by one nested model versus separate n-bit and
// h-bit models: nesting stores h + (l+1) = n+1 bits per weight, the pair
// stores n + h.
double ideal_storage_reduction(int full_bits, int high_bits);

struct PageCosts {
  double high_in = 0;  // launching the part-bit model
  double low_in = 0;   // upgrading to the full-bit model
};

// Share split of a nested model's disk bytes: high ~ h/(n+1), low ~ (l+1)/(n+1).
// The two shares always sum to disk_bytes exactly.
PageCosts nest_page_costs(double disk_bytes, int full_bits, int high_bits);

struct Transition {
  double page_in = 0;
  double page_out = 0;
  double total() const { return page_in + page_out; }
};

// 1 - nest.total / diverse.total.
double reduced_overhead(const Transition& nest, const Transition& diverse);

struct OverheadReport {
  double nest_page_in = 0;
  double nest_page_out = 0;
  double diverse_page_in = 0;
  double diverse_page_out = 0;
  double reduced_fraction = 0;
};

OverheadReport make_overhead_report(const Transition& nest, const Transition& diverse);

// U_intk = k/8 * U_int8.
double memory_usage_estimate(double u_int8_bytes, int bits);

}  // namespace nestquant
