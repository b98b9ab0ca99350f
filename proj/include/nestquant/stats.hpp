#pragma once

#include <span>

#include "nestquant/tensor.hpp"

namespace nestquant {

struct CorrelationTriple {
  double pearson = 0;
  double spearman = 0;
  double kendall = 0;
};

double pearson(std::span<const double> a, std::span<const double> b);

// Rank transform with average ties, then Pearson on the ranks.
double spearman(std::span<const double> a, std::span<const double> b);

// Kendall tau-b via merge-sort inversion counting, O(n log n).
double kendall_tau_b(std::span<const double> a, std::span<const double> b);

CorrelationTriple correlations(const FloatTensor& a, const FloatTensor& b);

}  // namespace nestquant
