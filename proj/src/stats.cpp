#include "nestquant/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace nestquant {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("correlation inputs differ in length");
  if (a.size() < 2) throw DataError("correlation needs at least two observations");
  for (double v : a)
    if (!std::isfinite(v)) throw DataError("non-finite value in correlation input");
  for (double v : b)
    if (!std::isfinite(v)) throw DataError("non-finite value in correlation input");
}

std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });

  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // ties share the mean rank
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

// Exchanges a stable merge sort performs to order `v`, i.e. discordant pairs.
std::uint64_t merge_count(std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<double> buf(n);
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
      const std::size_t mid = lo + width;
      const std::size_t hi = std::min(lo + 2 * width, n);
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          swaps += mid - i;
          buf[k++] = v[j++];
        } else {
          buf[k++] = v[i++];
        }
      }
      while (i < mid) buf[k++] = v[i++];
      while (j < hi) buf[k++] = v[j++];
      std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
                buf.begin() + static_cast<std::ptrdiff_t>(hi),
                v.begin() + static_cast<std::ptrdiff_t>(lo));
    }
  }
  return swaps;
}

std::uint64_t tie_pairs(std::span<const double> sorted_keys) {
  std::uint64_t pairs = 0;
  std::size_t i = 0;
  while (i < sorted_keys.size()) {
    std::size_t j = i;
    while (j + 1 < sorted_keys.size() && sorted_keys[j + 1] == sorted_keys[i]) ++j;
    const std::uint64_t t = j - i + 1;
    pairs += t * (t - 1) / 2;
    i = j + 1;
  }
  return pairs;
}

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b);
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0 || sbb == 0)
    throw UndefinedValueError("correlation of a constant sequence is undefined");
  return sab / std::sqrt(saa * sbb);
}

double spearman(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b);
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  return pearson(ra, rb);
}

double kendall_tau_b(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b);
  const std::size_t n = a.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (a[i] != a[j]) return a[i] < a[j];
    return b[i] < b[j];
  });

  std::vector<double> xs(n), ys(n);
  for (std::size_t k = 0; k < n; ++k) {
    xs[k] = a[order[k]];
    ys[k] = b[order[k]];
  }

  // Pairs tied on x, on both, and on y.
  const std::uint64_t n1 = tie_pairs(xs);
  std::uint64_t n3 = 0;
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && xs[j + 1] == xs[i] && ys[j + 1] == ys[i]) ++j;
      const std::uint64_t t = j - i + 1;
      n3 += t * (t - 1) / 2;
      i = j + 1;
    }
  }
  std::vector<double> ys_sorted = ys;
  std::sort(ys_sorted.begin(), ys_sorted.end());
  const std::uint64_t n2 = tie_pairs(ys_sorted);

  const std::uint64_t swaps = merge_count(ys);
  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;

  if (n1 == n0 || n2 == n0)
    throw UndefinedValueError("correlation of a constant sequence is undefined");

  const double numerator = static_cast<double>(n0) - static_cast<double>(n1) -
                           static_cast<double>(n2) + static_cast<double>(n3) -
                           2.0 * static_cast<double>(swaps);
  const double denominator = std::sqrt(static_cast<double>(n0 - n1)) *
                             std::sqrt(static_cast<double>(n0 - n2));
  return numerator / denominator;
}

CorrelationTriple correlations(const FloatTensor& a, const FloatTensor& b) {
  if (a.numel() != b.numel()) throw ShapeError("correlation inputs differ in length");
  std::vector<double> va(static_cast<std::size_t>(a.numel()));
  std::vector<double> vb(static_cast<std::size_t>(b.numel()));
  for (Index i = 0; i < a.numel(); ++i) {
    va[static_cast<std::size_t>(i)] = a.data[i];
    vb[static_cast<std::size_t>(i)] = b.data[i];
  }
  return {pearson(va, vb), spearman(va, vb), kendall_tau_b(va, vb)};
}

}  // namespace nestquant
