#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace readalign {

// 1 - SSE/SST about the observed mean; 0 when the observed values are constant.
inline double r2_score(std::span<const double> observed, std::span<const double> predicted) {
  const std::size_t n = observed.size();
  if (n == 0) return 0.0;
  double mean = 0;
  for (double v : observed) mean += v;
  mean /= static_cast<double>(n);
  double sse = 0, sst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sse += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
    sst += (observed[i] - mean) * (observed[i] - mean);
  }
  if (!(sst > 0)) return 0.0;
  return 1.0 - sse / sst;
}

// Two-pass Pearson correlation; 0 when either side has zero variance.
inline double pearson_r(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0) || !(sbb > 0)) return 0.0;
  const double r = sab / std::sqrt(saa * sbb);
  return std::fmax(-1.0, std::fmin(1.0, r));
}

}  // namespace readalign
