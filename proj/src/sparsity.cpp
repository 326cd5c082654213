#include "conceptkit/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "conceptkit/error.hpp"
#include "conceptkit/kernels.hpp"

namespace conceptkit::sparsity {

double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw Error(ErrorKind::invalid_argument, "quantile of empty set");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

ThresholdReport percentile_threshold(const Matrix& v, double p) {
  if (!(p >= 0.0 && p < 1.0))
    throw Error(ErrorKind::invalid_argument, "percentile must lie in [0, 1)");
  if (v.size() > 0 && v.minCoeff() < 0.0)
    throw Error(ErrorKind::invalid_argument, "activations must be nonnegative");
  std::vector<double> pooled;
  pooled.reserve(static_cast<std::size_t>(v.size()) / 4);
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v.data()[i] > kZeroTolerance) pooled.push_back(v.data()[i]);
  if (pooled.empty()) throw Error(ErrorKind::invalid_argument, "no nonzero activations");
  std::sort(pooled.begin(), pooled.end());

  ThresholdReport r;
  r.percentile = p;
  r.pooled = pooled.size();
  r.tau = sorted_quantile(pooled, p);
  const auto n = static_cast<double>(v.cols());
  r.avg_nonzero = static_cast<double>(pooled.size()) / n;
  const auto active = kernels::count_at_least({v.data(), static_cast<std::size_t>(v.size())}, r.tau);
  r.avg_active = static_cast<double>(active) / n;
  return r;
}

BinaryMatrix binarize(const Matrix& v, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorKind::invalid_argument, "binarize needs tau > 0");
  BinaryMatrix b(v.rows(), v.cols());
  kernels::threshold_mask({v.data(), static_cast<std::size_t>(v.size())}, tau,
                          {b.data(), static_cast<std::size_t>(b.size())});
  return b;
}

std::vector<std::size_t> top_activating(const Matrix& v, Eigen::Index concept_index,
                                        std::size_t m) {
  if (concept_index < 0 || concept_index >= v.rows())
    throw Error(ErrorKind::invalid_argument,
                "concept index " + std::to_string(concept_index) + " out of range");
  const auto n = static_cast<std::size_t>(v.cols());
  if (m < 1 || m > n) throw Error(ErrorKind::invalid_argument, "need 1 <= m <= n");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto row = v.row(concept_index);
  auto before = [&](std::size_t a, std::size_t b) {
    const double va = row(static_cast<Eigen::Index>(a));
    const double vb = row(static_cast<Eigen::Index>(b));
    return va != vb ? va > vb : a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m), idx.end(), before);
  idx.resize(m);
  return idx;
}

void to_json(nlohmann::json& j, const ThresholdReport& r) {
  j = nlohmann::json{{"percentile", r.percentile},
                     {"tau", r.tau},
                     {"avg_active", r.avg_active},
                     {"avg_nonzero", r.avg_nonzero},
                     {"pooled_nonzero", r.pooled}};
}

}  // namespace conceptkit::sparsity
