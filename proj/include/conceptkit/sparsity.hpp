#pragma once

#include <cstddef>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "conceptkit/npy.hpp"

namespace conceptkit::sparsity {

// Entries at or below this are treated as inactive when pooling.
inline constexpr double kZeroTolerance = 1e-12;
inline constexpr double kDefaultPercentile = 0.90;

struct ThresholdReport {
  double percentile = 0.0;
  double tau = 0.0;
  double avg_active = 0.0;   // mean per-column count of entries >= tau
  double avg_nonzero = 0.0;  // mean per-column count of entries > 0
  std::size_t pooled = 0;    // number of pooled nonzero entries
};

// Linear-interpolation quantile of already sorted values, q in [0, 1].
double sorted_quantile(const std::vector<double>& sorted, double q);

// tau is the p-quantile of all entries of V strictly above zero, pooled over
// concepts and samples.
ThresholdReport percentile_threshold(const Matrix& v, double p);

BinaryMatrix binarize(const Matrix& v, double tau);

// The m samples with the largest V[k, .], descending; ties by ascending index.
std::vector<std::size_t> top_activating(const Matrix& v, Eigen::Index concept_index,
                                        std::size_t m);

void to_json(nlohmann::json& j, const ThresholdReport& r);

}  // namespace conceptkit::sparsity
