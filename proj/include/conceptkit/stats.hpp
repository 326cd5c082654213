#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace conceptkit::stats {

struct RankCorrelation {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided, t approximation with n - 2 dof
  std::size_t n = 0;
};

// 1-based ranks; tied values share their average rank.
std::vector<double> average_ranks(std::span<const double> x);

double pearson(std::span<const double> x, std::span<const double> y);

RankCorrelation spearman(std::span<const double> x, std::span<const double> y);

// Two-sided p-value of Student's t with `dof` degrees of freedom.
double student_t_two_sided(double t, double dof);

double mean(std::span<const double> x);
// Standard error of the mean (sample sd / sqrt(n)); 0 for n < 2.
double standard_error(std::span<const double> x);

// SplitMix64 finaliser, used to derive independent seeds from tuples.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace conceptkit::stats
