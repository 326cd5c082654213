#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptkit/error.hpp"
#include "conceptkit/sparsity.hpp"
#include "helpers.hpp"

using namespace conceptkit;
using namespace conceptkit::sparsity;

namespace {

// Sparse nonnegative K x n matrix with all-distinct nonzeros.
Matrix sparse_random(Eigen::Index k, Eigen::Index n, double density, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::exponential_distribution<double> mag(1.0);
  Matrix v = Matrix::Zero(k, n);
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (unit(rng) < density) v.data()[i] = 1e-6 + mag(rng);
  return v;
}

}  // namespace

TEST_CASE("sorted_quantile interpolates between order statistics") {
  const std::vector<double> s{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(sorted_quantile(s, 0.0) == 1.0);
  CHECK(sorted_quantile(s, 1.0) == 10.0);
  // h = 0.8 * 9 = 7.2 -> 8 + 0.2 * (9 - 8)
  CHECK(sorted_quantile(s, 0.8) == doctest::Approx(8.2).epsilon(1e-15));
  CHECK(sorted_quantile({4.0}, 0.3) == 4.0);
  CHECK_THROWS_AS(sorted_quantile({}, 0.5), Error);
}

TEST_CASE("percentile_threshold examples") {
  SUBCASE("hand-counted column 1..10 at p = 0.8") {
    Matrix v = Matrix::Zero(12, 1);
    for (int i = 0; i < 10; ++i) v(i, 0) = i + 1;
    const auto r = percentile_threshold(v, 0.8);
    CHECK(r.avg_active == 2.0);
    CHECK(r.avg_nonzero == 10.0);
    CHECK(r.pooled == 10);
    CHECK(r.tau > 8.0);
    CHECK(r.tau <= 9.0);
  }
  SUBCASE("p = 0 keeps every nonzero") {
    const Matrix v = sparse_random(20, 300, 0.3, 1);
    const auto r = percentile_threshold(v, 0.0);
    CHECK(r.avg_active == r.avg_nonzero);
    CHECK(r.tau == doctest::Approx(v.cwiseMax(0).unaryExpr([](double x) { return x > 0 ? x : 1e9; }).minCoeff()));
  }
  SUBCASE("pooled quantile keeps a (1 - p) fraction at 39 nonzeros per column") {
    // 39.1 nonzeros per column on average, as in the reference sparsity table.
    const Matrix v = sparse_random(128, 2000, 39.1 / 128.0, 2);
    const auto r = percentile_threshold(v, 0.9);
    CHECK(r.avg_active == doctest::Approx(0.1 * r.avg_nonzero).epsilon(0.01));
  }
  SUBCASE("entries at or below the zero tolerance are not pooled") {
    Matrix v = Matrix::Zero(3, 2);
    v(0, 0) = 1e-13;
    v(1, 1) = 2.0;
    v(2, 1) = 4.0;
    const auto r = percentile_threshold(v, 0.0);
    CHECK(r.pooled == 2);
    CHECK(r.tau == 2.0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_WITH_AS(percentile_threshold(Matrix::Zero(4, 4), 0.5), "no nonzero activations", Error);
    CHECK_THROWS_AS(percentile_threshold(Matrix::Ones(2, 2), 1.0), Error);
    CHECK_THROWS_AS(percentile_threshold(Matrix::Ones(2, 2), -0.1), Error);
    CHECK_THROWS_AS(percentile_threshold(-Matrix::Ones(2, 2), 0.5), Error);
  }
}

TEST_CASE("fraction kept lies within 2/N of 1 - p") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    std::mt19937_64 rng(seed);
    const auto k = static_cast<Eigen::Index>(2 + rng() % 20);
    const auto n = static_cast<Eigen::Index>(1 + rng() % 200);
    const Matrix v = sparse_random(k, n, 0.4, 100 + seed);
    if ((v.array() > 0).count() == 0) continue;
    for (double p : {0.1, 0.5, 0.6, 0.8, 0.9, 0.95}) {
      const auto r = percentile_threshold(v, p);
      const auto nz = static_cast<double>(r.pooled);
      const double kept = static_cast<double>((v.array() >= r.tau).count()) / nz;
      CHECK(kept >= 1 - p - 2 / nz);
      CHECK(kept <= 1 - p + 2 / nz);
      CHECK(0 <= r.avg_active);
      CHECK(r.avg_active <= r.avg_nonzero);
      CHECK(r.avg_nonzero <= static_cast<double>(k));
    }
  }
}

TEST_CASE("avg_active is linear across percentiles") {
  const Matrix v = sparse_random(64, 1000, 0.25, 7);
  REQUIRE((v.array() > 0).count() >= 10000);
  const double base = percentile_threshold(v, 0.9).avg_active;
  for (double p : {0.6, 0.8, 0.9}) {
    const double ratio = percentile_threshold(v, p).avg_active / base;
    CHECK(ratio == doctest::Approx((1 - p) / 0.1).epsilon(0.05));
  }
}

TEST_CASE("binarize") {
  const Matrix v = sparse_random(8, 8, 0.5, 11);
  CHECK((binarize(v, v.maxCoeff() * 1.5).array() == 0).all());
  const double smallest = v.unaryExpr([](double x) { return x > 0 ? x : 1e300; }).minCoeff();
  const BinaryMatrix support = binarize(v, smallest);
  for (Eigen::Index i = 0; i < v.size(); ++i) CHECK(support.data()[i] == (v.data()[i] > 0 ? 1 : 0));

  const BinaryMatrix b = binarize(v, 0.5);
  for (double c : {0.5, 1.0, 7.0}) {
    const Matrix scaled = b.cast<double>() * c;
    CHECK((binarize(scaled, 0.5) == b));
  }
  Matrix tie = Matrix::Zero(1, 3);
  tie << 0.2, 0.3, 0.4;
  const BinaryMatrix t = binarize(tie, 0.3);
  CHECK(t(0, 0) == 0);
  CHECK(t(0, 1) == 1);
  CHECK(t(0, 2) == 1);
  CHECK_THROWS_AS(binarize(v, 0.0), Error);
}

TEST_CASE("top_activating") {
  Matrix one_hot = Matrix::Zero(3, 10);
  one_hot(1, 7) = 2.0;
  CHECK(top_activating(one_hot, 1, 1) == std::vector<std::size_t>{7});
  // all ties: ascending index
  CHECK(top_activating(one_hot, 0, 4) == std::vector<std::size_t>{0, 1, 2, 3});

  const Matrix v = sparse_random(5, 300, 0.6, 13);
  for (Eigen::Index k = 0; k < v.rows(); ++k) {
    std::vector<std::size_t> all(300);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::stable_sort(all.begin(), all.end(), [&](std::size_t a, std::size_t b) { return v(k, static_cast<Eigen::Index>(a)) > v(k, static_cast<Eigen::Index>(b)); });
    const auto top = top_activating(v, k, 24);
    CHECK(std::equal(top.begin(), top.end(), all.begin()));
    CHECK(top_activating(v, k, 300) == all);
  }
  CHECK_THROWS_AS(top_activating(v, 5, 1), Error);
  CHECK_THROWS_AS(top_activating(v, -1, 1), Error);
  CHECK_THROWS_AS(top_activating(v, 0, 0), Error);
  CHECK_THROWS_AS(top_activating(v, 0, 301), Error);
}

TEST_CASE("report serialises to JSON") {
  Matrix v = Matrix::Zero(2, 2);
  v << 1, 0, 3, 4;
  const nlohmann::json j = percentile_threshold(v, 0.5);
  CHECK(j.at("percentile") == 0.5);
  CHECK(j.at("tau") == 3.0);
  CHECK(j.at("avg_active") == 1.0);
  CHECK(j.at("avg_nonzero") == 1.5);
  CHECK(j.at("pooled_nonzero") == 3);
}
