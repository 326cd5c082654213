#include "conceptkit/conceptmap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "conceptkit/error.hpp"
#include "conceptkit/kernels.hpp"

namespace conceptkit::conceptmap {

Matrix pairwise_squared_distances(const Matrix& points) {
  const Eigen::Index n = points.cols();
  const auto d = static_cast<std::size_t>(points.rows());
  Matrix out = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double dist =
          kernels::squared_distance({points.col(i).data(), d}, {points.col(j).data(), d});
      out(i, j) = dist;
      out(j, i) = dist;
    }
  return out;
}

Affinities conditional_affinities(const Matrix& dist, double perplexity, double tolerance) {
  const Eigen::Index n = dist.rows();
  Affinities a;
  a.conditional = Matrix::Zero(n, n);
  a.entropies.resize(static_cast<std::size_t>(n));
  a.betas.resize(static_cast<std::size_t>(n));
  const double target = std::log(perplexity);
  std::vector<double> row(static_cast<std::size_t>(n));

  for (Eigen::Index i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, dist(i, j));

    double beta = 1.0;
    double lo = -1.0;  // < 0 means unbounded
    double hi = -1.0;
    double entropy = 0.0;
    double total = 0.0;
    for (int it = 0; it < 500; ++it) {
      total = 0.0;
      double weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto jj = static_cast<std::size_t>(j);
        if (j == i) {
          row[jj] = 0.0;
          continue;
        }
        const double shifted = dist(i, j) - dmin;
        row[jj] = std::exp(-beta * shifted);
        total += row[jj];
        weighted += shifted * row[jj];
      }
      // H = log(sum) + beta * E[d], with distances shifted by dmin
      entropy = std::log(total) + beta * weighted / total;
      const double diff = entropy - target;
      if (std::abs(diff) < tolerance) break;
      if (diff > 0) {
        lo = beta;
        beta = hi < 0 ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = lo < 0 ? beta * 0.5 : 0.5 * (beta + lo);
      }
    }
    for (Eigen::Index j = 0; j < n; ++j) a.conditional(i, j) = row[static_cast<std::size_t>(j)] / total;
    a.entropies[static_cast<std::size_t>(i)] = entropy;
    a.betas[static_cast<std::size_t>(i)] = beta;
  }
  return a;
}

Matrix embed_2d(const Matrix& dictionary, const TsneConfig& config) {
  const Eigen::Index n = dictionary.cols();
  if (n < 5) throw Error(ErrorKind::invalid_argument, "t-SNE needs at least 5 concepts");
  if (!(config.perplexity >= 1.0) || !(3.0 * config.perplexity < static_cast<double>(n)))
    throw Error(ErrorKind::invalid_argument,
                "perplexity " + std::to_string(config.perplexity) + " infeasible for " +
                    std::to_string(n) + " concepts (need 1 <= perplexity < K/3)");
  if (config.iterations < 1) throw Error(ErrorKind::invalid_argument, "iterations must be >= 1");

  const Affinities aff = conditional_affinities(pairwise_squared_distances(dictionary),
                                                config.perplexity, config.entropy_tolerance);
  Matrix p = aff.conditional + aff.conditional.transpose();
  p /= p.sum();
  p = p.cwiseMax(1e-12);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  Matrix y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) y(i, c) = normal(rng);

  Matrix update = Matrix::Zero(n, 2);
  Matrix gains = Matrix::Ones(n, 2);
  Matrix grad(n, 2);
  Matrix num(n, n);
  double exaggeration = config.exaggeration;

  for (int it = 0; it < config.iterations; ++it) {
    if (it == config.exaggeration_iterations) {
      // Second phase starts from fresh optimiser state; gains grown during
      // exaggeration otherwise fling points outward.
      exaggeration = 1.0;
      update.setZero();
      gains.setOnes();
    }
    const double momentum = it < config.exaggeration_iterations ? 0.5 : 0.8;

    double qsum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double dx = y(i, 0) - y(j, 0);
        const double dy = y(i, 1) - y(j, 1);
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        num(i, j) = q;
        num(j, i) = q;
        qsum += 2.0 * q;
      }
    }
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double mult = (exaggeration * p(i, j) - num(i, j) / qsum) * num(i, j);
        grad(i, 0) += 4.0 * mult * (y(i, 0) - y(j, 0));
        grad(i, 1) += 4.0 * mult * (y(i, 1) - y(j, 1));
      }

    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 2; ++c) {
        const bool downhill = update(i, c) * grad(i, c) < 0.0;
        gains(i, c) = std::max(downhill ? gains(i, c) + 0.2 : gains(i, c) * 0.8, 0.01);
        update(i, c) = momentum * update(i, c) - config.learning_rate * gains(i, c) * grad(i, c);
        y(i, c) += update(i, c);
      }
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

const char* to_string(TagBasis basis) {
  return basis == TagBasis::model_prediction ? "model_prediction" : "ground_truth";
}

TagBasis tag_basis_from_string(const std::string& s) {
  if (s == "model_prediction") return TagBasis::model_prediction;
  if (s == "ground_truth") return TagBasis::ground_truth;
  throw Error(ErrorKind::format, "unknown tag basis \"" + s + "\"");
}

std::vector<StyleTag> style_specificity(const BinaryMatrix& active,
                                        std::span<const std::size_t> labels,
                                        std::size_t n_styles, double share_threshold) {
  if (static_cast<Eigen::Index>(labels.size()) != active.cols())
    throw Error(ErrorKind::shape_mismatch, "style_specificity: one label per sample required");
  std::vector<StyleTag> tags(static_cast<std::size_t>(active.rows()));
  std::vector<std::int64_t> counts(n_styles);
  for (Eigen::Index k = 0; k < active.rows(); ++k) {
    std::fill(counts.begin(), counts.end(), 0);
    std::int64_t total = 0;
    for (Eigen::Index c = 0; c < active.cols(); ++c)
      if (active(k, c)) {
        const std::size_t l = labels[static_cast<std::size_t>(c)];
        if (l >= n_styles) throw Error(ErrorKind::invalid_argument, "label outside style list");
        ++counts[l];
        ++total;
      }
    if (total == 0) continue;
    std::vector<std::size_t> order(n_styles);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
    const double top = static_cast<double>(counts[order[0]]) / static_cast<double>(total);
    const double pair =
        n_styles > 1 ? top + static_cast<double>(counts[order[1]]) / static_cast<double>(total) : top;
    auto& tag = tags[static_cast<std::size_t>(k)];
    if (top > share_threshold) tag = {order[0]};
    else if (n_styles > 1 && pair > share_threshold) tag = {order[0], order[1]};
  }
  return tags;
}

std::vector<std::int64_t> activation_frequency(const BinaryMatrix& active) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(active.rows()));
  for (Eigen::Index k = 0; k < active.rows(); ++k)
    out[static_cast<std::size_t>(k)] = active.row(k).cast<std::int64_t>().sum();
  return out;
}

std::vector<ConceptMapPoint> build_concept_map(const Matrix& dictionary,
                                               const BinaryMatrix& active,
                                               std::span<const std::size_t> labels,
                                               std::size_t n_styles, TagBasis basis,
                                               const TsneConfig& config) {
  if (active.rows() != dictionary.cols())
    throw Error(ErrorKind::shape_mismatch, "activation rows must match dictionary columns");
  const Matrix coords = embed_2d(dictionary, config);
  const auto freq = activation_frequency(active);
  const auto tags = style_specificity(active, labels, n_styles);
  std::vector<ConceptMapPoint> points;
  for (Eigen::Index k = 0; k < dictionary.cols(); ++k) {
    const auto kk = static_cast<std::size_t>(k);
    points.push_back({kk, coords(k, 0), coords(k, 1), freq[kk], tags[kk], basis});
  }
  return points;
}

nlohmann::json to_json(const std::vector<ConceptMapPoint>& points,
                       const std::vector<std::string>& styles) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& pt : points) {
    nlohmann::json tag = nlohmann::json::array();
    for (auto s : pt.tag) tag.push_back(styles.at(s));
    arr.push_back({{"concept", pt.concept_index},
                   {"x", pt.x},
                   {"y", pt.y},
                   {"frequency", pt.frequency},
                   {"style_tag", tag},
                   {"tag_basis", to_string(pt.basis)}});
  }
  return arr;
}

}  // namespace conceptkit::conceptmap
