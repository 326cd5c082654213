#pragma once

// 2-D map of the concept dictionary: exact t-SNE over dictionary columns,
// activation frequencies and style-specificity tags.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "conceptkit/npy.hpp"

namespace conceptkit::conceptmap {

struct TsneConfig {
  double perplexity = 15.0;
  int iterations = 1000;
  double exaggeration = 12.0;
  int exaggeration_iterations = 250;
  double learning_rate = 200.0;
  double entropy_tolerance = 1e-5;  // nats
  std::uint64_t seed = 0;
};

// Squared Euclidean distances between the columns of `points`.
Matrix pairwise_squared_distances(const Matrix& points);

struct Affinities {
  Matrix conditional;             // row i is p(j | i), zero diagonal
  std::vector<double> entropies;  // achieved entropy per row, nats
  std::vector<double> betas;      // precision 1 / (2 sigma^2) per row
};

// Per-row bisection on the Gaussian precision so that each row's entropy
// matches log(perplexity).
Affinities conditional_affinities(const Matrix& squared_distances, double perplexity,
                                  double tolerance = 1e-5);

// K x 2 coordinates for the K columns of `dictionary`.
Matrix embed_2d(const Matrix& dictionary, const TsneConfig& config);

enum class TagBasis { model_prediction, ground_truth };
const char* to_string(TagBasis basis);
TagBasis tag_basis_from_string(const std::string& s);

// Empty: no tag; one entry: single-style concept; two: style pair.
using StyleTag = std::vector<std::size_t>;

std::vector<StyleTag> style_specificity(const BinaryMatrix& active,
                                        std::span<const std::size_t> labels,
                                        std::size_t n_styles, double share_threshold = 0.7);

std::vector<std::int64_t> activation_frequency(const BinaryMatrix& active);

struct ConceptMapPoint {
  std::size_t concept_index = 0;
  double x = 0.0;
  double y = 0.0;
  std::int64_t frequency = 0;
  StyleTag tag;
  TagBasis basis = TagBasis::model_prediction;
};

std::vector<ConceptMapPoint> build_concept_map(const Matrix& dictionary,
                                               const BinaryMatrix& active,
                                               std::span<const std::size_t> labels,
                                               std::size_t n_styles, TagBasis basis,
                                               const TsneConfig& config);

nlohmann::json to_json(const std::vector<ConceptMapPoint>& points,
                       const std::vector<std::string>& styles);

}  // namespace conceptkit::conceptmap
