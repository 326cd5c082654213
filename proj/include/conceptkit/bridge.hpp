#pragma once

// Links image-level concepts to patch-level concepts through binarised
// co-occurrence: P[i, j] = P(patch concept i present | full concept j active).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "conceptkit/npy.hpp"

namespace conceptkit::bridge {

inline constexpr double kDefaultPatchPercentile = 0.95;
inline constexpr double kDefaultFullPercentile = 0.80;

using Counts = Eigen::MatrixX<std::int64_t>;

struct ConceptBridge {
  Matrix p;                          // K_patch x K_full, 0 where undefined
  Counts joint;                      // count(i and j)
  std::vector<std::int64_t> full_counts;  // count(j)
  double tau_patch_percentile = kDefaultPatchPercentile;
  double tau_full_percentile = kDefaultFullPercentile;
  double tau_patch = 0.0;  // threshold values, when known
  double tau_full = 0.0;

  bool defined(Eigen::Index j) const { return full_counts[static_cast<std::size_t>(j)] > 0; }
};

// image_of[p] is the image index of patch column p (< n_images).
BinaryMatrix or_aggregate(const BinaryMatrix& patch_b, std::span<const std::size_t> image_of,
                          std::size_t n_images);

BinaryMatrix or_aggregate(const BinaryMatrix& patch_b, std::span<const long long> image_of,
                          std::size_t n_images);

ConceptBridge build_bridge(const BinaryMatrix& full_b, const BinaryMatrix& image_patch_b);

struct ScoredConcept {
  std::size_t concept_index = 0;
  double score = 0.0;
};

struct ImageConcepts {
  bool no_concepts = false;               // nothing above tau_full
  std::vector<std::size_t> active_full;   // active full-image concepts
  std::vector<ScoredConcept> ranked;      // patch concepts, best first
};

// Ranks patch concepts by max over active, defined full concepts j of P[i, j].
ImageConcepts image_concepts(const Vector& full_activation, double tau_full,
                             const ConceptBridge& bridge, std::size_t top_n);

void save_bridge(const ConceptBridge& bridge, const std::filesystem::path& dir);
ConceptBridge load_bridge(const std::filesystem::path& dir);

}  // namespace conceptkit::bridge
