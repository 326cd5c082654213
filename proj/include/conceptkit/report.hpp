#pragma once

// Human-facing artifacts: concept cards, causal-effect curves, probe-vs-causal
// scatters and user-study bundles. All outputs are deterministic functions of
// their inputs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conceptkit/causal.hpp"
#include "conceptkit/conceptmap.hpp"
#include "conceptkit/manifest.hpp"
#include "conceptkit/npy.hpp"

namespace conceptkit::report {

inline constexpr std::size_t kDefaultCardSize = 24;
inline constexpr std::size_t kMaxSvgBytes = 2 * 1024 * 1024;

struct CardEntry {
  std::size_t sample = 0;
  double activation = 0.0;
};

struct ConceptCard {
  std::size_t concept_index = 0;
  std::vector<CardEntry> top;
  std::vector<double> style_shares;  // over samples where the concept is active
  std::optional<std::string> label;
};

// `active` is the binarised activation matrix used for the style shares;
// shares use each sample's predicted style.
std::vector<ConceptCard> concept_cards(const Matrix& activations, const BinaryMatrix& active,
                                       const Manifest& dataset, std::size_t m);

// Writes cards/concept_{k}.json and cards/concept_{k}.svg under out_dir.
std::vector<std::filesystem::path> export_concept_cards(const Matrix& activations,
                                                        const BinaryMatrix& active,
                                                        const Manifest& dataset, std::size_t m,
                                                        const std::filesystem::path& out_dir);

struct CurvePoint {
  double alpha = 0.0;
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t samples = 0;
};

struct CausalCurve {
  std::size_t style = 0;
  std::vector<CurvePoint> points;  // in alpha-grid order
};

// Mean calibrated logit delta per alpha for each style that has records for
// `concept_index`. Throws if any grid alpha is missing for a plotted style.
std::vector<CausalCurve> causal_curves(std::span<const causal::InterventionRecord> records,
                                       std::size_t concept_index, std::span<const double> alphas);

std::string plot_causal_curves(std::span<const causal::InterventionRecord> records,
                               std::size_t concept_index, std::span<const double> alphas,
                               const std::vector<std::string>& styles);

std::string spearman_annotation(const stats::RankCorrelation& c);

std::string plot_slope_vs_weight(const causal::CausalSummary& summary, const Matrix& probe_weights,
                                 std::size_t style, const std::vector<std::string>& styles);

// Scatter of the 2-D concept map; marker size follows activation frequency,
// colour the style tag (grey when untagged).
std::string plot_concept_map(const std::vector<conceptmap::ConceptMapPoint>& points,
                             const std::vector<std::string>& styles);

struct StudyCandidate {
  std::string image_id;
  std::size_t predicted_style = 0;
  std::size_t true_style = 0;
  std::vector<std::size_t> bridged;       // patch concepts ranked by the bridge
  std::vector<std::size_t> patch_ranked;  // patch concepts ranked by max patch activation
  std::vector<std::uint8_t> active;       // OR-aggregated binarised patch concepts
};

struct StudyPlan {
  std::size_t per_style = 10;
  std::size_t correct = 7;
  std::size_t incorrect = 3;
  std::size_t top_concepts = 2;
  std::size_t shown = 3;
};

struct StudyConcept {
  std::size_t concept_index = 0;
  bool control = false;
};

struct StudyBundle {
  std::size_t index = 0;
  std::string image_id;
  std::size_t predicted_style = 0;
  std::size_t true_style = 0;
  std::vector<StudyConcept> concepts;  // display order (shuffled)
  std::vector<std::size_t> bridged;
  std::vector<std::size_t> patch_ranked;
  std::uint64_t shuffle_seed = 0;
};

// Stratified selection (per true style: `correct` correctly predicted and
// `incorrect` mispredicted cases), then up to `top_concepts` bridged concepts
// active in the image plus random controls drawn from the inactive ones.
std::vector<StudyBundle> assemble_study(std::span<const StudyCandidate> candidates,
                                        std::size_t n_styles, std::size_t n_concepts,
                                        const StudyPlan& plan, std::uint64_t seed);

void write_bundles(std::span<const StudyBundle> bundles, const std::vector<std::string>& styles,
                   const std::filesystem::path& dir);

}  // namespace conceptkit::report
