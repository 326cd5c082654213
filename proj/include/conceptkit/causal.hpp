#pragma once

// Do-interventions on stored hidden states: subtract alpha * a_k * u_k from
// h_L, re-run the tail, and compare style scores against equal-magnitude
// random directions.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "conceptkit/npy.hpp"
#include "conceptkit/stats.hpp"
#include "conceptkit/tail.hpp"

namespace conceptkit::causal {

inline const std::vector<double> kDefaultAlphas = {-0.5, -0.25, 0.25, 0.5, 0.75, 1.0};
inline constexpr int kDefaultRandomDirections = 10;
inline constexpr std::size_t kDefaultTopConcepts = 3;

struct StyleScore {
  double logit = 0.0;
  double logprob = 0.0;
};

// Scores each style by the logit / log-softmax of its first token.
std::vector<StyleScore> style_scores_from_logits(const Vector& logits,
                                                 std::span<const int> token_ids);
std::vector<StyleScore> style_scores(const Tail& tail, const Vector& hidden,
                                     std::span<const int> token_ids);

// h - alpha * activation * direction
Vector intervene(const Vector& hidden, const Vector& direction, double activation,
                 double alpha);

// Seed for the calibration draws of one (sample, concept) pair.
std::uint64_t calibration_seed(std::uint64_t seed, std::size_t sample, std::size_t concept_index);

// n vectors uniform on the sphere of radius `radius` in R^dim.
std::vector<Vector> calibration_directions(Eigen::Index dim, double radius, std::uint64_t seed,
                                           int n_random);

struct StyleEffect {
  double delta_logit = 0.0;
  double delta_logprob = 0.0;
  double random_mean_logit = 0.0;
  double random_mean_logprob = 0.0;
  double calibrated_logit = 0.0;
  double calibrated_logprob = 0.0;
};

struct Effect {
  double alpha = 0.0;
  std::vector<StyleEffect> styles;
  bool noop = false;  // activation was zero
};

// One Effect per alpha. The same random directions are reused across alphas.
std::vector<Effect> causal_effects(const Tail& tail, const Vector& hidden, const Vector& direction,
                                   double activation, std::span<const double> alphas,
                                   std::span<const int> token_ids, int n_random,
                                   std::uint64_t seed);

Effect causal_effect(const Tail& tail, const Vector& hidden, const Vector& direction,
                     double activation, double alpha, std::span<const int> token_ids,
                     int n_random, std::uint64_t seed);

struct InterventionRecord {
  std::string sample_id;
  std::size_t sample = 0;  // column in the activation set
  std::size_t concept_index = 0;
  std::size_t style = 0;
  double alpha = 0.0;
  double activation = 0.0;
  StyleEffect effect;
  bool noop = false;
};

struct StudyConfig {
  std::vector<double> alphas = kDefaultAlphas;
  std::size_t top_m = kDefaultTopConcepts;
  int n_random = kDefaultRandomDirections;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct StudyInput {
  const Matrix* hidden = nullptr;       // d x n hidden states
  const Matrix* activations = nullptr;  // K x n concept activations
  const Matrix* dictionary = nullptr;   // d x K
  std::span<const std::string> sample_ids;  // length n
  std::span<const int> token_ids;           // per style
};

// The top_m concepts of a column, descending, ties by ascending id.
std::vector<std::size_t> top_concepts(const Matrix& activations, Eigen::Index column,
                                      std::size_t m);

// For each sample in `samples` (columns of the input matrices), intervene on
// its top_m concepts across the full alpha grid. Records are ordered by
// sample, concept rank, alpha, style.
std::vector<InterventionRecord> run_intervention_study(const StudyInput& input, const Tail& tail,
                                                       std::span<const std::size_t> samples,
                                                       const StudyConfig& config);

struct SlopeFit {
  double slope = 0.0;
  double r2 = 0.0;
  std::size_t samples = 0;  // distinct samples contributing
  bool defined = false;
};

// Least-squares line through the origin; R^2 against the uncentred total sum
// of squares (1 when y is identically zero).
SlopeFit causal_slope(std::span<const double> alphas, std::span<const double> y);

struct StyleAgreement {
  std::string style;
  stats::RankCorrelation correlation;
  std::vector<std::size_t> concepts;  // concepts entering the correlation
};

struct CausalSummary {
  Eigen::Index concepts = 0;
  Eigen::Index styles = 0;
  std::vector<SlopeFit> fits;  // concept-major: fits[k * styles + s]

  const SlopeFit& at(Eigen::Index k, Eigen::Index s) const {
    return fits[static_cast<std::size_t>(k * styles + s)];
  }
};

// Slopes of the per-alpha mean calibrated logit, skipping no-op records.
CausalSummary summarize(std::span<const InterventionRecord> records, Eigen::Index concepts,
                        Eigen::Index styles);

// Per style: Spearman rho between probe weights W[s, .] and causal slopes over
// concepts with a defined slope.
std::vector<StyleAgreement> compare_with_probe(const CausalSummary& summary,
                                               const Matrix& probe_weights,
                                               const std::vector<std::string>& styles);

void write_records(std::span<const InterventionRecord> records,
                   const std::vector<std::string>& styles, const std::filesystem::path& path);
std::vector<InterventionRecord> read_records(const std::filesystem::path& path,
                                             const std::vector<std::string>& styles);

}  // namespace conceptkit::causal
