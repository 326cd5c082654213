#pragma once

// Multinomial logistic-regression probe from concept activations to the
// model's predicted style.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "conceptkit/npy.hpp"

namespace conceptkit::probe {

enum class FeatureMode { raw, binarized };

const char* to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(const std::string& s);

struct ProbeConfig {
  double l2 = 1e-3;
  double step = 0.1;
  int max_epochs = 2000;
  double plateau = 1e-7;  // stop when the loss changes by less than this
};

struct LinearProbe {
  Matrix w;  // S x K
  Vector b;  // S
  std::vector<std::string> styles;
  FeatureMode mode = FeatureMode::raw;
  double l2 = 0.0;
  double tau = 0.0;  // binarization threshold the features were produced with
  std::vector<double> loss_trace;
  int epochs = 0;
};

// Training loss: mean cross-entropy + l2 * ||W||_F^2 (bias unpenalised).
double training_loss(const Matrix& w, const Vector& b, const Matrix& features,
                     std::span<const std::size_t> labels, double l2);

// features is K x n (one column per sample); labels index into styles.
// Full-batch gradient descent from W = 0, b = 0. A step that would raise
// the loss is halved until it does not.
LinearProbe fit_probe(const Matrix& features, std::span<const std::size_t> labels,
                      const std::vector<std::string>& styles, const ProbeConfig& config,
                      FeatureMode mode = FeatureMode::raw);

// argmax_s (W v + b)_s, ties resolved to the earliest style.
std::vector<std::size_t> predict(const LinearProbe& probe, const Matrix& features);

double accuracy(const LinearProbe& probe, const Matrix& features,
                std::span<const std::size_t> labels);

// Per style, the m concepts with the largest weight; ties by ascending id.
std::vector<std::vector<std::size_t>> top_concepts_per_style(const LinearProbe& probe,
                                                             std::size_t m);

struct ImageSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

// Seeded split of distinct image ids; all patches of an image land on the same side.
ImageSplit split_by_image(const std::vector<std::string>& image_ids, double train_fraction,
                          std::uint64_t seed);

// W.npy, b.npy, probe.json
void save_probe(const LinearProbe& probe, const std::filesystem::path& dir,
                const nlohmann::json& extra);
LinearProbe load_probe(const std::filesystem::path& dir);

}  // namespace conceptkit::probe
