#pragma once

// Seeded planted-concept dataset: patch activations built from a known
// dictionary, an affine tail whose style rows are linear in the planted
// concepts, and full-image activations derived from the patch mixture.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "conceptkit/npy.hpp"

namespace conceptkit::synthetic {

struct PlantedConfig {
  int dim = 64;
  int concepts = 16;  // last concept is shared by all styles
  int styles = 5;
  int images = 500;
  int vocab = 64;
  double noise = 0.01;
  double on_style = 0.85;  // chance a patch's dominant concept comes from its image's style
  double dominant_lo = 1.5;
  double dominant_hi = 2.5;
  int minor_min = 10; // weak background concepts per patch
  int minor_max = 13;
  double minor_lo = 0.02;
  double minor_hi = 0.4;
  // Style-row loading on the concepts of the style `offset` positions later
  // (cyclically), offset = 1..styles-1. A circulant pattern keeps every
  // concept's mean loading across styles equal.
  std::vector<double> rival_weights = {-0.1, -0.3, -0.5, -0.7};
  // The planted model samples its answer from softmax(sharpness * style
  // logits) (Gumbel-max); infinity gives the plain argmax.
  double label_sharpness = 2.0;
  std::uint64_t seed = 7;
};

struct PlantedData {
  Matrix u;       // dim x concepts, orthonormal columns
  Matrix v;       // concepts x (images * 16)
  Matrix z;       // dim x (images * 16)
  Matrix z_full;  // dim x images
  Matrix w_tail;  // vocab x dim
  Vector b_tail;
  std::vector<int> token_ids;              // first token per style
  std::vector<std::size_t> image_style;    // ground-truth style per image
  std::vector<std::size_t> predicted;       // sampled model answer per patch
  std::vector<std::size_t> predicted_full;  // and per image
  std::vector<std::string> style_names;
};

// Index of the style owning concept k, or `styles` for the shared concept.
std::size_t owner_of(int k, const PlantedConfig& config);

PlantedData generate(const PlantedConfig& config);

// Writes patch/ and full/ manifests plus Z.npy, tail/W.npy, tail/b.npy and
// the planted dictionary truth/U.npy under `dir`. Hidden states point at Z.
void write_dataset(const PlantedData& data, const std::filesystem::path& dir,
                   Dtype dtype = Dtype::float32);

}  // namespace conceptkit::synthetic
