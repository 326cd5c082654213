#pragma once

// Dataset manifests: style list, per-sample metadata and the matrix files an
// extractor produced for one model/layer.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "conceptkit/npy.hpp"

namespace conceptkit {

inline constexpr int kGridSize = 4;
inline constexpr int kPatchesPerImage = kGridSize * kGridSize;
inline constexpr std::size_t kStyleCount = 5;

enum class Granularity { patch, full_image };

const char* to_string(Granularity g);

struct SampleMeta {
  std::string sample_id;
  std::string image_id;
  Granularity granularity = Granularity::patch;
  std::optional<int> patch_row;
  std::optional<int> patch_col;
  std::size_t true_style = 0;       // index into Manifest::styles
  std::size_t predicted_style = 0;
};

struct MatrixPaths {
  std::filesystem::path z;
  std::optional<std::filesystem::path> h;
  std::optional<std::filesystem::path> w_tail;
  std::optional<std::filesystem::path> b_tail;
};

struct Manifest {
  std::string model;
  int layer = 0;
  std::vector<std::string> styles;
  std::vector<int> style_first_token_ids;  // aligned with styles
  MatrixPaths matrices;                    // resolved against the manifest dir
  std::vector<SampleMeta> samples;
  Granularity granularity = Granularity::patch;

  // Distinct image ids in order of first appearance, and each sample's
  // position in that list.
  std::vector<std::string> image_ids;
  std::vector<std::size_t> sample_image;

  std::vector<std::string> warnings;

  std::size_t style_index(const std::string& name) const;
};

struct ActivationSet {
  Matrix z;  // d x n, one column per sample
  int layer = 0;
  std::string model_name;
  std::vector<SampleMeta> samples;
};

// Throws Error(format) on schema violations, unknown styles, duplicate
// sample ids, incomplete patch grids; Error(io) for missing files.
Manifest load_manifest(const std::filesystem::path& path);

// Writes paths relative to the manifest's directory when possible.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

ActivationSet load_activations(const Manifest& manifest);

// Final-prompt-token hidden states H (d x n), same column order as Z.
Matrix load_hidden_states(const Manifest& manifest);

// Column indices of all samples whose image id is in `images`.
std::vector<std::size_t> samples_of_images(const Manifest& manifest,
                                           const std::vector<std::string>& images);

}  // namespace conceptkit
