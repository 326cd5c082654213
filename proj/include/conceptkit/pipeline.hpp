#pragma once

// End-to-end orchestration behind the command-line tool. Each stage reads the
// artifacts of the stages before it from the output directory and writes its
// own; stages can be re-run individually.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace conceptkit::pipeline {

struct RunConfig {
  std::filesystem::path config_dir;  // relative paths resolve against this
  std::filesystem::path patch_manifest;
  std::filesystem::path full_manifest;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;

  // decompose
  int k_patch = 128;
  int k_full = 32;
  double lambda = 0.0;
  double lambda_full = 0.0;
  int max_iter = 200;
  double tol = 1e-5;
  int inner_steps = 10;
  int restarts = 1;
  double train_fraction = 0.8;

  // threshold
  double p = 0.90;
  double tau_patch = 0.95;  // bridge percentiles
  double tau_full = 0.80;

  // probe
  double l2 = 1e-3;
  double step = 0.1;
  int max_epochs = 2000;
  std::string target = "model";  // or "ground_truth"
  std::size_t top_per_style = 4;

  // intervene
  std::vector<double> alphas;
  std::size_t top_m = 3;
  int n_random = 10;
  std::size_t max_samples = 200;
  std::optional<nlohmann::json> tail;  // {"kind": "affine"|"remote", ...}

  // map
  double perplexity = 15.0;
  int tsne_iterations = 1000;
  std::string tag_basis = "model_prediction";

  // report / study
  std::size_t card_size = 24;
  std::size_t study_per_style = 10;
  std::size_t study_correct = 7;
  std::size_t study_incorrect = 3;

  std::uint64_t require_seed() const;
  void validate() const;  // referenced files exist, seed present
};

RunConfig load_config(const std::filesystem::path& path);
RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

void cmd_decompose(const RunConfig& config);
void cmd_probe(const RunConfig& config);
void cmd_intervene(const RunConfig& config);
void cmd_bridge(const RunConfig& config);
void cmd_map(const RunConfig& config);
void cmd_report(const RunConfig& config);
void cmd_study(const RunConfig& config);
// Validation summary as JSON; throws on the first invalid input.
nlohmann::json cmd_validate(const RunConfig& config);
void run_all(const RunConfig& config);

// Writes a planted dataset and a matching config.json under `dir`.
void cmd_synth(const std::filesystem::path& dir, std::uint64_t seed);

// Process exit code for an error kind.
int exit_code_for(const std::exception& e);

}  // namespace conceptkit::pipeline
