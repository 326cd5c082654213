#pragma once

// Sparse Semi-NMF:  min ||Z - U V||_F^2 + lambda * ||V||_1
//                   s.t. V >= 0, ||u_k||_2 <= 1.
// U may have mixed signs; only the activations V are constrained.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "conceptkit/npy.hpp"

namespace conceptkit::seminmf {

inline constexpr double kRidge = 1e-8;

struct FitConfig {
  int k = 128;
  double lambda = 0.0;
  int max_iter = 200;
  double tol = 1e-5;       // relative objective change over `window` iterations
  int window = 5;
  int inner_steps = 10;    // proximal steps per activation update
  std::uint64_t seed = 0;
  int restarts = 1;  // independent inits with seeds seed, seed+1, ...; lowest final objective wins
  unsigned threads = 1;

  void validate() const;
};

struct ConceptModel {
  Matrix u;  // d x K dictionary, column k is concept k
  Matrix v;  // K x n activations
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t init_seed = 0;  // seed of the restart that was kept
  std::vector<double> trace;  // objective after init and after every iteration
  bool converged = false;

  // Provenance carried into the JSON sidecar.
  int layer = 0;
  std::string model_name;

  int k() const { return static_cast<int>(u.cols()); }
};

double objective(const Matrix& z, const Matrix& u, const Matrix& v, double lambda);

// Seeded Gaussian U with unit columns, V = max(0, U^T Z).
std::pair<Matrix, Matrix> init_factors(const Matrix& z, const FitConfig& config);

// Ridge least squares U = Z V^T (V V^T + eps I)^-1, then columns with norm > 1
// are rescaled onto the unit sphere.
Matrix update_dictionary(const Matrix& z, const Matrix& v, double ridge = kRidge);

// Exact block-coordinate pass over the columns of U: column k is replaced by
// the unit-ball projection of its least-squares solution with the other
// columns fixed. Never increases ||Z - UV||_F^2.
void refine_dictionary_columns(const Matrix& z, Matrix& u, const Matrix& v);

// Largest eigenvalue of a symmetric PSD matrix via power iteration, padded
// upward so that it is safe as a Lipschitz bound.
double lipschitz_bound(const Matrix& gram);

// `inner_steps` proximal-gradient steps on V with U fixed, step 1/Lip,
// Lip = 2 * lambda_max(U^T U). Returns v_init unchanged if U is all zero.
Matrix update_activations(const Matrix& z, const Matrix& u, const Matrix& v_init,
                          double lambda, int inner_steps, unsigned threads = 1);

ConceptModel fit(const Matrix& z, const FitConfig& config);

// Activations of new samples under a fixed dictionary, starting from
// max(0, U^T Z_new).
Matrix transform(const Matrix& u, const Matrix& z_new, double lambda, int inner_steps,
                 unsigned threads = 1);

// U.npy, V.npy and model.json in `dir`.
void save_model(const ConceptModel& model, const std::filesystem::path& dir);
ConceptModel load_model(const std::filesystem::path& dir);

}  // namespace conceptkit::seminmf
