#include "conceptkit/seminmf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "conceptkit/error.hpp"
#include "conceptkit/kernels.hpp"
#include "conceptkit/parallel.hpp"

namespace conceptkit::seminmf {
namespace {

constexpr Eigen::Index kColumnBlock = 256;

void require_nonnegative(const Matrix& v, const char* what) {
  if (v.size() > 0 && v.minCoeff() < 0.0)
    throw Error(ErrorKind::invalid_argument, std::string(what) + " must be nonnegative");
}

void project_columns_to_unit_ball(Matrix& u) {
  for (Eigen::Index k = 0; k < u.cols(); ++k) {
    const double norm = u.col(k).norm();
    if (norm > 1.0) u.col(k) /= norm;
  }
}

// Runs `body(first, count)` over fixed-size column blocks of an n-column matrix.
template <typename Body>
void for_column_blocks(Eigen::Index n, unsigned threads, Body&& body) {
  const auto blocks = static_cast<std::size_t>((n + kColumnBlock - 1) / kColumnBlock);
  parallel_for(blocks, threads, [&](std::size_t b) {
    const Eigen::Index first = static_cast<Eigen::Index>(b) * kColumnBlock;
    body(first, std::min(kColumnBlock, n - first));
  });
}

}  // namespace

void FitConfig::validate() const {
  if (k <= 0) throw Error(ErrorKind::invalid_argument, "K must be positive");
  if (lambda < 0.0) throw Error(ErrorKind::invalid_argument, "lambda must be >= 0");
  if (max_iter < 1) throw Error(ErrorKind::invalid_argument, "max_iter must be >= 1");
  if (!(tol > 0.0)) throw Error(ErrorKind::invalid_argument, "tol must be > 0");
  if (window < 1) throw Error(ErrorKind::invalid_argument, "window must be >= 1");
  if (inner_steps < 1) throw Error(ErrorKind::invalid_argument, "inner_steps must be >= 1");
  if (restarts < 1) throw Error(ErrorKind::invalid_argument, "restarts must be >= 1");
}

double objective(const Matrix& z, const Matrix& u, const Matrix& v, double lambda) {
  if (u.rows() != z.rows() || u.cols() != v.rows() || v.cols() != z.cols())
    throw Error(ErrorKind::shape_mismatch,
                "objective: Z is " + std::to_string(z.rows()) + "x" + std::to_string(z.cols()) +
                    ", U is " + std::to_string(u.rows()) + "x" + std::to_string(u.cols()) +
                    ", V is " + std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
  require_nonnegative(v, "V");
  return (z - u * v).squaredNorm() + lambda * v.sum();
}

std::pair<Matrix, Matrix> init_factors(const Matrix& z, const FitConfig& config) {
  if (config.k <= 0) throw Error(ErrorKind::invalid_argument, "K must be positive");
  if (config.k > std::min(z.rows(), z.cols()))
    warn("K=" + std::to_string(config.k) + " exceeds min(d, n)=" +
         std::to_string(std::min(z.rows(), z.cols())));
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix u(z.rows(), config.k);
  for (Eigen::Index k = 0; k < u.cols(); ++k) {
    for (Eigen::Index r = 0; r < u.rows(); ++r) u(r, k) = normal(rng);
    u.col(k).normalize();
  }
  Matrix v = (u.transpose() * z).cwiseMax(0.0);
  return {std::move(u), std::move(v)};
}

Matrix update_dictionary(const Matrix& z, const Matrix& v, double ridge) {
  if (v.cols() != z.cols())
    throw Error(ErrorKind::shape_mismatch, "update_dictionary: V and Z column counts differ");
  require_nonnegative(v, "V");
  Matrix gram = v * v.transpose();
  gram.diagonal().array() += ridge;
  // U G = Z V^T with symmetric G  <=>  G U^T = V Z^T
  Matrix u = gram.ldlt().solve(v * z.transpose()).transpose();
  project_columns_to_unit_ball(u);
  return u;
}

void refine_dictionary_columns(const Matrix& z, Matrix& u, const Matrix& v) {
  const Matrix zvt = z * v.transpose();   // d x K
  const Matrix gram = v * v.transpose();  // K x K
  for (Eigen::Index k = 0; k < u.cols(); ++k) {
    const double vv = gram(k, k);
    if (vv <= 0.0) continue;
    // residual-with-k-removed times v_k = zvt_k - U gram_k + u_k vv
    Vector col = (zvt.col(k) - u * gram.col(k)) / vv + u.col(k);
    const double norm = col.norm();
    if (norm > 1.0) col /= norm;
    u.col(k) = col;
  }
}

double lipschitz_bound(const Matrix& gram) {
  const Eigen::Index k = gram.rows();
  if (k == 0) return 0.0;
  // Gershgorin: lambda_max <= max absolute row sum. Used when iteration stalls.
  const double gershgorin = gram.cwiseAbs().rowwise().sum().maxCoeff();
  if (gershgorin <= 0.0) return 0.0;
  Vector x = Vector::Ones(k) / std::sqrt(static_cast<double>(k));
  double estimate = 0.0;
  bool settled = false;
  for (int it = 0; it < 1000; ++it) {
    Vector y = gram * x;
    const double norm = y.norm();
    if (norm <= 0.0) break;
    const double next = x.dot(y);
    x = y / norm;
    if (std::abs(next - estimate) <= 1e-10 * std::abs(next)) {
      estimate = next;
      settled = true;
      break;
    }
    estimate = next;
  }
  if (!settled || estimate <= 0.0) return gershgorin;
  // Rayleigh quotients approach lambda_max from below.
  return std::min(gershgorin, estimate * 1.01);
}

Matrix update_activations(const Matrix& z, const Matrix& u, const Matrix& v_init,
                          double lambda, int inner_steps, unsigned threads) {
  if (u.rows() != z.rows() || u.cols() != v_init.rows() || v_init.cols() != z.cols())
    throw Error(ErrorKind::shape_mismatch, "update_activations: incompatible shapes");
  require_nonnegative(v_init, "V_init");
  const Matrix gram = u.transpose() * u;
  const double lip = 2.0 * lipschitz_bound(gram);
  if (!(lip > 0.0)) return v_init;
  const double step = 1.0 / lip;
  const double shrink = lambda * step;
  const Matrix utz = u.transpose() * z;

  Matrix v = v_init;
  const auto k = static_cast<std::size_t>(v.rows());
  for_column_blocks(z.cols(), threads, [&](Eigen::Index first, Eigen::Index count) {
    auto block = v.middleCols(first, count);
    const auto target = utz.middleCols(first, count);
    Matrix grad(v.rows(), count);
    for (int s = 0; s < inner_steps; ++s) {
      grad.noalias() = gram * block;
      grad -= target;
      grad *= 2.0;
      for (Eigen::Index c = 0; c < count; ++c)
        kernels::nonneg_prox_step({block.col(c).data(), k}, {grad.col(c).data(), k}, step,
                                  shrink);
    }
  });
  return v;
}

namespace {

ConceptModel fit_once(const Matrix& z, const FitConfig& config) {
  auto [u, v] = init_factors(z, config);

  ConceptModel model;
  model.lambda = config.lambda;
  model.seed = config.seed;
  model.init_seed = config.seed;
  model.trace.push_back(objective(z, u, v, config.lambda));

  for (int it = 1; it <= config.max_iter; ++it) {
    v = update_activations(z, u, v, config.lambda, config.inner_steps, config.threads);
    const double after_v = objective(z, u, v, config.lambda);

    Matrix candidate = update_dictionary(z, v);
    // The ridge solve followed by per-column projection is not the exact
    // constrained minimiser; keep it only when it does not increase the loss.
    const double cand_obj = objective(z, candidate, v, config.lambda);
    double obj = cand_obj;
    if (cand_obj <= after_v) {
      u = std::move(candidate);
    } else {
      refine_dictionary_columns(z, u, v);
      obj = objective(z, u, v, config.lambda);
    }

    if (!std::isfinite(obj))
      throw Error(ErrorKind::numeric,
                  "fit diverged: non-finite objective at iteration " + std::to_string(it));
    model.trace.push_back(obj);

    const auto n = model.trace.size();
    if (n > static_cast<std::size_t>(config.window)) {
      const double before = model.trace[n - 1 - static_cast<std::size_t>(config.window)];
      const double denom = std::max(std::abs(before), 1e-300);
      if (std::abs(before - obj) / denom < config.tol) {
        model.converged = true;
        break;
      }
    }
  }
  model.u = std::move(u);
  model.v = std::move(v);
  return model;
}

}  // namespace

ConceptModel fit(const Matrix& z, const FitConfig& config) {
  config.validate();
  if (!z.allFinite()) throw Error(ErrorKind::invalid_argument, "fit: Z has non-finite entries");
  ConceptModel best;
  for (int r = 0; r < config.restarts; ++r) {
    FitConfig run = config;
    run.seed = config.seed + static_cast<std::uint64_t>(r);
    ConceptModel model = fit_once(z, run);
    if (r == 0 || model.trace.back() < best.trace.back()) best = std::move(model);
  }
  best.seed = config.seed;
  return best;
}

Matrix transform(const Matrix& u, const Matrix& z_new, double lambda, int inner_steps,
                 unsigned threads) {
  if (z_new.rows() != u.rows())
    throw Error(ErrorKind::shape_mismatch,
                "transform: samples have dimension " + std::to_string(z_new.rows()) +
                    " but the dictionary expects " + std::to_string(u.rows()));
  const Matrix v0 = (u.transpose() * z_new).cwiseMax(0.0);
  return update_activations(z_new, u, v0, lambda, inner_steps, threads);
}

void save_model(const ConceptModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_matrix(model.u, dir / "U.npy");
  save_matrix(model.v, dir / "V.npy");
  nlohmann::json side;
  side["K"] = model.k();
  side["lambda"] = model.lambda;
  side["seed"] = model.seed;
  side["init_seed"] = model.init_seed;
  side["trace"] = model.trace;
  side["converged"] = model.converged;
  side["layer"] = model.layer;
  side["model_name"] = model.model_name;
  std::ofstream out(dir / "model.json");
  if (!out) throw Error(ErrorKind::io, "cannot write " + (dir / "model.json").string());
  out << side.dump(1) << '\n';
}

ConceptModel load_model(const std::filesystem::path& dir) {
  for (const char* f : {"U.npy", "V.npy", "model.json"})
    if (!std::filesystem::exists(dir / f))
      throw Error(ErrorKind::missing_artifact, "missing " + (dir / f).string());
  ConceptModel model;
  model.u = load_matrix(dir / "U.npy");
  model.v = load_matrix(dir / "V.npy");
  std::ifstream in(dir / "model.json");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(in);
    model.lambda = side.at("lambda").get<double>();
    model.seed = side.at("seed").get<std::uint64_t>();
    model.init_seed = side.value("init_seed", model.seed);
    model.trace = side.at("trace").get<std::vector<double>>();
    model.converged = side.value("converged", false);
    model.layer = side.value("layer", 0);
    model.model_name = side.value("model_name", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, "bad model sidecar: " + std::string(e.what()));
  }
  if (model.u.cols() != model.v.rows())
    throw Error(ErrorKind::format, "U and V disagree on K in " + dir.string());
  return model;
}

}  // namespace conceptkit::seminmf
