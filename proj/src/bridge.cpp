#include "conceptkit/bridge.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "conceptkit/error.hpp"

namespace conceptkit::bridge {

BinaryMatrix or_aggregate(const BinaryMatrix& patch_b, std::span<const long long> image_of,
                          std::size_t n_images) {
  if (static_cast<Eigen::Index>(image_of.size()) != patch_b.cols())
    throw Error(ErrorKind::shape_mismatch, "or_aggregate: one image index per patch required");
  std::vector<bool> seen(n_images, false);
  BinaryMatrix out = BinaryMatrix::Zero(patch_b.rows(), static_cast<Eigen::Index>(n_images));
  for (Eigen::Index c = 0; c < patch_b.cols(); ++c) {
    const long long img = image_of[static_cast<std::size_t>(c)];
    if (img < 0 || static_cast<std::size_t>(img) >= n_images)
      throw Error(ErrorKind::invalid_argument,
                  "orphan patch: column " + std::to_string(c) + " maps to no image");
    seen[static_cast<std::size_t>(img)] = true;
    auto dst = out.col(static_cast<Eigen::Index>(img));
    dst = dst.cwiseMax(patch_b.col(c));
  }
  for (std::size_t i = 0; i < n_images; ++i)
    if (!seen[i]) throw Error(ErrorKind::invalid_argument, "image " + std::to_string(i) + " has no patches");
  return out;
}

BinaryMatrix or_aggregate(const BinaryMatrix& patch_b, std::span<const std::size_t> image_of,
                          std::size_t n_images) {
  std::vector<long long> idx(image_of.begin(), image_of.end());
  return or_aggregate(patch_b, std::span<const long long>(idx), n_images);
}

ConceptBridge build_bridge(const BinaryMatrix& full_b, const BinaryMatrix& image_patch_b) {
  if (full_b.cols() != image_patch_b.cols())
    throw Error(ErrorKind::shape_mismatch,
                "build_bridge: " + std::to_string(full_b.cols()) + " full-image columns vs " +
                    std::to_string(image_patch_b.cols()) + " aggregated patch columns");
  const Eigen::MatrixX<std::int64_t> f = full_b.cast<std::int64_t>();
  const Eigen::MatrixX<std::int64_t> p = image_patch_b.cast<std::int64_t>();
  ConceptBridge b;
  b.joint = p * f.transpose();
  b.full_counts.resize(static_cast<std::size_t>(full_b.rows()));
  b.p = Matrix::Zero(image_patch_b.rows(), full_b.rows());
  for (Eigen::Index j = 0; j < full_b.rows(); ++j) {
    const std::int64_t cj = f.row(j).sum();
    b.full_counts[static_cast<std::size_t>(j)] = cj;
    if (cj == 0) continue;
    b.p.col(j) = b.joint.col(j).cast<double>() / static_cast<double>(cj);
  }
  return b;
}

ImageConcepts image_concepts(const Vector& full_activation, double tau_full,
                             const ConceptBridge& bridge, std::size_t top_n) {
  if (full_activation.size() != bridge.p.cols())
    throw Error(ErrorKind::shape_mismatch, "full activation size does not match the bridge");
  ImageConcepts result;
  for (Eigen::Index j = 0; j < full_activation.size(); ++j)
    if (full_activation(j) >= tau_full && bridge.defined(j))
      result.active_full.push_back(static_cast<std::size_t>(j));
  if (result.active_full.empty()) {
    result.no_concepts = true;
    return result;
  }
  std::vector<ScoredConcept> all;
  for (Eigen::Index i = 0; i < bridge.p.rows(); ++i) {
    double best = 0.0;
    for (std::size_t j : result.active_full)
      best = std::max(best, bridge.p(i, static_cast<Eigen::Index>(j)));
    all.push_back({static_cast<std::size_t>(i), best});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const ScoredConcept& a, const ScoredConcept& b) { return a.score > b.score; });
  all.resize(std::min(top_n, all.size()));
  result.ranked = std::move(all);
  return result;
}

void save_bridge(const ConceptBridge& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_matrix(b.p, dir / "P.npy");
  save_counts(b.joint, dir / "counts.npy");
  nlohmann::json side;
  side["K_patch"] = b.p.rows();
  side["K_full"] = b.p.cols();
  side["tau_patch_percentile"] = b.tau_patch_percentile;
  side["tau_full_percentile"] = b.tau_full_percentile;
  side["tau_patch"] = b.tau_patch;
  side["tau_full"] = b.tau_full;
  side["full_counts"] = b.full_counts;
  std::vector<std::size_t> undefined;
  for (std::size_t j = 0; j < b.full_counts.size(); ++j)
    if (b.full_counts[j] == 0) undefined.push_back(j);
  side["undefined_full_concepts"] = undefined;
  std::ofstream out(dir / "bridge.json");
  if (!out) throw Error(ErrorKind::io, "cannot write " + (dir / "bridge.json").string());
  out << side.dump(1) << '\n';
}

ConceptBridge load_bridge(const std::filesystem::path& dir) {
  for (const char* f : {"P.npy", "counts.npy", "bridge.json"})
    if (!std::filesystem::exists(dir / f))
      throw Error(ErrorKind::missing_artifact, "missing " + (dir / f).string());
  ConceptBridge b;
  b.p = load_matrix(dir / "P.npy");
  b.joint = load_counts(dir / "counts.npy");
  std::ifstream in(dir / "bridge.json");
  try {
    const auto side = nlohmann::json::parse(in);
    b.tau_patch_percentile = side.at("tau_patch_percentile").get<double>();
    b.tau_full_percentile = side.at("tau_full_percentile").get<double>();
    b.tau_patch = side.at("tau_patch").get<double>();
    b.tau_full = side.at("tau_full").get<double>();
    b.full_counts = side.at("full_counts").get<std::vector<std::int64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, "bad bridge sidecar: " + std::string(e.what()));
  }
  if (static_cast<Eigen::Index>(b.full_counts.size()) != b.p.cols() ||
      b.joint.rows() != b.p.rows() || b.joint.cols() != b.p.cols())
    throw Error(ErrorKind::format, "bridge arrays disagree in " + dir.string());
  return b;
}

}  // namespace conceptkit::bridge
