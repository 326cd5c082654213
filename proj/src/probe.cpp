#include "conceptkit/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "conceptkit/error.hpp"

namespace conceptkit::probe {
namespace {

// Column-wise softmax of S x n logits, in place.
void softmax_columns(Matrix& logits) {
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    auto col = logits.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
}

Matrix logits_of(const Matrix& w, const Vector& b, const Matrix& features) {
  Matrix logits = w * features;
  logits.colwise() += b;
  return logits;
}

void check_labels(std::span<const std::size_t> labels, std::size_t styles, Eigen::Index n) {
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw Error(ErrorKind::shape_mismatch, "label count does not match feature columns");
  for (auto l : labels)
    if (l >= styles) throw Error(ErrorKind::invalid_argument, "label outside the style list");
}

}  // namespace

const char* to_string(FeatureMode mode) { return mode == FeatureMode::raw ? "raw" : "binarized"; }

FeatureMode feature_mode_from_string(const std::string& s) {
  if (s == "raw") return FeatureMode::raw;
  if (s == "binarized") return FeatureMode::binarized;
  throw Error(ErrorKind::format, "unknown feature mode \"" + s + "\"");
}

double training_loss(const Matrix& w, const Vector& b, const Matrix& features,
                     std::span<const std::size_t> labels, double l2) {
  Matrix logits = logits_of(w, b, features);
  double ce = 0.0;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const auto col = logits.col(c);
    const double mx = col.maxCoeff();
    const double lse = mx + std::log((col.array() - mx).exp().sum());
    ce += lse - col(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(c)]));
  }
  return ce / static_cast<double>(logits.cols()) + l2 * w.squaredNorm();
}

LinearProbe fit_probe(const Matrix& features, std::span<const std::size_t> labels,
                      const std::vector<std::string>& styles, const ProbeConfig& config,
                      FeatureMode mode) {
  const auto s_count = styles.size();
  const Eigen::Index n = features.cols();
  check_labels(labels, s_count, n);
  if (static_cast<std::size_t>(n) < s_count)
    throw Error(ErrorKind::invalid_argument, "probe needs at least one sample per style");
  std::vector<std::size_t> per_style(s_count, 0);
  for (auto l : labels) ++per_style[l];
  std::string missing;
  for (std::size_t s = 0; s < s_count; ++s)
    if (per_style[s] == 0) missing += (missing.empty() ? "" : ", ") + styles[s];
  if (!missing.empty())
    throw Error(ErrorKind::invalid_argument, "no training examples for styles: " + missing);

  const auto S = static_cast<Eigen::Index>(s_count);
  Matrix onehot = Matrix::Zero(S, n);
  for (Eigen::Index c = 0; c < n; ++c)
    onehot(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(c)]), c) = 1.0;

  LinearProbe probe;
  probe.styles = styles;
  probe.mode = mode;
  probe.l2 = config.l2;
  probe.w = Matrix::Zero(S, features.rows());
  probe.b = Vector::Zero(S);

  double step = config.step;
  double loss = training_loss(probe.w, probe.b, features, labels, config.l2);
  probe.loss_trace.push_back(loss);
  const double inv_n = 1.0 / static_cast<double>(n);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Matrix resid = logits_of(probe.w, probe.b, features);
    softmax_columns(resid);
    resid -= onehot;
    const Matrix grad_w = (resid * features.transpose()) * inv_n + 2.0 * config.l2 * probe.w;
    const Vector grad_b = resid.rowwise().sum() * inv_n;

    Matrix next_w;
    Vector next_b;
    double next_loss = loss;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving) {
      next_w = probe.w - step * grad_w;
      next_b = probe.b - step * grad_b;
      next_loss = training_loss(next_w, next_b, features, labels, config.l2);
      if (next_loss <= loss) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    probe.w = std::move(next_w);
    probe.b = std::move(next_b);
    probe.epochs = epoch;
    probe.loss_trace.push_back(next_loss);
    const double change = loss - next_loss;
    loss = next_loss;
    if (change < config.plateau) break;
  }
  return probe;
}

std::vector<std::size_t> predict(const LinearProbe& probe, const Matrix& features) {
  if (features.rows() != probe.w.cols())
    throw Error(ErrorKind::shape_mismatch,
                "probe expects " + std::to_string(probe.w.cols()) + " features, got " +
                    std::to_string(features.rows()));
  const Matrix logits = logits_of(probe.w, probe.b, features);
  std::vector<std::size_t> out(static_cast<std::size_t>(features.cols()));
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index s = 1; s < logits.rows(); ++s)
      if (logits(s, c) > logits(best, c)) best = s;
    out[static_cast<std::size_t>(c)] = static_cast<std::size_t>(best);
  }
  return out;
}

double accuracy(const LinearProbe& probe, const Matrix& features,
                std::span<const std::size_t> labels) {
  if (features.cols() == 0) throw Error(ErrorKind::invalid_argument, "empty evaluation set");
  check_labels(labels, probe.styles.size(), features.cols());
  const auto pred = predict(probe, features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::vector<std::vector<std::size_t>> top_concepts_per_style(const LinearProbe& probe,
                                                             std::size_t m) {
  const auto k = static_cast<std::size_t>(probe.w.cols());
  if (m > k) throw Error(ErrorKind::invalid_argument, "m exceeds the concept count");
  std::vector<std::vector<std::size_t>> out;
  for (Eigen::Index s = 0; s < probe.w.rows(); ++s) {
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto row = probe.w.row(s);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return row(static_cast<Eigen::Index>(a)) > row(static_cast<Eigen::Index>(b));
    });
    idx.resize(m);
    out.push_back(std::move(idx));
  }
  return out;
}

ImageSplit split_by_image(const std::vector<std::string>& image_ids, double train_fraction,
                          std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw Error(ErrorKind::invalid_argument, "train fraction must lie in (0, 1)");
  std::vector<std::string> order = image_ids;
  std::mt19937_64 rng(seed);
  // Fisher-Yates with explicit draws; std::shuffle's use of the engine is
  // implementation-defined.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(order.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, order.size() > 1 ? order.size() - 1 : 1);
  ImageSplit split;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

void save_probe(const LinearProbe& probe, const std::filesystem::path& dir,
                const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  save_matrix(probe.w, dir / "W.npy");
  save_vector(probe.b, dir / "b.npy");
  nlohmann::json side = extra;
  side["styles"] = probe.styles;
  side["feature_mode"] = to_string(probe.mode);
  side["l2"] = probe.l2;
  side["tau"] = probe.tau;
  side["epochs"] = probe.epochs;
  side["final_loss"] = probe.loss_trace.empty() ? 0.0 : probe.loss_trace.back();
  std::ofstream out(dir / "probe.json");
  if (!out) throw Error(ErrorKind::io, "cannot write " + (dir / "probe.json").string());
  out << side.dump(1) << '\n';
}

LinearProbe load_probe(const std::filesystem::path& dir) {
  for (const char* f : {"W.npy", "b.npy", "probe.json"})
    if (!std::filesystem::exists(dir / f))
      throw Error(ErrorKind::missing_artifact, "missing " + (dir / f).string());
  LinearProbe probe;
  probe.w = load_matrix(dir / "W.npy");
  probe.b = load_vector(dir / "b.npy");
  std::ifstream in(dir / "probe.json");
  try {
    const auto side = nlohmann::json::parse(in);
    probe.styles = side.at("styles").get<std::vector<std::string>>();
    probe.mode = feature_mode_from_string(side.at("feature_mode").get<std::string>());
    probe.l2 = side.at("l2").get<double>();
    probe.tau = side.value("tau", 0.0);
    probe.epochs = side.value("epochs", 0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, "bad probe sidecar: " + std::string(e.what()));
  }
  if (probe.w.rows() != probe.b.size() ||
      static_cast<std::size_t>(probe.w.rows()) != probe.styles.size())
    throw Error(ErrorKind::format, "probe W, b and styles disagree in " + dir.string());
  return probe;
}

}  // namespace conceptkit::probe
