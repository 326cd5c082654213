#include "conceptkit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/QR>

#include "conceptkit/error.hpp"
#include "conceptkit/manifest.hpp"

namespace conceptkit::synthetic {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kStyleNames = {"Baroque", "Renaissance", "Realism", "Rococo",
                                              "Romanticism"};

Matrix round_to_float(const Matrix& m) {
  return m.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

template <typename Rng>
std::size_t sample_style(const Matrix& w, const Vector& b, const std::vector<int>& tokens,
                         const Eigen::Ref<const Vector>& h, double sharpness, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    double score = w.row(tokens[s]).dot(h) + b(tokens[s]);
    if (std::isfinite(sharpness)) {
      const double uniform = std::max(unit(rng), 1e-300);
      score = sharpness * score - std::log(-std::log(uniform));
    }
    if (s == 0 || score > best_score) {
      best = s;
      best_score = score;
    }
  }
  return best;
}

}  // namespace

std::size_t owner_of(int k, const PlantedConfig& config) {
  const int per_style = (config.concepts - 1) / config.styles;
  const int owner = k / per_style;
  return owner < config.styles ? static_cast<std::size_t>(owner)
                               : static_cast<std::size_t>(config.styles);
}

PlantedData generate(const PlantedConfig& c) {
  if (c.styles != static_cast<int>(kStyleNames.size()))
    throw Error(ErrorKind::invalid_argument, "planted data uses exactly 5 styles");
  const int per_style = (c.concepts - 1) / c.styles;
  if (per_style < 1 || c.vocab < c.styles || c.dim < 2)
    throw Error(ErrorKind::invalid_argument, "planted config too small");
  if (c.dim < c.concepts)
    throw Error(ErrorKind::invalid_argument, "planted concepts must fit in the hidden dimension");
  if (static_cast<int>(c.rival_weights.size()) != c.styles - 1)
    throw Error(ErrorKind::invalid_argument, "need one rival weight per style offset");
  if (c.minor_max >= c.concepts || c.minor_min > c.minor_max)
    throw Error(ErrorKind::invalid_argument, "invalid minor concept range");

  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto below = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };

  PlantedData d;
  d.style_names = kStyleNames;
  d.u.resize(c.dim, c.concepts);
  {
    Matrix g(c.dim, c.concepts);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = gauss(rng);
    d.u = Eigen::HouseholderQR<Matrix>(g).householderQ() * Matrix::Identity(c.dim, c.concepts);
  }

  const int n = c.images * kPatchesPerImage;
  d.v = Matrix::Zero(c.concepts, n);
  d.image_style.resize(static_cast<std::size_t>(c.images));
  for (int img = 0; img < c.images; ++img) d.image_style[img] = static_cast<std::size_t>(img % c.styles);
  // Interleave styles without clustering them by index.
  for (int i = c.images - 1; i > 0; --i) std::swap(d.image_style[i], d.image_style[below(i + 1)]);

  std::vector<int> order(static_cast<std::size_t>(c.concepts));
  for (int img = 0; img < c.images; ++img) {
    const int style = static_cast<int>(d.image_style[img]);
    for (int p = 0; p < kPatchesPerImage; ++p) {
      const int col = img * kPatchesPerImage + p;
      int owner = style;
      if (unit(rng) >= c.on_style) owner = (style + 1 + below(c.styles - 1)) % c.styles;
      const int dominant = owner * per_style + below(per_style);
      d.v(dominant, col) = uniform(c.dominant_lo, c.dominant_hi);
      std::iota(order.begin(), order.end(), 0);
      for (int i = c.concepts - 1; i > 0; --i) std::swap(order[i], order[below(i + 1)]);
      const int minors = c.minor_min + below(c.minor_max - c.minor_min + 1);
      int placed = 0;
      for (int k : order) {
        if (placed == minors) break;
        if (k == dominant) continue;
        d.v(k, col) = uniform(c.minor_lo, c.minor_hi);
        ++placed;
      }
    }
  }

  d.z = d.u * d.v;
  for (Eigen::Index i = 0; i < d.z.size(); ++i) d.z.data()[i] += c.noise * gauss(rng);

  Matrix mean_v = Matrix::Zero(c.concepts, c.images);
  for (int img = 0; img < c.images; ++img)
    mean_v.col(img) = d.v.middleCols(img * kPatchesPerImage, kPatchesPerImage).rowwise().mean();
  d.z_full = d.u * mean_v;
  for (Eigen::Index i = 0; i < d.z_full.size(); ++i) d.z_full.data()[i] += c.noise * gauss(rng);

  // Style rows load +1 on the style's own concepts and a rival weight on every
  // other style's; remaining vocabulary rows are random.
  d.w_tail.resize(c.vocab, c.dim);
  for (Eigen::Index i = 0; i < d.w_tail.size(); ++i) d.w_tail.data()[i] = 0.1 * gauss(rng);
  d.b_tail = Vector::Zero(c.vocab);
  const int stride = c.vocab / c.styles;
  for (int s = 0; s < c.styles; ++s) {
    const int token = s * stride + stride / 2;
    d.token_ids.push_back(token);
    Vector row = Vector::Zero(c.dim);
    for (int k = 0; k + 1 < c.concepts; ++k) {
      const int offset = (static_cast<int>(owner_of(k, c)) - s + c.styles) % c.styles;
      row += (offset == 0 ? 1.0 : c.rival_weights[offset - 1]) * d.u.col(k);
    }
    d.w_tail.row(token) = row.transpose();
  }

  d.u = round_to_float(d.u);
  d.z = round_to_float(d.z);
  d.z_full = round_to_float(d.z_full);
  d.w_tail = round_to_float(d.w_tail);

  d.predicted.resize(static_cast<std::size_t>(n));
  std::mt19937_64 label_rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
  for (int i = 0; i < n; ++i)
    d.predicted[i] = sample_style(d.w_tail, d.b_tail, d.token_ids, d.z.col(i), c.label_sharpness, label_rng);
  d.predicted_full.resize(static_cast<std::size_t>(c.images));
  for (int i = 0; i < c.images; ++i)
    d.predicted_full[i] =
        sample_style(d.w_tail, d.b_tail, d.token_ids, d.z_full.col(i), c.label_sharpness, label_rng);
  return d;
}

void write_dataset(const PlantedData& data, const fs::path& dir, Dtype dtype) {
  const fs::path patch_dir = dir / "patch", full_dir = dir / "full", tail_dir = dir / "tail";
  fs::create_directories(patch_dir);
  fs::create_directories(full_dir);
  fs::create_directories(tail_dir);
  save_matrix(data.z, patch_dir / "Z.npy", dtype);
  save_matrix(data.z_full, full_dir / "Z.npy", dtype);
  save_matrix(data.w_tail, tail_dir / "W.npy", dtype);
  save_vector(data.b_tail, tail_dir / "b.npy");
  fs::create_directories(dir / "truth");
  save_matrix(data.u, dir / "truth" / "U.npy", dtype);

  auto image_name = [](std::size_t img) { return "img" + std::to_string(img); };

  Manifest patch;
  patch.model = "planted-affine";
  patch.layer = 0;
  patch.styles = data.style_names;
  patch.style_first_token_ids = data.token_ids;
  patch.granularity = Granularity::patch;
  patch.matrices.z = patch_dir / "Z.npy";
  patch.matrices.h = patch_dir / "Z.npy";
  patch.matrices.w_tail = tail_dir / "W.npy";
  patch.matrices.b_tail = tail_dir / "b.npy";
  for (std::size_t img = 0; img < data.image_style.size(); ++img)
    for (int p = 0; p < kPatchesPerImage; ++p) {
      SampleMeta m;
      m.image_id = image_name(img);
      m.sample_id = m.image_id + "_p" + std::to_string(p);
      m.granularity = Granularity::patch;
      m.patch_row = p / kGridSize;
      m.patch_col = p % kGridSize;
      m.true_style = data.image_style[img];
      m.predicted_style = data.predicted[img * kPatchesPerImage + static_cast<std::size_t>(p)];
      patch.samples.push_back(std::move(m));
    }
  save_manifest(patch, patch_dir / "manifest.json");

  Manifest full = patch;
  full.granularity = Granularity::full_image;
  full.matrices.z = full_dir / "Z.npy";
  full.matrices.h = full_dir / "Z.npy";
  full.samples.clear();
  for (std::size_t img = 0; img < data.image_style.size(); ++img) {
    SampleMeta m;
    m.image_id = image_name(img);
    m.sample_id = m.image_id;
    m.granularity = Granularity::full_image;
    m.true_style = data.image_style[img];
    m.predicted_style = data.predicted_full[img];
    full.samples.push_back(std::move(m));
  }
  save_manifest(full, full_dir / "manifest.json");
}

}  // namespace conceptkit::synthetic
