#include "conceptkit/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "conceptkit/error.hpp"
#include "conceptkit/sparsity.hpp"
#include "conceptkit/svg.hpp"

namespace conceptkit::report {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

// Affine map from data range to pixel range.
struct Axis {
  double lo, hi, px_lo, px_hi;
  double operator()(double v) const {
    if (hi == lo) return 0.5 * (px_lo + px_hi);
    return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
  }
};

std::pair<double, double> padded_range(double lo, double hi) {
  if (lo == hi) return {lo - 1.0, hi + 1.0};
  const double pad = 0.08 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::vector<ConceptCard> concept_cards(const Matrix& activations, const BinaryMatrix& active,
                                       const Manifest& dataset, std::size_t m) {
  const auto n = static_cast<std::size_t>(activations.cols());
  if (dataset.samples.size() != n)
    throw Error(ErrorKind::shape_mismatch, "activations and dataset disagree on sample count");
  if (active.rows() != activations.rows() || active.cols() != activations.cols())
    throw Error(ErrorKind::shape_mismatch, "binarised activations have the wrong shape");
  if (m > n) throw Error(ErrorKind::invalid_argument, "card size exceeds the sample count");
  if (m == 0) throw Error(ErrorKind::invalid_argument, "card size must be positive");
  std::vector<ConceptCard> cards;
  for (Eigen::Index k = 0; k < activations.rows(); ++k) {
    ConceptCard card;
    card.concept_index = static_cast<std::size_t>(k);
    for (std::size_t s : sparsity::top_activating(activations, k, m))
      card.top.push_back({s, activations(k, static_cast<Eigen::Index>(s))});
    card.style_shares.assign(dataset.styles.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (active(k, static_cast<Eigen::Index>(i))) {
        card.style_shares[dataset.samples[i].predicted_style] += 1.0;
        total += 1.0;
      }
    if (total > 0.0)
      for (double& s : card.style_shares) s /= total;
    cards.push_back(std::move(card));
  }
  return cards;
}

std::vector<fs::path> export_concept_cards(const Matrix& activations, const BinaryMatrix& active,
                                           const Manifest& dataset, std::size_t m,
                                           const fs::path& out_dir) {
  const auto cards = concept_cards(activations, active, dataset, m);
  const fs::path dir = out_dir / "cards";
  fs::create_directories(dir);
  std::vector<fs::path> written;
  constexpr int kCols = 6;
  constexpr double kCell = 120.0;
  for (const auto& card : cards) {
    const std::string stem = "concept_" + std::to_string(card.concept_index);
    json j;
    j["concept"] = card.concept_index;
    json top = json::array();
    for (const auto& e : card.top) {
      const auto& s = dataset.samples[e.sample];
      json t{{"sample_id", s.sample_id}, {"image_id", s.image_id}, {"activation", e.activation}};
      if (s.patch_row) t["patch_row"] = *s.patch_row;
      if (s.patch_col) t["patch_col"] = *s.patch_col;
      top.push_back(std::move(t));
    }
    j["top_samples"] = std::move(top);
    json shares = json::object();
    for (std::size_t s = 0; s < dataset.styles.size(); ++s)
      shares[dataset.styles[s]] = card.style_shares[s];
    j["style_shares"] = std::move(shares);
    j["label"] = card.label ? json(*card.label) : json(nullptr);
    write_json(dir / (stem + ".json"), j);

    const int rows = static_cast<int>((card.top.size() + kCols - 1) / kCols);
    svg::Document doc(kCols * kCell + 20, rows * kCell + 50);
    doc.text(10, 24, "Concept " + std::to_string(card.concept_index), 16);
    for (std::size_t i = 0; i < card.top.size(); ++i) {
      const auto& s = dataset.samples[card.top[i].sample];
      const double x = 10 + static_cast<double>(i % kCols) * kCell;
      const double y = 40 + static_cast<double>(i / kCols) * kCell;
      doc.rect(x + 2, y + 2, kCell - 4, kCell - 4, "#f2f2f2", "#999999", "patch");
      doc.text(x + kCell / 2, y + kCell / 2 - 8, s.image_id, 10, "middle");
      std::string where = s.sample_id;
      if (s.patch_row && s.patch_col)
        where = "(" + std::to_string(*s.patch_row) + "," + std::to_string(*s.patch_col) + ")";
      doc.text(x + kCell / 2, y + kCell / 2 + 8, where, 10, "middle");
      doc.text(x + kCell / 2, y + kCell / 2 + 24, fixed(card.top[i].activation, 3), 9, "middle");
    }
    doc.save(dir / (stem + ".svg"));
    written.push_back(dir / (stem + ".json"));
    written.push_back(dir / (stem + ".svg"));
  }
  return written;
}

std::vector<CausalCurve> causal_curves(std::span<const causal::InterventionRecord> records,
                                       std::size_t concept_index, std::span<const double> alphas) {
  std::map<std::size_t, std::map<double, std::vector<double>>> by_style;
  for (const auto& r : records)
    if (r.concept_index == concept_index && !r.noop)
      by_style[r.style][r.alpha].push_back(r.effect.calibrated_logit);
  std::vector<CausalCurve> curves;
  for (const auto& [style, by_alpha] : by_style) {
    CausalCurve curve;
    curve.style = style;
    for (double a : alphas) {
      const auto it = by_alpha.find(a);
      if (it == by_alpha.end())
        throw Error(ErrorKind::invalid_argument,
                    "records for concept " + std::to_string(concept_index) +
                        " do not cover alpha " + fixed(a, 3));
      curve.points.push_back(
          {a, stats::mean(it->second), stats::standard_error(it->second), it->second.size()});
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

std::string plot_causal_curves(std::span<const causal::InterventionRecord> records,
                               std::size_t concept_index, std::span<const double> alphas,
                               const std::vector<std::string>& styles) {
  const auto curves = causal_curves(records, concept_index, alphas);
  if (curves.empty())
    throw Error(ErrorKind::invalid_argument,
                "no records for concept " + std::to_string(concept_index));
  double ylo = 0.0, yhi = 0.0;
  for (const auto& c : curves)
    for (const auto& p : c.points) {
      ylo = std::min(ylo, p.mean - p.standard_error);
      yhi = std::max(yhi, p.mean + p.standard_error);
    }
  const auto [alo, ahi] = std::minmax_element(alphas.begin(), alphas.end());
  const auto [plo, phi] = padded_range(ylo, yhi);
  const Axis x{*alo - 0.1, *ahi + 0.1, 70, 470};
  const Axis y{plo, phi, 330, 40};

  svg::Document doc(640, 380);
  doc.text(270, 24, "Concept " + std::to_string(concept_index) + ": calibrated effect on style logits",
           14, "middle");
  doc.line(70, 330, 470, 330, "#000000", 1.0, "axis");
  doc.line(70, 40, 70, 330, "#000000", 1.0, "axis");
  doc.line(70, y(0.0), 470, y(0.0), "#bbbbbb", 0.8, "zero");
  for (double a : alphas) {
    doc.line(x(a), 330, x(a), 335, "#000000", 1.0, "xtick");
    doc.text(x(a), 350, fixed(a, 2), 10, "middle");
  }
  for (int t = 0; t <= 4; ++t) {
    const double v = plo + (phi - plo) * t / 4.0;
    doc.line(65, y(v), 70, y(v), "#000000", 1.0, "ytick");
    doc.text(62, y(v) + 3, fixed(v, 2), 10, "end");
  }
  doc.text(270, 372, "alpha (negative: boost, positive: suppress)", 12, "middle", "xlabel");
  doc.text(16, 185, "calibrated delta logit", 12, "middle", "ylabel");

  for (std::size_t c = 0; c < curves.size(); ++c) {
    const auto& curve = curves[c];
    const auto& colour = svg::palette(curve.style);
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : curve.points) {
      pts.emplace_back(x(p.alpha), y(p.mean));
      doc.line(x(p.alpha), y(p.mean - p.standard_error), x(p.alpha), y(p.mean + p.standard_error),
               colour, 1.0, "errorbar");
    }
    doc.polyline(pts, colour, 1.5, "curve");
    for (const auto& [px, py] : pts) doc.circle(px, py, 2.5, colour);
    const double ly = 50 + 18.0 * static_cast<double>(c);
    doc.line(490, ly, 510, ly, colour, 2.0);
    doc.text(516, ly + 4, styles.at(curve.style), 11);
  }
  return doc.str();
}

std::string spearman_annotation(const stats::RankCorrelation& c) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "Spearman rho = %.3f, p = %.3g (n = %zu)", c.rho, c.p_value, c.n);
  return buf;
}

std::string plot_slope_vs_weight(const causal::CausalSummary& summary, const Matrix& probe_weights,
                                 std::size_t style, const std::vector<std::string>& styles) {
  if (probe_weights.cols() != summary.concepts || probe_weights.rows() != summary.styles)
    throw Error(ErrorKind::shape_mismatch, "probe weights and causal summary disagree on concepts");
  const auto s = static_cast<Eigen::Index>(style);
  if (s >= summary.styles) throw Error(ErrorKind::invalid_argument, "style index out of range");

  std::vector<std::size_t> concepts;
  std::vector<double> wx, sy;
  for (Eigen::Index k = 0; k < summary.concepts; ++k) {
    if (!summary.at(k, s).defined) continue;
    concepts.push_back(static_cast<std::size_t>(k));
    wx.push_back(probe_weights(s, k));
    sy.push_back(summary.at(k, s).slope);
  }
  if (concepts.empty())
    throw Error(ErrorKind::invalid_argument, "no concepts shared by the probe and causal analysis");

  const auto [wlo, whi] = std::minmax_element(wx.begin(), wx.end());
  const auto [slo, shi] = std::minmax_element(sy.begin(), sy.end());
  const auto [xl, xh] = padded_range(*wlo, *whi);
  const auto [yl, yh] = padded_range(*slo, *shi);
  const Axis x{xl, xh, 70, 450};
  const Axis y{yl, yh, 330, 50};

  svg::Document doc(480, 380);
  doc.text(260, 22, styles.at(style) + ": causal slope vs probe weight", 14, "middle");
  doc.line(70, 330, 450, 330, "#000000", 1.0, "axis");
  doc.line(70, 50, 70, 330, "#000000", 1.0, "axis");
  doc.text(260, 365, "linear probe weight", 12, "middle", "xlabel");
  doc.text(16, 190, "causal slope", 12, "middle", "ylabel");
  for (int t = 0; t <= 4; ++t) {
    const double xv = xl + (xh - xl) * t / 4.0;
    const double yv = yl + (yh - yl) * t / 4.0;
    doc.text(x(xv), 346, fixed(xv, 2), 10, "middle");
    doc.text(64, y(yv) + 3, fixed(yv, 2), 10, "end");
  }

  if (concepts.size() >= 3) {
    const auto corr = stats::spearman(wx, sy);
    doc.text(260, 42, spearman_annotation(corr), 12, "middle", "annotation");
  }

  // Label the strongest concepts on each axis.
  std::vector<std::size_t> order(concepts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<bool> labelled(concepts.size(), false);
  const std::size_t n_label = std::min<std::size_t>(3, concepts.size());
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return wx[a] > wx[b]; });
  for (std::size_t i = 0; i < n_label; ++i) labelled[order[i]] = true;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return sy[a] < sy[b]; });
  for (std::size_t i = 0; i < n_label; ++i) labelled[order[i]] = true;

  for (std::size_t i = 0; i < concepts.size(); ++i) {
    doc.circle(x(wx[i]), y(sy[i]), 3.5, svg::palette(style), "point");
    if (labelled[i])
      doc.text(x(wx[i]) + 5, y(sy[i]) - 5, std::to_string(concepts[i]), 10, "start", "label");
  }
  return doc.str();
}

std::string plot_concept_map(const std::vector<conceptmap::ConceptMapPoint>& points,
                             const std::vector<std::string>& styles) {
  if (points.empty()) throw Error(ErrorKind::invalid_argument, "empty concept map");
  double xlo = points[0].x, xhi = xlo, ylo = points[0].y, yhi = ylo;
  std::int64_t fmax = 1;
  for (const auto& p : points) {
    xlo = std::min(xlo, p.x);
    xhi = std::max(xhi, p.x);
    ylo = std::min(ylo, p.y);
    yhi = std::max(yhi, p.y);
    fmax = std::max(fmax, p.frequency);
  }
  const auto [xl, xh] = padded_range(xlo, xhi);
  const auto [yl, yh] = padded_range(ylo, yhi);
  const Axis x{xl, xh, 30, 470};
  const Axis y{yl, yh, 470, 40};
  svg::Document doc(640, 500);
  doc.text(250, 22, "Concept map", 14, "middle");
  doc.rect(30, 40, 440, 430, "none", "#cccccc", "frame");
  for (const auto& p : points) {
    // Marker area is affine in the activation frequency.
    const double r = std::sqrt(4.0 + 96.0 * static_cast<double>(p.frequency) / static_cast<double>(fmax));
    const std::string colour = p.tag.empty() ? std::string("#9e9e9e") : svg::palette(p.tag.front());
    doc.circle(x(p.x), y(p.y), r, colour, p.tag.size() == 2 ? "pair" : "point");
    doc.text(x(p.x) + r + 1, y(p.y) + 3, std::to_string(p.concept_index), 8);
  }
  for (std::size_t s = 0; s < styles.size(); ++s) {
    const double ly = 50 + 18.0 * static_cast<double>(s);
    doc.circle(490, ly, 5, svg::palette(s));
    doc.text(500, ly + 4, styles[s], 11);
  }
  doc.circle(490, 50 + 18.0 * static_cast<double>(styles.size()), 5, "#9e9e9e");
  doc.text(500, 54 + 18.0 * static_cast<double>(styles.size()), "no tag", 11);
  return doc.str();
}

std::vector<StudyBundle> assemble_study(std::span<const StudyCandidate> candidates,
                                        std::size_t n_styles, std::size_t n_concepts,
                                        const StudyPlan& plan, std::uint64_t seed) {
  if (plan.shown <= plan.top_concepts || plan.top_concepts == 0)
    throw Error(ErrorKind::invalid_argument, "study plan must show at least one control concept");
  std::mt19937_64 rng(seed);
  auto draw_below = [&rng](std::size_t bound) { return static_cast<std::size_t>(rng() % bound); };
  auto shuffle = [&](auto& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[draw_below(i)]);
  };

  // Stratify by true style.
  std::vector<std::size_t> selected;
  for (std::size_t style = 0; style < n_styles; ++style) {
    std::vector<std::size_t> correct, wrong;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto& c = candidates[i];
      if (c.true_style != style) continue;
      const bool usable = std::any_of(c.bridged.begin(), c.bridged.end(),
                                      [&](std::size_t k) { return k < c.active.size() && c.active[k]; });
      if (!usable) continue;
      (c.predicted_style == style ? correct : wrong).push_back(i);
    }
    shuffle(correct);
    shuffle(wrong);
    std::size_t take_wrong = std::min(plan.incorrect, wrong.size());
    std::size_t take_correct = std::min(plan.correct, correct.size());
    // Fill a shortfall on one side from the other.
    while (take_correct + take_wrong < plan.per_style) {
      if (take_correct < correct.size()) ++take_correct;
      else if (take_wrong < wrong.size()) ++take_wrong;
      else break;
    }
    if (take_correct + take_wrong < plan.per_style)
      warn("study: only " + std::to_string(take_correct + take_wrong) + " usable images for style " +
           std::to_string(style));
    selected.insert(selected.end(), correct.begin(), correct.begin() + static_cast<std::ptrdiff_t>(take_correct));
    selected.insert(selected.end(), wrong.begin(), wrong.begin() + static_cast<std::ptrdiff_t>(take_wrong));
  }

  std::vector<StudyBundle> bundles;
  for (std::size_t idx : selected) {
    const auto& c = candidates[idx];
    if (c.active.size() != n_concepts)
      throw Error(ErrorKind::shape_mismatch, "candidate activation vector has the wrong length");
    StudyBundle b;
    b.index = bundles.size();
    b.image_id = c.image_id;
    b.predicted_style = c.predicted_style;
    b.true_style = c.true_style;
    b.bridged = c.bridged;
    b.patch_ranked = c.patch_ranked;
    for (std::size_t k : c.bridged) {
      if (b.concepts.size() == plan.top_concepts) break;
      if (k < n_concepts && c.active[k]) b.concepts.push_back({k, false});
    }
    std::vector<std::size_t> inactive;
    for (std::size_t k = 0; k < n_concepts; ++k)
      if (!c.active[k]) inactive.push_back(k);
    const std::size_t controls = plan.shown - b.concepts.size();
    if (inactive.size() < controls)
      throw Error(ErrorKind::invalid_argument,
                  "image \"" + c.image_id + "\" has too few non-activated concepts for controls");
    shuffle(inactive);
    for (std::size_t i = 0; i < controls; ++i) b.concepts.push_back({inactive[i], true});
    b.shuffle_seed = rng();
    std::mt19937_64 order_rng(b.shuffle_seed);
    for (std::size_t i = b.concepts.size(); i > 1; --i)
      std::swap(b.concepts[i - 1], b.concepts[static_cast<std::size_t>(order_rng() % i)]);
    bundles.push_back(std::move(b));
  }
  return bundles;
}

void write_bundles(std::span<const StudyBundle> bundles, const std::vector<std::string>& styles,
                   const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& b : bundles) {
    json j;
    j["index"] = b.index;
    j["image_id"] = b.image_id;
    j["predicted_style"] = styles.at(b.predicted_style);
    j["true_style"] = styles.at(b.true_style);
    json concepts = json::array();
    for (const auto& c : b.concepts)
      concepts.push_back({{"concept", c.concept_index}, {"role", c.control ? "control" : "top"}});
    j["concepts"] = std::move(concepts);
    j["bridged_ranking"] = b.bridged;
    j["patch_ranking"] = b.patch_ranked;
    j["shuffle_seed"] = b.shuffle_seed;
    write_json(dir / ("bundle_" + std::to_string(b.index) + ".json"), j);
  }
}

}  // namespace conceptkit::report
