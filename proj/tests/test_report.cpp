#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "conceptkit/error.hpp"
#include "conceptkit/report.hpp"
#include "conceptkit/sparsity.hpp"
#include "conceptkit/svg.hpp"
#include "conceptkit/tail.hpp"
#include "helpers.hpp"

using namespace conceptkit;
using namespace conceptkit::report;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kStyles{"Baroque", "Impressionism", "Cubism", "Renaissance", "Rococo"};
const std::vector<int> kTokens{1, 4, 7, 10, 13};

Manifest toy_manifest(std::size_t n) {
  Manifest m;
  m.model = "toy";
  m.layer = 7;
  m.styles = kStyles;
  m.style_first_token_ids = kTokens;
  for (std::size_t i = 0; i < n; ++i) {
    SampleMeta s;
    s.sample_id = "s" + std::to_string(i);
    s.image_id = "img" + std::to_string(i / 4);
    s.patch_row = static_cast<int>(i % 2);
    s.patch_col = static_cast<int>((i / 2) % 2);
    s.true_style = (i / 4) % kStyles.size();
    s.predicted_style = (i / 3) % kStyles.size();
    m.samples.push_back(s);
    if (m.image_ids.empty() || m.image_ids.back() != s.image_id) m.image_ids.push_back(s.image_id);
    m.sample_image.push_back(m.image_ids.size() - 1);
  }
  return m;
}

std::size_t count(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = haystack.find(needle); p != std::string::npos; p = haystack.find(needle, p + 1)) ++n;
  return n;
}

void check_self_contained(const std::string& svg) {
  CHECK(svg.size() < kMaxSvgBytes);
  CHECK(svg.find("href") == std::string::npos);
  CHECK(svg.find("url(") == std::string::npos);
  CHECK(svg.find("<image") == std::string::npos);
}

struct StudyFixture {
  Matrix u, v, h;
  std::vector<std::string> ids;
  std::vector<causal::InterventionRecord> records;
};

// Dense activations with top_m = K so every concept is intervened on for
// every sample through a linear tail.
StudyFixture linear_records(const std::vector<double>& alphas) {
  const Eigen::Index d = 8, k = 4, n = 6;
  StudyFixture f;
  f.u = testing::gaussian(d, k, 31);
  f.u.colwise().normalize();
  f.v = testing::gaussian(k, n, 32).cwiseAbs().array() + 0.1;
  f.h = f.u * f.v + testing::gaussian(d, n, 33, 0.1);
  for (Eigen::Index i = 0; i < n; ++i) f.ids.push_back("s" + std::to_string(i));
  const AffineTail tail(testing::gaussian(16, d, 34), testing::gaussian(16, 1, 35).col(0));
  const causal::StudyInput input{&f.h, &f.v, &f.u, f.ids, kTokens};
  causal::StudyConfig cfg;
  cfg.alphas = alphas;
  cfg.top_m = static_cast<std::size_t>(k);
  cfg.seed = 3;
  std::vector<std::size_t> samples(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = i;
  f.records = causal::run_intervention_study(input, tail, samples, cfg);
  return f;
}

}  // namespace

TEST_CASE("concept cards follow top_activating") {
  const Eigen::Index k = 5, n = 30;
  const Matrix v = testing::gaussian(k, n, 1).cwiseMax(0.0);
  const BinaryMatrix active = sparsity::binarize(v, 0.5);
  const auto dataset = toy_manifest(static_cast<std::size_t>(n));

  const auto cards = concept_cards(v, active, dataset, 7);
  REQUIRE(cards.size() == static_cast<std::size_t>(k));
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto expected = sparsity::top_activating(v, c, 7);
    std::vector<std::size_t> got;
    for (const auto& e : cards[static_cast<std::size_t>(c)].top) {
      got.push_back(e.sample);
      CHECK(e.activation == v(c, static_cast<Eigen::Index>(e.sample)));
    }
    CHECK(got == expected);
    CHECK(cards[static_cast<std::size_t>(c)].concept_index == static_cast<std::size_t>(c));
    CHECK_FALSE(cards[static_cast<std::size_t>(c)].label.has_value());
  }

  SUBCASE("style shares count active samples by predicted style") {
    for (Eigen::Index c = 0; c < k; ++c) {
      std::vector<double> counts(kStyles.size(), 0.0);
      double total = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (active(c, i)) {
          counts[dataset.samples[static_cast<std::size_t>(i)].predicted_style] += 1.0;
          total += 1.0;
        }
      const auto& shares = cards[static_cast<std::size_t>(c)].style_shares;
      REQUIRE(shares.size() == kStyles.size());
      for (std::size_t s = 0; s < kStyles.size(); ++s)
        CHECK(shares[s] == doctest::Approx(total > 0 ? counts[s] / total : 0.0));
    }
  }

  SUBCASE("m = 1 and m = n") {
    const auto single = concept_cards(v, active, dataset, 1);
    for (const auto& card : single) CHECK(card.top.size() == 1);
    const auto all = concept_cards(v, active, dataset, static_cast<std::size_t>(n));
    for (const auto& card : all) CHECK(card.top.size() == static_cast<std::size_t>(n));
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(concept_cards(v, active, dataset, static_cast<std::size_t>(n) + 1), Error);
    CHECK_THROWS_AS(concept_cards(v, active, dataset, 0), Error);
    CHECK_THROWS_AS(concept_cards(v, active, toy_manifest(10), 3), Error);
    CHECK_THROWS_AS(concept_cards(v, BinaryMatrix::Zero(k, n - 1), dataset, 3), Error);
  }
}

TEST_CASE("exported cards") {
  const Eigen::Index k = 6, n = 40;
  const Matrix v = testing::gaussian(k, n, 2).cwiseMax(0.0);
  const BinaryMatrix active = sparsity::binarize(v, 0.3);
  const auto dataset = toy_manifest(static_cast<std::size_t>(n));
  const auto dir = testing::scratch("report_cards");

  const auto files = export_concept_cards(v, active, dataset, kDefaultCardSize, dir / "a");
  CHECK(files.size() == 2 * static_cast<std::size_t>(k));
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto stem = dir / "a" / "cards" / ("concept_" + std::to_string(c));
    REQUIRE(fs::exists(stem.string() + ".json"));
    REQUIRE(fs::exists(stem.string() + ".svg"));
    const auto j = json::parse(testing::read_file(stem.string() + ".json"));
    CHECK(j["concept"] == c);
    CHECK(j["label"].is_null());
    const auto expected = sparsity::top_activating(v, c, kDefaultCardSize);
    REQUIRE(j["top_samples"].size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& s = dataset.samples[expected[i]];
      CHECK(j["top_samples"][i]["sample_id"] == s.sample_id);
      CHECK(j["top_samples"][i]["image_id"] == s.image_id);
      CHECK(j["top_samples"][i]["patch_row"] == *s.patch_row);
    }
    CHECK(j["style_shares"].size() == kStyles.size());
    const auto svg = testing::read_file(stem.string() + ".svg");
    check_self_contained(svg);
    CHECK(count(svg, "class=\"patch\"") == kDefaultCardSize);
  }

  SUBCASE("regeneration is bit-identical") {
    export_concept_cards(v, active, dataset, kDefaultCardSize, dir / "b");
    for (const auto& entry : fs::directory_iterator(dir / "a" / "cards"))
      CHECK(testing::read_file(entry.path()) ==
            testing::read_file(dir / "b" / "cards" / entry.path().filename()));
  }
}

TEST_CASE("causal curves from a linear tail are collinear") {
  const auto f = linear_records(causal::kDefaultAlphas);
  for (std::size_t concept_index = 0; concept_index < 4; ++concept_index) {
    const auto curves = causal_curves(f.records, concept_index, causal::kDefaultAlphas);
    REQUIRE(curves.size() == kStyles.size());
    for (const auto& curve : curves) {
      REQUIRE(curve.points.size() == causal::kDefaultAlphas.size());
      // Fit through the first and last point, measure the worst residual.
      const auto& a = curve.points.front();
      const auto& b = curve.points.back();
      const double slope = (b.mean - a.mean) / (b.alpha - a.alpha);
      double lo = a.mean, hi = a.mean, worst = 0.0;
      for (const auto& p : curve.points) {
        lo = std::min(lo, p.mean);
        hi = std::max(hi, p.mean);
        worst = std::max(worst, std::abs(a.mean + slope * (p.alpha - a.alpha) - p.mean));
        CHECK(p.samples == f.ids.size());
      }
      CHECK(hi > lo);
      CHECK(worst < 1e-9 * (hi - lo));
    }
  }
}

TEST_CASE("causal curve means and errors") {
  const auto f = linear_records(causal::kDefaultAlphas);
  const auto curves = causal_curves(f.records, 1, causal::kDefaultAlphas);
  for (const auto& curve : curves)
    for (const auto& p : curve.points) {
      std::vector<double> ys;
      for (const auto& r : f.records)
        if (r.concept_index == 1 && r.style == curve.style && r.alpha == p.alpha)
          ys.push_back(r.effect.calibrated_logit);
      CHECK(p.mean == doctest::Approx(stats::mean(ys)).epsilon(1e-12));
      CHECK(p.standard_error == doctest::Approx(stats::standard_error(ys)).epsilon(1e-12));
    }
}

TEST_CASE("causal curve plot") {
  const auto f = linear_records(causal::kDefaultAlphas);
  const auto svg = plot_causal_curves(f.records, 2, causal::kDefaultAlphas, kStyles);
  check_self_contained(svg);
  CHECK(count(svg, "class=\"xtick\"") == 6);
  CHECK(count(svg, "<polyline") == kStyles.size());
  CHECK(count(svg, "class=\"errorbar\"") == 6 * kStyles.size());
  CHECK(svg.find("alpha") != std::string::npos);
  CHECK(svg == plot_causal_curves(f.records, 2, causal::kDefaultAlphas, kStyles));

  SUBCASE("single style gives one polyline") {
    std::vector<causal::InterventionRecord> one;
    for (const auto& r : f.records)
      if (r.style == 3) one.push_back(r);
    const auto single = plot_causal_curves(one, 2, causal::kDefaultAlphas, kStyles);
    CHECK(count(single, "<polyline") == 1);
    CHECK(single.find("Renaissance") != std::string::npos);
  }

  SUBCASE("missing alpha coverage") {
    std::vector<causal::InterventionRecord> partial;
    for (const auto& r : f.records)
      if (r.alpha != 0.75) partial.push_back(r);
    CHECK_THROWS_AS(causal_curves(partial, 2, causal::kDefaultAlphas), Error);
    CHECK_THROWS_AS(plot_causal_curves(partial, 2, causal::kDefaultAlphas, kStyles), Error);
    const std::vector<double> grid{-0.5, 0.25, 1.0};
    CHECK(count(plot_causal_curves(partial, 2, grid, kStyles), "class=\"xtick\"") == 3);
  }

  SUBCASE("unknown concept") {
    CHECK(causal_curves(f.records, 9, causal::kDefaultAlphas).empty());
    CHECK_THROWS_AS(plot_causal_curves(f.records, 9, causal::kDefaultAlphas, kStyles), Error);
  }
}

TEST_CASE("slope versus weight scatter") {
  const Eigen::Index k = 10, s = 5;
  causal::CausalSummary summary;
  summary.concepts = k;
  summary.styles = s;
  summary.fits.resize(static_cast<std::size_t>(k * s));
  const Matrix w = testing::gaussian(s, k, 41);
  const Matrix noise = testing::gaussian(s, k, 42, 0.3);
  for (Eigen::Index c = 0; c < k; ++c)
    for (Eigen::Index t = 0; t < s; ++t) {
      auto& fit = summary.fits[static_cast<std::size_t>(c * s + t)];
      fit.slope = -w(t, c) + noise(t, c);
      fit.r2 = 1.0;
      fit.samples = 3;
      fit.defined = c != 4;  // one concept never intervened on
    }

  std::set<std::string> plots;
  for (std::size_t t = 0; t < kStyles.size(); ++t) {
    const auto svg = plot_slope_vs_weight(summary, w, t, kStyles);
    check_self_contained(svg);
    plots.insert(svg);
    std::vector<double> x, y;
    for (Eigen::Index c = 0; c < k; ++c)
      if (c != 4) {
        x.push_back(w(static_cast<Eigen::Index>(t), c));
        y.push_back(summary.at(c, static_cast<Eigen::Index>(t)).slope);
      }
    const auto ann = spearman_annotation(stats::spearman(x, y));
    CHECK(svg.find(">" + svg::escape(ann) + "<") != std::string::npos);
    CHECK(count(svg, "class=\"point\"") == 9);
    CHECK(svg.find(kStyles[t]) != std::string::npos);
  }
  CHECK(plots.size() == 5);

  SUBCASE("errors") {
    CHECK_THROWS_AS(plot_slope_vs_weight(summary, Matrix::Zero(s, k + 1), 0, kStyles), Error);
    CHECK_THROWS_AS(plot_slope_vs_weight(summary, w, 5, kStyles), Error);
    auto empty = summary;
    for (auto& fit : empty.fits) fit.defined = false;
    CHECK_THROWS_AS(plot_slope_vs_weight(empty, w, 0, kStyles), Error);
  }
}

TEST_CASE("spearman annotation") {
  const stats::RankCorrelation c{-0.912345, 0.000123456, 128};
  CHECK(spearman_annotation(c) == "Spearman rho = -0.912, p = 0.000123 (n = 128)");
}

TEST_CASE("concept map plot") {
  std::vector<conceptmap::ConceptMapPoint> pts(4);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i].concept_index = i;
    pts[i].x = static_cast<double>(i);
    pts[i].y = static_cast<double>(i * i);
    pts[i].frequency = static_cast<std::int64_t>(10 * (i + 1));
  }
  pts[1].tag = {2};
  pts[2].tag = {0, 3};
  const auto svg = plot_concept_map(pts, kStyles);
  check_self_contained(svg);
  CHECK(count(svg, "class=\"point\"") == 3);
  CHECK(count(svg, "class=\"pair\"") == 1);
  CHECK(svg.find("no tag") != std::string::npos);
  CHECK(svg == plot_concept_map(pts, kStyles));
  CHECK_THROWS_AS(plot_concept_map({}, kStyles), Error);
}

namespace {

// 10 images per style: 7 predicted correctly and 3 not, each with 8 concepts
// of which concepts 0..3 may be active.
std::vector<StudyCandidate> study_candidates(std::size_t per_style, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<StudyCandidate> out;
  for (std::size_t style = 0; style < kStyles.size(); ++style)
    for (std::size_t i = 0; i < per_style; ++i) {
      StudyCandidate c;
      c.image_id = "img_" + std::to_string(style) + "_" + std::to_string(i);
      c.true_style = style;
      c.predicted_style = (i % 10) < 7 ? style : (style + 1) % kStyles.size();
      c.active.assign(8, 0);
      for (std::size_t k = 0; k < 4; ++k) c.active[k] = static_cast<std::uint8_t>(rng() % 2);
      c.active[rng() % 4] = 1;
      c.bridged = {3, 1, 0, 2, 5};
      c.patch_ranked = {0, 1, 2, 3};
      out.push_back(std::move(c));
    }
  return out;
}

}  // namespace

TEST_CASE("study bundles") {
  const auto candidates = study_candidates(10, 51);
  const StudyPlan plan;
  const auto bundles = assemble_study(candidates, kStyles.size(), 8, plan, 9);
  REQUIRE(bundles.size() == 50);

  std::set<std::string> images;
  std::vector<std::size_t> per_style(kStyles.size(), 0), correct(kStyles.size(), 0);
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const auto& b = bundles[i];
    CHECK(b.index == i);
    images.insert(b.image_id);
    ++per_style[b.true_style];
    if (b.predicted_style == b.true_style) ++correct[b.true_style];
    const auto& c = *std::find_if(candidates.begin(), candidates.end(),
                                  [&](const auto& x) { return x.image_id == b.image_id; });
    REQUIRE(b.concepts.size() == 3);
    std::size_t top = 0;
    std::set<std::size_t> distinct;
    for (const auto& sc : b.concepts) {
      distinct.insert(sc.concept_index);
      if (sc.control) {
        CHECK(c.active[sc.concept_index] == 0);
      } else {
        ++top;
        CHECK(c.active[sc.concept_index] == 1);
      }
    }
    CHECK(distinct.size() == 3);
    CHECK(top >= 1);
    CHECK(top <= 2);
    // Top concepts are the first active entries of the bridged ranking.
    std::vector<std::size_t> expected_top;
    for (std::size_t k : c.bridged)
      if (expected_top.size() < 2 && c.active[k]) expected_top.push_back(k);
    std::vector<std::size_t> got_top;
    for (const auto& sc : b.concepts)
      if (!sc.control) got_top.push_back(sc.concept_index);
    std::sort(expected_top.begin(), expected_top.end());
    std::sort(got_top.begin(), got_top.end());
    CHECK(got_top == expected_top);
    CHECK(b.bridged == c.bridged);
    CHECK(b.patch_ranked == c.patch_ranked);
  }
  CHECK(images.size() == 50);
  for (std::size_t s = 0; s < kStyles.size(); ++s) {
    CHECK(per_style[s] == 10);
    CHECK(correct[s] == 7);
  }

  SUBCASE("same seed gives identical bundles") {
    const auto again = assemble_study(candidates, kStyles.size(), 8, plan, 9);
    REQUIRE(again.size() == bundles.size());
    for (std::size_t i = 0; i < bundles.size(); ++i) {
      CHECK(again[i].image_id == bundles[i].image_id);
      CHECK(again[i].shuffle_seed == bundles[i].shuffle_seed);
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(again[i].concepts[j].concept_index == bundles[i].concepts[j].concept_index);
        CHECK(again[i].concepts[j].control == bundles[i].concepts[j].control);
      }
    }
    const auto other = assemble_study(candidates, kStyles.size(), 8, plan, 10);
    bool differs = false;
    for (std::size_t i = 0; i < bundles.size(); ++i)
      for (std::size_t j = 0; j < 3; ++j)
        differs |= other[i].concepts[j].concept_index != bundles[i].concepts[j].concept_index;
    CHECK(differs);
  }

  SUBCASE("a larger pool keeps the 7/3 split") {
    const auto pool = study_candidates(20, 52);
    const auto picked = assemble_study(pool, kStyles.size(), 8, plan, 1);
    CHECK(picked.size() == 50);
    std::size_t right = 0;
    for (const auto& b : picked) right += b.predicted_style == b.true_style;
    CHECK(right == 35);
  }

  SUBCASE("written bundles") {
    const auto dir = testing::scratch("report_study");
    write_bundles(bundles, kStyles, dir / "a");
    write_bundles(bundles, kStyles, dir / "b");
    for (std::size_t i = 0; i < bundles.size(); ++i) {
      const auto name = "bundle_" + std::to_string(i) + ".json";
      const auto text = testing::read_file(dir / "a" / name);
      CHECK(text == testing::read_file(dir / "b" / name));
      const auto j = json::parse(text);
      CHECK(j["image_id"] == bundles[i].image_id);
      CHECK(j["true_style"] == kStyles[bundles[i].true_style]);
      CHECK(j["concepts"].size() == 3);
    }
  }
}

TEST_CASE("study errors and shortfalls") {
  auto candidates = study_candidates(10, 53);
  const StudyPlan plan;

  SUBCASE("image activating every concept") {
    std::fill(candidates[0].active.begin(), candidates[0].active.end(), 1);
    CHECK_THROWS_AS(assemble_study(candidates, kStyles.size(), 8, plan, 1), Error);
  }

  SUBCASE("plans without controls") {
    StudyPlan bad;
    bad.shown = 2;
    CHECK_THROWS_AS(assemble_study(candidates, kStyles.size(), 8, bad, 1), Error);
  }

  SUBCASE("wrong activation length") {
    candidates[3].active.pop_back();
    CHECK_THROWS_AS(assemble_study(candidates, kStyles.size(), 8, plan, 1), Error);
  }

  SUBCASE("unusable images are skipped with a warning") {
    static std::vector<std::string> warnings;
    warnings.clear();
    set_warning_sink([](const std::string& w) { warnings.push_back(w); });
    for (auto& c : candidates)
      if (c.true_style == 2) std::fill(c.active.begin(), c.active.end(), 0);
    const auto bundles = assemble_study(candidates, kStyles.size(), 8, plan, 1);
    set_warning_sink(nullptr);
    CHECK(bundles.size() == 40);
    CHECK(warnings.size() == 1);
  }
}
