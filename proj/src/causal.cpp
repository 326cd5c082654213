#include "conceptkit/causal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "conceptkit/error.hpp"
#include "conceptkit/kernels.hpp"
#include "conceptkit/parallel.hpp"

namespace conceptkit::causal {

std::vector<StyleScore> style_scores_from_logits(const Vector& logits,
                                                 std::span<const int> token_ids) {
  std::vector<StyleScore> out;
  out.reserve(token_ids.size());
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  for (int t : token_ids) {
    if (t < 0 || t >= logits.size())
      throw Error(ErrorKind::invalid_argument,
                  "token id " + std::to_string(t) + " outside vocabulary of " +
                      std::to_string(logits.size()));
    const double z = logits(t);
    out.push_back({z, z - lse});
  }
  return out;
}

std::vector<StyleScore> style_scores(const Tail& tail, const Vector& hidden,
                                     std::span<const int> token_ids) {
  return style_scores_from_logits(tail.forward(hidden), token_ids);
}

Vector intervene(const Vector& hidden, const Vector& direction, double activation, double alpha) {
  if (hidden.size() != direction.size())
    throw Error(ErrorKind::shape_mismatch, "intervene: hidden and concept sizes differ");
  Vector out = hidden;
  kernels::axpy(-alpha * activation, {direction.data(), static_cast<std::size_t>(direction.size())},
                {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

std::uint64_t calibration_seed(std::uint64_t seed, std::size_t sample, std::size_t concept_index) {
  return stats::mix_seed(stats::mix_seed(stats::mix_seed(seed) ^ sample) ^ concept_index);
}

std::vector<Vector> calibration_directions(Eigen::Index dim, double radius, std::uint64_t seed,
                                           int n_random) {
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(std::max(n_random, 0)));
  for (int draw = 0; draw < n_random; ++draw) {
    std::mt19937_64 rng(stats::mix_seed(seed ^ static_cast<std::uint64_t>(draw)));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector r(dim);
    double norm = 0.0;
    while (norm == 0.0) {
      for (Eigen::Index i = 0; i < dim; ++i) r(i) = normal(rng);
      norm = r.norm();
    }
    out.push_back(r * (radius / norm));
  }
  return out;
}

std::vector<Effect> causal_effects(const Tail& tail, const Vector& hidden, const Vector& direction,
                                   double activation, std::span<const double> alphas,
                                   std::span<const int> token_ids, int n_random,
                                   std::uint64_t seed) {
  if (n_random < 1) throw Error(ErrorKind::invalid_argument, "need at least one random direction");
  if (activation < 0.0) throw Error(ErrorKind::invalid_argument, "activation must be >= 0");
  if (hidden.size() != direction.size())
    throw Error(ErrorKind::shape_mismatch, "hidden and concept sizes differ");
  const std::size_t styles = token_ids.size();
  std::vector<Effect> out;
  out.reserve(alphas.size());
  if (activation == 0.0) {
    for (double alpha : alphas) out.push_back({alpha, std::vector<StyleEffect>(styles), true});
    return out;
  }

  const auto base = style_scores(tail, hidden, token_ids);
  const auto randoms = calibration_directions(hidden.size(), direction.norm(), seed, n_random);
  auto deltas = [&](const Vector& dir, double alpha, std::vector<StyleScore>& d) {
    const auto scores = style_scores(tail, intervene(hidden, dir, activation, alpha), token_ids);
    for (std::size_t s = 0; s < styles; ++s) {
      d[s].logit = scores[s].logit - base[s].logit;
      d[s].logprob = scores[s].logprob - base[s].logprob;
    }
  };

  std::vector<StyleScore> d(styles);
  for (double alpha : alphas) {
    Effect e{alpha, std::vector<StyleEffect>(styles), false};
    deltas(direction, alpha, d);
    for (std::size_t s = 0; s < styles; ++s) {
      e.styles[s].delta_logit = d[s].logit;
      e.styles[s].delta_logprob = d[s].logprob;
    }
    for (const auto& r : randoms) {
      deltas(r, alpha, d);
      for (std::size_t s = 0; s < styles; ++s) {
        e.styles[s].random_mean_logit += d[s].logit;
        e.styles[s].random_mean_logprob += d[s].logprob;
      }
    }
    for (auto& se : e.styles) {
      se.random_mean_logit /= static_cast<double>(n_random);
      se.random_mean_logprob /= static_cast<double>(n_random);
      se.calibrated_logit = se.delta_logit - se.random_mean_logit;
      se.calibrated_logprob = se.delta_logprob - se.random_mean_logprob;
    }
    out.push_back(std::move(e));
  }
  return out;
}

Effect causal_effect(const Tail& tail, const Vector& hidden, const Vector& direction,
                     double activation, double alpha, std::span<const int> token_ids,
                     int n_random, std::uint64_t seed) {
  const double alphas[] = {alpha};
  return causal_effects(tail, hidden, direction, activation, alphas, token_ids, n_random, seed)
      .front();
}

std::vector<std::size_t> top_concepts(const Matrix& activations, Eigen::Index column,
                                      std::size_t m) {
  const auto k = static_cast<std::size_t>(activations.rows());
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto col = activations.col(column);
  const std::size_t take = std::min(m, k);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double va = col(static_cast<Eigen::Index>(a));
                      const double vb = col(static_cast<Eigen::Index>(b));
                      return va != vb ? va > vb : a < b;
                    });
  idx.resize(take);
  return idx;
}

std::vector<InterventionRecord> run_intervention_study(const StudyInput& input, const Tail& tail,
                                                       std::span<const std::size_t> samples,
                                                       const StudyConfig& config) {
  if (samples.empty()) throw Error(ErrorKind::invalid_argument, "empty held-out set");
  if (!input.hidden || !input.activations || !input.dictionary)
    throw Error(ErrorKind::invalid_argument, "study input is incomplete");
  const Matrix& h = *input.hidden;
  const Matrix& v = *input.activations;
  const Matrix& u = *input.dictionary;
  if (h.cols() != v.cols() || u.cols() != v.rows() || u.rows() != h.rows() ||
      static_cast<Eigen::Index>(input.sample_ids.size()) != h.cols())
    throw Error(ErrorKind::shape_mismatch, "study input shapes disagree");
  if (config.alphas.empty()) throw Error(ErrorKind::invalid_argument, "empty alpha grid");

  const std::size_t styles = input.token_ids.size();
  std::vector<std::vector<InterventionRecord>> per_sample(samples.size());
  parallel_for(samples.size(), config.threads, [&](std::size_t i) {
    const std::size_t col = samples[i];
    const auto c = static_cast<Eigen::Index>(col);
    const Vector hidden = h.col(c);
    auto& out = per_sample[i];
    for (std::size_t k : top_concepts(v, c, config.top_m)) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double a = v(kk, c);
      const auto effects =
          causal_effects(tail, hidden, u.col(kk), a, config.alphas, input.token_ids,
                         config.n_random, calibration_seed(config.seed, col, k));
      for (const auto& e : effects)
        for (std::size_t s = 0; s < styles; ++s)
          out.push_back({input.sample_ids[col], col, k, s, e.alpha, a, e.styles[s], e.noop});
    }
  });
  std::vector<InterventionRecord> records;
  for (auto& r : per_sample) std::move(r.begin(), r.end(), std::back_inserter(records));
  return records;
}

SlopeFit causal_slope(std::span<const double> alphas, std::span<const double> y) {
  if (alphas.size() != y.size() || alphas.empty())
    throw Error(ErrorKind::shape_mismatch, "causal_slope needs matching, non-empty inputs");
  double saa = 0.0, say = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    saa += alphas[i] * alphas[i];
    say += alphas[i] * y[i];
    syy += y[i] * y[i];
  }
  if (saa == 0.0) throw Error(ErrorKind::invalid_argument, "all alphas are zero");
  SlopeFit fit;
  fit.slope = say / saa;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const double r = y[i] - fit.slope * alphas[i];
    ss_res += r * r;
  }
  fit.r2 = syy == 0.0 ? 1.0 : std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  fit.defined = true;
  return fit;
}

CausalSummary summarize(std::span<const InterventionRecord> records, Eigen::Index concepts,
                        Eigen::Index styles) {
  CausalSummary summary;
  summary.concepts = concepts;
  summary.styles = styles;
  summary.fits.resize(static_cast<std::size_t>(concepts * styles));

  struct Acc {
    std::map<double, std::pair<double, std::size_t>> by_alpha;  // alpha -> (sum, count)
    std::set<std::size_t> samples;
  };
  std::vector<Acc> acc(summary.fits.size());
  for (const auto& r : records) {
    if (r.noop) continue;
    if (static_cast<Eigen::Index>(r.concept_index) >= concepts ||
        static_cast<Eigen::Index>(r.style) >= styles)
      throw Error(ErrorKind::invalid_argument, "record outside the concept/style range");
    auto& a = acc[r.concept_index * static_cast<std::size_t>(styles) + r.style];
    auto& slot = a.by_alpha[r.alpha];
    slot.first += r.effect.calibrated_logit;
    ++slot.second;
    a.samples.insert(r.sample);
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    std::vector<double> alphas, ys;
    for (const auto& [alpha, sc] : acc[i].by_alpha) {
      alphas.push_back(alpha);
      ys.push_back(sc.first / static_cast<double>(sc.second));
    }
    const auto nonzero = std::count_if(alphas.begin(), alphas.end(), [](double x) { return x != 0.0; });
    if (alphas.size() < 2 || nonzero == 0) continue;
    summary.fits[i] = causal_slope(alphas, ys);
    summary.fits[i].samples = acc[i].samples.size();
  }
  return summary;
}

std::vector<StyleAgreement> compare_with_probe(const CausalSummary& summary,
                                               const Matrix& probe_weights,
                                               const std::vector<std::string>& styles) {
  if (probe_weights.rows() != summary.styles || probe_weights.cols() != summary.concepts)
    throw Error(ErrorKind::shape_mismatch, "probe weights and causal summary disagree on shape");
  std::vector<StyleAgreement> out;
  for (Eigen::Index s = 0; s < summary.styles; ++s) {
    StyleAgreement agreement;
    agreement.style = styles.at(static_cast<std::size_t>(s));
    std::vector<double> weights, slopes;
    for (Eigen::Index k = 0; k < summary.concepts; ++k) {
      const auto& fit = summary.at(k, s);
      if (!fit.defined) continue;
      agreement.concepts.push_back(static_cast<std::size_t>(k));
      weights.push_back(probe_weights(s, k));
      slopes.push_back(fit.slope);
    }
    if (agreement.concepts.size() < 3)
      throw Error(ErrorKind::invalid_argument,
                  "too few concepts with causal slopes for style " + agreement.style);
    agreement.correlation = stats::spearman(weights, slopes);
    out.push_back(std::move(agreement));
  }
  return out;
}

void write_records(std::span<const InterventionRecord> records,
                   const std::vector<std::string>& styles, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::json j;
    j["sample_id"] = r.sample_id;
    j["sample"] = r.sample;
    j["concept"] = r.concept_index;
    j["style"] = styles.at(r.style);
    j["alpha"] = r.alpha;
    j["activation"] = r.activation;
    j["delta_logit"] = r.effect.delta_logit;
    j["delta_logprob"] = r.effect.delta_logprob;
    j["random_mean_logit"] = r.effect.random_mean_logit;
    j["random_mean_logprob"] = r.effect.random_mean_logprob;
    j["calibrated_logit"] = r.effect.calibrated_logit;
    j["calibrated_logprob"] = r.effect.calibrated_logprob;
    j["noop"] = r.noop;
    out << j.dump() << '\n';
  }
}

std::vector<InterventionRecord> read_records(const std::filesystem::path& path,
                                             const std::vector<std::string>& styles) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::missing_artifact, "missing " + path.string());
  std::vector<InterventionRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      InterventionRecord r;
      r.sample_id = j.at("sample_id").get<std::string>();
      r.sample = j.at("sample").get<std::size_t>();
      r.concept_index = j.at("concept").get<std::size_t>();
      const auto style = j.at("style").get<std::string>();
      const auto it = std::find(styles.begin(), styles.end(), style);
      if (it == styles.end()) throw Error(ErrorKind::format, "unknown style \"" + style + "\"");
      r.style = static_cast<std::size_t>(it - styles.begin());
      r.alpha = j.at("alpha").get<double>();
      r.activation = j.at("activation").get<double>();
      r.effect.delta_logit = j.at("delta_logit").get<double>();
      r.effect.delta_logprob = j.at("delta_logprob").get<double>();
      r.effect.random_mean_logit = j.at("random_mean_logit").get<double>();
      r.effect.random_mean_logprob = j.at("random_mean_logprob").get<double>();
      r.effect.calibrated_logit = j.at("calibrated_logit").get<double>();
      r.effect.calibrated_logprob = j.at("calibrated_logprob").get<double>();
      r.noop = j.at("noop").get<bool>();
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::format, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace conceptkit::causal
