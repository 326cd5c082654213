#include "conceptkit/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "conceptkit/bridge.hpp"
#include "conceptkit/causal.hpp"
#include "conceptkit/conceptmap.hpp"
#include "conceptkit/error.hpp"
#include "conceptkit/manifest.hpp"
#include "conceptkit/parallel.hpp"
#include "conceptkit/probe.hpp"
#include "conceptkit/report.hpp"
#include "conceptkit/seminmf.hpp"
#include "conceptkit/sparsity.hpp"
#include "conceptkit/synthetic.hpp"
#include "conceptkit/tail.hpp"

namespace conceptkit::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads known keys from one config section and rejects the rest.
class Section {
 public:
  Section(const json& root, const std::string& name) : name_(name) {
    if (root.contains(name)) {
      if (!root[name].is_object())
        throw Error(ErrorKind::format, "config section \"" + name + "\" must be an object");
      j_ = root[name];
    } else {
      j_ = json::object();
    }
  }

  template <typename T>
  void get(const std::string& key, T& into) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      into = j_[key].get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorKind::format, "config " + name_ + "." + key + " has the wrong type");
    }
  }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_[key] : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key))
        throw Error(ErrorKind::format, "unknown config key " + name_ + "." + key);
  }

 private:
  std::string name_;
  json j_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() || p.empty() ? p : base / p;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::missing_artifact, "missing upstream artifact " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, path.string() + ": " + e.what());
  }
}

void require(const fs::path& path, const char* stage) {
  if (!fs::exists(path))
    throw Error(ErrorKind::missing_artifact,
                "missing upstream artifact " + path.string() + " (run `" + stage + "` first)");
}

unsigned threads_of(const RunConfig& c) { return c.threads == 0 ? default_threads() : c.threads; }

std::vector<std::size_t> columns_of(const Manifest& m, const std::vector<std::string>& images) {
  return samples_of_images(m, images);
}

Matrix select_columns(const Matrix& m, const std::vector<std::size_t>& cols) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i)
    out.col(static_cast<Eigen::Index>(i)) = m.col(static_cast<Eigen::Index>(cols[i]));
  return out;
}

std::vector<std::size_t> labels_of(const Manifest& m, const std::vector<std::size_t>& cols,
                                   const std::string& target) {
  std::vector<std::size_t> labels;
  labels.reserve(cols.size());
  for (std::size_t c : cols)
    labels.push_back(target == "ground_truth" ? m.samples[c].true_style
                                              : m.samples[c].predicted_style);
  return labels;
}

struct Split {
  std::vector<std::string> train, test;
};

Split load_split(const RunConfig& c) {
  const fs::path path = c.out / "split.json";
  require(path, "decompose");
  const json j = read_json(path);
  return {j.at("train").get<std::vector<std::string>>(), j.at("test").get<std::vector<std::string>>()};
}

seminmf::FitConfig fit_config(const RunConfig& c, int k, double lambda) {
  seminmf::FitConfig f;
  f.k = k;
  f.lambda = lambda;
  f.max_iter = c.max_iter;
  f.tol = c.tol;
  f.inner_steps = c.inner_steps;
  f.restarts = c.restarts;
  f.seed = c.require_seed();
  f.threads = threads_of(c);
  return f;
}

// Fits on the training columns and transforms every column; returns the
// model and activations for all samples in manifest order.
std::pair<seminmf::ConceptModel, Matrix> decompose_one(const RunConfig& c, const Manifest& m,
                                                       const Matrix& z,
                                                       const std::vector<std::string>& train,
                                                       int k, double lambda) {
  const auto cols = columns_of(m, train);
  if (cols.empty()) throw Error(ErrorKind::invalid_argument, "no training samples");
  const auto fc = fit_config(c, k, lambda);
  auto model = seminmf::fit(select_columns(z, cols), fc);
  model.layer = m.layer;
  model.model_name = m.model;
  Matrix all = seminmf::transform(model.u, z, lambda, c.inner_steps, fc.threads);
  // Training columns keep the activations the fit converged to.
  for (std::size_t i = 0; i < cols.size(); ++i)
    all.col(static_cast<Eigen::Index>(cols[i])) = model.v.col(static_cast<Eigen::Index>(i));
  return {std::move(model), std::move(all)};
}

std::unique_ptr<Tail> tail_from_config(const RunConfig& c, const Manifest& m) {
  if (!c.tail)
    throw Error(ErrorKind::missing_tail, "no tail spec: set intervene.tail in the config");
  const json& t = *c.tail;
  TailSpec spec;
  spec.layer = m.layer;
  const std::string kind = t.value("kind", std::string("affine"));
  if (kind == "affine") {
    spec.kind = TailSpec::Kind::affine_surrogate;
    if (t.contains("w_tail")) spec.w_tail = resolve(c.config_dir, t["w_tail"].get<std::string>());
    else if (m.matrices.w_tail) spec.w_tail = *m.matrices.w_tail;
    if (t.contains("b_tail")) spec.b_tail = resolve(c.config_dir, t["b_tail"].get<std::string>());
    else if (m.matrices.b_tail) spec.b_tail = *m.matrices.b_tail;
  } else if (kind == "remote") {
    spec.kind = TailSpec::Kind::remote;
    spec.endpoint = t.value("endpoint", std::string());
    spec.max_in_flight = t.value("max_in_flight", 4u);
  } else {
    throw Error(ErrorKind::format, "unknown tail kind \"" + kind + "\"");
  }
  return make_tail(spec);
}

// Evenly spaced subset of at most `cap` entries.
std::vector<std::size_t> spread(const std::vector<std::size_t>& cols, std::size_t cap) {
  if (cols.size() <= cap) return cols;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cap; ++i) out.push_back(cols[i * cols.size() / cap]);
  return out;
}

// Column j of the result is the full-image sample of patch image j.
Matrix align_full(const Manifest& patch, const Manifest& full, const Matrix& full_v) {
  std::map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < full.samples.size(); ++i) where[full.samples[i].image_id] = i;
  Matrix out(full_v.rows(), static_cast<Eigen::Index>(patch.image_ids.size()));
  for (std::size_t j = 0; j < patch.image_ids.size(); ++j) {
    const auto it = where.find(patch.image_ids[j]);
    if (it == where.end())
      throw Error(ErrorKind::format,
                  "image \"" + patch.image_ids[j] + "\" has no full-image sample");
    out.col(static_cast<Eigen::Index>(j)) = full_v.col(static_cast<Eigen::Index>(it->second));
  }
  return out;
}

std::size_t full_sample_of(const Manifest& full, const std::string& image) {
  for (std::size_t i = 0; i < full.samples.size(); ++i)
    if (full.samples[i].image_id == image) return i;
  throw Error(ErrorKind::format, "image \"" + image + "\" has no full-image sample");
}

}  // namespace

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw Error(ErrorKind::invalid_argument, "a seed is required (config \"seed\" or --seed)");
  return *seed;
}

void RunConfig::validate() const {
  require_seed();
  if (patch_manifest.empty()) throw Error(ErrorKind::invalid_argument, "data.patch_manifest is not set");
  if (!fs::exists(patch_manifest))
    throw Error(ErrorKind::io, "patch manifest not found: " + patch_manifest.string());
  if (!full_manifest.empty() && !fs::exists(full_manifest))
    throw Error(ErrorKind::io, "full-image manifest not found: " + full_manifest.string());
  if (out.empty()) throw Error(ErrorKind::invalid_argument, "no output directory");
  if (!(p >= 0.0 && p < 1.0) || !(tau_patch >= 0.0 && tau_patch < 1.0) ||
      !(tau_full >= 0.0 && tau_full < 1.0))
    throw Error(ErrorKind::invalid_argument, "threshold percentiles must lie in [0, 1)");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw Error(ErrorKind::invalid_argument, "train_fraction must lie in (0, 1)");
  if (target != "model" && target != "ground_truth")
    throw Error(ErrorKind::invalid_argument, "probe.target must be \"model\" or \"ground_truth\"");
  conceptmap::tag_basis_from_string(tag_basis);
}

RunConfig config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorKind::format, "config must be a JSON object");
  static const std::set<std::string> top = {"seed", "threads", "out", "data", "decompose",
                                            "threshold", "probe", "intervene", "map", "report",
                                            "study"};
  for (const auto& [key, _] : j.items())
    if (!top.count(key)) throw Error(ErrorKind::format, "unknown config key " + key);

  RunConfig c;
  c.config_dir = base_dir;
  c.alphas = causal::kDefaultAlphas;
  try {
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("threads")) c.threads = j["threads"].get<unsigned>();
    if (j.contains("out")) c.out = resolve(base_dir, j["out"].get<std::string>());
  } catch (const json::exception&) {
    throw Error(ErrorKind::format, "config seed/threads/out have the wrong type");
  }

  Section data(j, "data");
  std::string patch, full;
  data.get("patch_manifest", patch);
  data.get("full_manifest", full);
  data.finish();
  c.patch_manifest = resolve(base_dir, patch);
  c.full_manifest = resolve(base_dir, full);

  Section dec(j, "decompose");
  dec.get("K_patch", c.k_patch);
  dec.get("K_full", c.k_full);
  dec.get("lambda", c.lambda);
  dec.get("lambda_full", c.lambda_full);
  dec.get("max_iter", c.max_iter);
  dec.get("tol", c.tol);
  dec.get("inner_steps", c.inner_steps);
  dec.get("restarts", c.restarts);
  dec.get("train_fraction", c.train_fraction);
  dec.finish();

  Section thr(j, "threshold");
  thr.get("p", c.p);
  thr.get("tau_patch", c.tau_patch);
  thr.get("tau_full", c.tau_full);
  thr.finish();

  Section pr(j, "probe");
  pr.get("l2", c.l2);
  pr.get("step", c.step);
  pr.get("max_epochs", c.max_epochs);
  pr.get("target", c.target);
  pr.get("top_per_style", c.top_per_style);
  pr.finish();

  Section iv(j, "intervene");
  iv.get("alphas", c.alphas);
  iv.get("top_m", c.top_m);
  iv.get("n_random", c.n_random);
  iv.get("max_samples", c.max_samples);
  if (const json* t = iv.raw("tail")) {
    if (!t->is_object()) throw Error(ErrorKind::format, "intervene.tail must be an object");
    c.tail = *t;
  }
  iv.finish();

  Section mp(j, "map");
  mp.get("perplexity", c.perplexity);
  mp.get("iterations", c.tsne_iterations);
  mp.get("tag_basis", c.tag_basis);
  mp.finish();

  Section rp(j, "report");
  rp.get("card_size", c.card_size);
  rp.finish();

  Section st(j, "study");
  st.get("per_style", c.study_per_style);
  st.get("correct", c.study_correct);
  st.get("incorrect", c.study_incorrect);
  st.finish();
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, "config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, fs::absolute(path).parent_path());
}

void cmd_decompose(const RunConfig& c) {
  c.validate();
  const Manifest patch = load_manifest(c.patch_manifest);
  for (const auto& w : patch.warnings) warn(w);
  const auto set = load_activations(patch);
  const auto split = probe::split_by_image(patch.image_ids, c.train_fraction, c.require_seed());
  write_json(c.out / "split.json", {{"seed", c.require_seed()},
                                    {"train_fraction", c.train_fraction},
                                    {"train", split.train},
                                    {"test", split.test}});

  auto [model, v_all] = decompose_one(c, patch, set.z, split.train, c.k_patch, c.lambda);
  seminmf::save_model(model, c.out / "patch_model");
  save_matrix(v_all, c.out / "patch_activations.npy");

  json reports = json::array();
  for (double p : {0.60, 0.80, 0.90}) reports.push_back(json(sparsity::percentile_threshold(model.v, p)));
  const auto chosen = sparsity::percentile_threshold(model.v, c.p);
  save_binary(sparsity::binarize(v_all, chosen.tau), c.out / "patch_binary.npy");
  write_json(c.out / "sparsity.json", {{"reports", reports}, {"threshold", json(chosen)}});

  if (!c.full_manifest.empty()) {
    const Manifest full = load_manifest(c.full_manifest);
    for (const auto& w : full.warnings) warn(w);
    const auto full_set = load_activations(full);
    auto [fmodel, fv_all] =
        decompose_one(c, full, full_set.z, split.train, c.k_full, c.lambda_full);
    seminmf::save_model(fmodel, c.out / "full_model");
    save_matrix(fv_all, c.out / "full_activations.npy");
  }
}

void cmd_probe(const RunConfig& c) {
  c.validate();
  const Manifest patch = load_manifest(c.patch_manifest);
  const fs::path v_path = c.out / "patch_activations.npy", b_path = c.out / "patch_binary.npy";
  require(v_path, "decompose");
  require(b_path, "decompose");
  const Matrix v = load_matrix(v_path);
  const Matrix b = load_binary(b_path).cast<double>();
  const json sp = read_json(c.out / "sparsity.json");
  const double tau = sp.at("threshold").at("tau").get<double>();
  const auto split = load_split(c);
  const auto train = columns_of(patch, split.train), test = columns_of(patch, split.test);
  const auto y_train = labels_of(patch, train, c.target), y_test = labels_of(patch, test, c.target);

  probe::ProbeConfig pc;
  pc.l2 = c.l2;
  pc.step = c.step;
  pc.max_epochs = c.max_epochs;

  json metrics;
  metrics["target"] = c.target;
  const json extra = {{"seed", c.require_seed()}, {"target", c.target},
                      {"train_images", split.train}, {"test_images", split.test}};
  for (const auto mode : {probe::FeatureMode::raw, probe::FeatureMode::binarized}) {
    const Matrix& f = mode == probe::FeatureMode::raw ? v : b;
    const Matrix f_train = select_columns(f, train), f_test = select_columns(f, test);
    auto pr = probe::fit_probe(f_train, y_train, patch.styles, pc, mode);
    if (mode == probe::FeatureMode::binarized) pr.tau = tau;
    probe::save_probe(pr, c.out / "probe" / probe::to_string(mode), extra);
    json top = json::object();
    const auto tops = probe::top_concepts_per_style(pr, std::min<std::size_t>(c.top_per_style, static_cast<std::size_t>(f.rows())));
    for (std::size_t s = 0; s < patch.styles.size(); ++s) top[patch.styles[s]] = tops[s];
    metrics[probe::to_string(mode)] = {{"train_accuracy", probe::accuracy(pr, f_train, y_train)},
                                       {"test_accuracy", probe::accuracy(pr, f_test, y_test)},
                                       {"epochs", pr.epochs},
                                       {"final_loss", pr.loss_trace.empty() ? 0.0 : pr.loss_trace.back()},
                                       {"top_concepts", top}};
  }

  // Chance-level control: labels permuted on both sides of the split, so the
  // probe can only match the label marginals.
  std::mt19937_64 rng(c.require_seed() ^ 0x5eedULL);
  auto permuted = [&rng](std::vector<std::size_t> y) {
    for (std::size_t i = y.size(); i > 1; --i)
      std::swap(y[i - 1], y[static_cast<std::size_t>(rng() % i)]);
    return y;
  };
  const auto shuffled_train = permuted(y_train), shuffled_test = permuted(y_test);
  const Matrix f_train = select_columns(v, train), f_test = select_columns(v, test);
  const auto control = probe::fit_probe(f_train, shuffled_train, patch.styles, pc);
  metrics["shuffled_control"] = {{"test_accuracy", probe::accuracy(control, f_test, shuffled_test)}};
  write_json(c.out / "probe" / "metrics.json", metrics);
}

void cmd_intervene(const RunConfig& c) {
  c.validate();
  const Manifest patch = load_manifest(c.patch_manifest);
  const auto tail = tail_from_config(c, patch);
  const fs::path v_path = c.out / "patch_activations.npy";
  require(v_path, "decompose");
  require(c.out / "probe" / "raw" / "W.npy", "probe");
  const auto model = seminmf::load_model(c.out / "patch_model");
  const Matrix v = load_matrix(v_path);
  const Matrix h = load_hidden_states(patch);
  const auto split = load_split(c);
  const auto samples = spread(columns_of(patch, split.test), c.max_samples);

  std::vector<std::string> ids;
  for (const auto& s : patch.samples) ids.push_back(s.sample_id);
  causal::StudyInput input;
  input.hidden = &h;
  input.activations = &v;
  input.dictionary = &model.u;
  input.sample_ids = ids;
  input.token_ids = patch.style_first_token_ids;
  causal::StudyConfig sc;
  sc.alphas = c.alphas;
  sc.top_m = c.top_m;
  sc.n_random = c.n_random;
  sc.seed = c.require_seed();
  sc.threads = threads_of(c);
  const auto records = causal::run_intervention_study(input, *tail, samples, sc);
  causal::write_records(records, patch.styles, c.out / "intervene" / "records.jsonl");

  const auto summary = causal::summarize(records, model.u.cols(),
                                         static_cast<Eigen::Index>(patch.styles.size()));
  json fits = json::array();
  for (Eigen::Index k = 0; k < summary.concepts; ++k)
    for (Eigen::Index s = 0; s < summary.styles; ++s) {
      const auto& f = summary.at(k, s);
      fits.push_back({{"concept", k}, {"style", patch.styles[static_cast<std::size_t>(s)]},
                      {"slope", f.slope}, {"r2", f.r2}, {"samples", f.samples},
                      {"defined", f.defined}});
    }
  const auto probe = probe::load_probe(c.out / "probe" / "raw");
  json agreement = json::array();
  for (const auto& a : causal::compare_with_probe(summary, probe.w, patch.styles))
    agreement.push_back({{"style", a.style}, {"rho", a.correlation.rho},
                         {"p_value", a.correlation.p_value}, {"n", a.correlation.n},
                         {"concepts", a.concepts}});
  write_json(c.out / "intervene" / "summary.json",
             {{"alphas", c.alphas}, {"samples", samples.size()}, {"fits", fits},
              {"agreement", agreement}});
}

void cmd_bridge(const RunConfig& c) {
  c.validate();
  if (c.full_manifest.empty())
    throw Error(ErrorKind::invalid_argument, "bridge needs data.full_manifest");
  const Manifest patch = load_manifest(c.patch_manifest);
  const Manifest full = load_manifest(c.full_manifest);
  require(c.out / "patch_activations.npy", "decompose");
  require(c.out / "full_activations.npy", "decompose");
  const auto pmodel = seminmf::load_model(c.out / "patch_model");
  const auto fmodel = seminmf::load_model(c.out / "full_model");
  const Matrix pv = load_matrix(c.out / "patch_activations.npy");
  const Matrix fv = align_full(patch, full, load_matrix(c.out / "full_activations.npy"));

  const double tau_patch = sparsity::percentile_threshold(pmodel.v, c.tau_patch).tau;
  const double tau_full = sparsity::percentile_threshold(fmodel.v, c.tau_full).tau;
  const BinaryMatrix image_patch =
      bridge::or_aggregate(sparsity::binarize(pv, tau_patch), patch.sample_image, patch.image_ids.size());
  auto b = bridge::build_bridge(sparsity::binarize(fv, tau_full), image_patch);
  b.tau_patch_percentile = c.tau_patch;
  b.tau_full_percentile = c.tau_full;
  b.tau_patch = tau_patch;
  b.tau_full = tau_full;
  bridge::save_bridge(b, c.out / "bridge");
  save_binary(image_patch, c.out / "bridge" / "image_patch_binary.npy");
  write_json(c.out / "bridge" / "images.json", patch.image_ids);
}

void cmd_map(const RunConfig& c) {
  c.validate();
  const Manifest patch = load_manifest(c.patch_manifest);
  require(c.out / "patch_binary.npy", "decompose");
  const auto model = seminmf::load_model(c.out / "patch_model");
  const BinaryMatrix b = load_binary(c.out / "patch_binary.npy");
  const auto basis = conceptmap::tag_basis_from_string(c.tag_basis);
  std::vector<std::size_t> labels;
  for (const auto& s : patch.samples)
    labels.push_back(basis == conceptmap::TagBasis::ground_truth ? s.true_style : s.predicted_style);
  conceptmap::TsneConfig tc;
  tc.perplexity = c.perplexity;
  tc.iterations = c.tsne_iterations;
  tc.seed = c.require_seed();
  const auto points = conceptmap::build_concept_map(model.u, b, labels, patch.styles.size(), basis, tc);
  write_json(c.out / "concept_map.json", conceptmap::to_json(points, patch.styles));
  write_text(c.out / "plots" / "concept_map.svg", report::plot_concept_map(points, patch.styles));
}

void cmd_report(const RunConfig& c) {
  c.validate();
  const Manifest patch = load_manifest(c.patch_manifest);
  const fs::path rec_path = c.out / "intervene" / "records.jsonl";
  require(c.out / "patch_activations.npy", "decompose");
  require(rec_path, "intervene");
  require(c.out / "probe" / "raw" / "W.npy", "probe");
  const auto records = causal::read_records(rec_path, patch.styles);
  if (records.empty())
    throw Error(ErrorKind::missing_artifact, "no intervention records in " + rec_path.string());
  const Matrix v = load_matrix(c.out / "patch_activations.npy");
  const BinaryMatrix b = load_binary(c.out / "patch_binary.npy");
  report::export_concept_cards(v, b, patch, std::min<std::size_t>(c.card_size, static_cast<std::size_t>(v.cols())), c.out);

  std::set<std::size_t> concepts;
  for (const auto& r : records)
    if (!r.noop) concepts.insert(r.concept_index);
  for (std::size_t k : concepts)
    write_text(c.out / "plots" / ("causal_" + std::to_string(k) + ".svg"),
               report::plot_causal_curves(records, k, c.alphas, patch.styles));

  const auto summary = causal::summarize(records, v.rows(), static_cast<Eigen::Index>(patch.styles.size()));
  const auto probe = probe::load_probe(c.out / "probe" / "raw");
  for (std::size_t s = 0; s < patch.styles.size(); ++s)
    write_text(c.out / "plots" / ("scatter_" + patch.styles[s] + ".svg"),
               report::plot_slope_vs_weight(summary, probe.w, s, patch.styles));
}

void cmd_study(const RunConfig& c) {
  c.validate();
  const Manifest patch = load_manifest(c.patch_manifest);
  const Manifest full = load_manifest(c.full_manifest);
  require(c.out / "bridge" / "bridge.json", "bridge");
  const auto b = bridge::load_bridge(c.out / "bridge");
  const BinaryMatrix image_patch = load_binary(c.out / "bridge" / "image_patch_binary.npy");
  const Matrix pv = load_matrix(c.out / "patch_activations.npy");
  const Matrix fv = load_matrix(c.out / "full_activations.npy");
  const auto split = load_split(c);
  const std::set<std::string> held_out(split.test.begin(), split.test.end());

  std::vector<report::StudyCandidate> candidates;
  for (std::size_t img = 0; img < patch.image_ids.size(); ++img) {
    const std::string& id = patch.image_ids[img];
    if (!held_out.count(id)) continue;
    const std::size_t fs_idx = full_sample_of(full, id);
    report::StudyCandidate cand;
    cand.image_id = id;
    cand.predicted_style = full.samples[fs_idx].predicted_style;
    cand.true_style = full.samples[fs_idx].true_style;
    const auto ranked = bridge::image_concepts(fv.col(static_cast<Eigen::Index>(fs_idx)), b.tau_full, b,
                                               static_cast<std::size_t>(b.p.rows()));
    for (const auto& sc : ranked.ranked)
      if (sc.score > 0.0) cand.bridged.push_back(sc.concept_index);
    Vector peak = Vector::Zero(pv.rows());
    for (std::size_t s = 0; s < patch.samples.size(); ++s)
      if (patch.sample_image[s] == img) peak = peak.cwiseMax(pv.col(static_cast<Eigen::Index>(s)));
    std::vector<std::size_t> order(static_cast<std::size_t>(pv.rows()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) {
      return peak(static_cast<Eigen::Index>(x)) > peak(static_cast<Eigen::Index>(y));
    });
    for (std::size_t k : order)
      if (peak(static_cast<Eigen::Index>(k)) > 0.0) cand.patch_ranked.push_back(k);
    for (Eigen::Index k = 0; k < image_patch.rows(); ++k)
      cand.active.push_back(image_patch(k, static_cast<Eigen::Index>(img)));
    candidates.push_back(std::move(cand));
  }
  report::StudyPlan plan;
  plan.per_style = c.study_per_style;
  plan.correct = c.study_correct;
  plan.incorrect = c.study_incorrect;
  const auto bundles = report::assemble_study(candidates, patch.styles.size(),
                                              static_cast<std::size_t>(image_patch.rows()), plan,
                                              c.require_seed());
  report::write_bundles(bundles, patch.styles, c.out / "study");
}

json cmd_validate(const RunConfig& c) {
  c.validate();
  json summary;
  const Manifest patch = load_manifest(c.patch_manifest);
  const auto set = load_activations(patch);
  summary["patch"] = {{"samples", patch.samples.size()}, {"images", patch.image_ids.size()},
                      {"dim", set.z.rows()}, {"warnings", patch.warnings}};
  if (!c.full_manifest.empty()) {
    const Manifest full = load_manifest(c.full_manifest);
    const auto fset = load_activations(full);
    summary["full"] = {{"samples", full.samples.size()}, {"dim", fset.z.rows()},
                       {"warnings", full.warnings}};
  }
  summary["tail"] = c.tail ? json(c.tail->value("kind", std::string("affine"))) : json(nullptr);
  return summary;
}

void run_all(const RunConfig& c) {
  cmd_decompose(c);
  cmd_probe(c);
  cmd_intervene(c);
  cmd_bridge(c);
  cmd_map(c);
  cmd_report(c);
  cmd_study(c);
}

void cmd_synth(const fs::path& dir, std::uint64_t seed) {
  synthetic::PlantedConfig pc;
  pc.seed = seed;
  synthetic::write_dataset(synthetic::generate(pc), dir);
  const json config = {
      {"seed", seed},
      {"threads", 0},
      {"out", "out"},
      {"data", {{"patch_manifest", "patch/manifest.json"}, {"full_manifest", "full/manifest.json"}}},
      {"decompose",
       {{"K_patch", pc.concepts}, {"K_full", 8}, {"lambda", 0.05}, {"lambda_full", 0.01},
        {"max_iter", 500}, {"tol", 1e-5}, {"inner_steps", 10}, {"restarts", 4},
        {"train_fraction", 0.8}}},
      {"threshold", {{"p", 0.9}, {"tau_patch", 0.95}, {"tau_full", 0.8}}},
      {"probe", {{"l2", 1e-3}, {"step", 0.1}, {"max_epochs", 2000}, {"target", "model"}}},
      {"intervene",
       {{"alphas", causal::kDefaultAlphas}, {"top_m", 3}, {"n_random", 10}, {"max_samples", 200},
        {"tail", {{"kind", "affine"}}}}},
      {"map", {{"perplexity", 5.0}, {"iterations", 1000}, {"tag_basis", "model_prediction"}}},
      {"report", {{"card_size", 24}}},
      {"study", {{"per_style", 10}, {"correct", 7}, {"incorrect", 3}}}};
  write_json(dir / "config.json", config);
}

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::format: return 2;
      case ErrorKind::missing_artifact: return 3;
      case ErrorKind::missing_tail: return 4;
      default: return 1;
    }
  }
  return 1;
}

}  // namespace conceptkit::pipeline
