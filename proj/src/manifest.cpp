#include "conceptkit/manifest.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "conceptkit/error.hpp"

namespace conceptkit {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(Granularity g) {
  return g == Granularity::patch ? "patch" : "full_image";
}

std::size_t Manifest::style_index(const std::string& name) const {
  const auto it = std::find(styles.begin(), styles.end(), name);
  if (it == styles.end()) throw Error(ErrorKind::format, "unknown style \"" + name + "\"");
  return static_cast<std::size_t>(it - styles.begin());
}

namespace {

[[noreturn]] void schema(const std::string& what) {
  throw Error(ErrorKind::format, "manifest schema violation: " + what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) schema("missing \"" + std::string(key) + "\" in " + where);
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) schema("\"" + std::string(key) + "\" must be a string in " + where);
  return v.get<std::string>();
}

int require_int(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer()) schema("\"" + std::string(key) + "\" must be an integer in " + where);
  return v.get<int>();
}

fs::path resolve(const fs::path& base, const json& v, const char* key) {
  if (!v.is_string()) schema(std::string("matrices.") + key + " must be a path string");
  fs::path p = v.get<std::string>();
  if (p.is_relative()) p = base / p;
  if (!fs::exists(p))
    throw Error(ErrorKind::io, std::string("matrix file for ") + key + " not found: " + p.string());
  return p;
}

std::string relative_to(const fs::path& p, const fs::path& base) {
  std::error_code ec;
  const auto rel = fs::relative(p, base, ec);
  return (ec || rel.empty()) ? p.string() : rel.generic_string();
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "manifest not found: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::format, "manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_object()) schema("top level must be an object");

  Manifest m;
  m.model = require_string(doc, "model", "manifest");
  m.layer = require_int(doc, "layer", "manifest");

  const json& styles = require(doc, "styles", "manifest");
  if (!styles.is_array()) schema("\"styles\" must be an array");
  for (const auto& s : styles) {
    if (!s.is_string()) schema("style names must be strings");
    m.styles.push_back(s.get<std::string>());
  }
  if (m.styles.size() != kStyleCount)
    schema("expected exactly " + std::to_string(kStyleCount) + " styles, got " +
           std::to_string(m.styles.size()));
  if (std::set<std::string>(m.styles.begin(), m.styles.end()).size() != m.styles.size())
    schema("duplicate style names");

  const json& tokens = require(doc, "style_first_token_ids", "manifest");
  if (!tokens.is_object()) schema("\"style_first_token_ids\" must be an object");
  for (const auto& [name, _] : tokens.items())
    if (std::find(m.styles.begin(), m.styles.end(), name) == m.styles.end())
      throw Error(ErrorKind::format, "unknown style \"" + name + "\" in style_first_token_ids");
  std::map<int, std::vector<std::string>> by_token;
  for (const auto& s : m.styles) {
    const json& id = require(tokens, s.c_str(), "style_first_token_ids");
    if (!id.is_number_integer() || id.get<long long>() < 0)
      schema("token id for \"" + s + "\" must be a nonnegative integer");
    m.style_first_token_ids.push_back(id.get<int>());
    by_token[id.get<int>()].push_back(s);
  }
  for (const auto& [id, names] : by_token) {
    if (names.size() < 2) continue;
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    m.warnings.push_back("styles share first token " + std::to_string(id) + ": " + list);
  }

  const fs::path base = path.parent_path();
  const json& mats = require(doc, "matrices", "manifest");
  if (!mats.is_object()) schema("\"matrices\" must be an object");
  m.matrices.z = resolve(base, require(mats, "Z", "matrices"), "Z");
  if (mats.contains("H")) m.matrices.h = resolve(base, mats["H"], "H");
  if (mats.contains("W_tail")) m.matrices.w_tail = resolve(base, mats["W_tail"], "W_tail");
  if (mats.contains("b_tail")) m.matrices.b_tail = resolve(base, mats["b_tail"], "b_tail");
  if (m.matrices.w_tail.has_value() != m.matrices.b_tail.has_value())
    schema("W_tail and b_tail must be given together");

  const json& samples = require(doc, "samples", "manifest");
  if (!samples.is_array() || samples.empty()) schema("\"samples\" must be a non-empty array");

  std::unordered_set<std::string> seen;
  std::unordered_map<std::string, std::size_t> image_pos;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const json& js = samples[i];
    const std::string where = "samples[" + std::to_string(i) + "]";
    if (!js.is_object()) schema(where + " must be an object");
    SampleMeta s;
    s.sample_id = require_string(js, "sample_id", where);
    s.image_id = require_string(js, "image_id", where);
    const std::string gran = require_string(js, "granularity", where);
    if (gran == "patch") s.granularity = Granularity::patch;
    else if (gran == "full_image") s.granularity = Granularity::full_image;
    else schema(where + ".granularity must be \"patch\" or \"full_image\"");

    const bool has_row = js.contains("patch_row");
    const bool has_col = js.contains("patch_col");
    if (s.granularity == Granularity::patch) {
      if (!has_row || !has_col) schema(where + " is a patch but lacks patch_row/patch_col");
      s.patch_row = require_int(js, "patch_row", where);
      s.patch_col = require_int(js, "patch_col", where);
      if (*s.patch_row < 0 || *s.patch_row >= kGridSize || *s.patch_col < 0 ||
          *s.patch_col >= kGridSize)
        schema(where + " patch coordinates outside the 4x4 grid");
    } else if (has_row || has_col) {
      schema(where + " is a full image but carries patch coordinates");
    }

    s.true_style = m.style_index(require_string(js, "true_style", where));
    s.predicted_style = m.style_index(require_string(js, "predicted_style", where));

    if (!seen.insert(s.sample_id).second)
      throw Error(ErrorKind::format, "duplicate sample_id \"" + s.sample_id + "\"");
    if (i == 0) m.granularity = s.granularity;
    else if (s.granularity != m.granularity)
      schema("samples mix patch and full_image granularity");

    auto [it, inserted] = image_pos.try_emplace(s.image_id, m.image_ids.size());
    if (inserted) m.image_ids.push_back(s.image_id);
    m.sample_image.push_back(it->second);
    m.samples.push_back(std::move(s));
  }

  if (m.granularity == Granularity::patch) {
    std::vector<std::array<bool, kPatchesPerImage>> grid(m.image_ids.size());
    for (auto& g : grid) g.fill(false);
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
      const auto& s = m.samples[i];
      bool& slot = grid[m.sample_image[i]][*s.patch_row * kGridSize + *s.patch_col];
      if (slot)
        schema("image \"" + s.image_id + "\" has patch (" + std::to_string(*s.patch_row) +
               "," + std::to_string(*s.patch_col) + ") twice");
      slot = true;
    }
    for (std::size_t img = 0; img < grid.size(); ++img)
      if (!std::all_of(grid[img].begin(), grid[img].end(), [](bool b) { return b; }))
        schema("image \"" + m.image_ids[img] + "\" does not have all 16 patches");
  } else if (m.image_ids.size() != m.samples.size()) {
    schema("full_image samples must have distinct image ids");
  }
  return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  const fs::path base = path.parent_path();
  json doc;
  doc["model"] = m.model;
  doc["layer"] = m.layer;
  doc["styles"] = m.styles;
  json tokens = json::object();
  for (std::size_t s = 0; s < m.styles.size(); ++s)
    tokens[m.styles[s]] = m.style_first_token_ids.at(s);
  doc["style_first_token_ids"] = tokens;
  json mats;
  mats["Z"] = relative_to(m.matrices.z, base);
  if (m.matrices.h) mats["H"] = relative_to(*m.matrices.h, base);
  if (m.matrices.w_tail) mats["W_tail"] = relative_to(*m.matrices.w_tail, base);
  if (m.matrices.b_tail) mats["b_tail"] = relative_to(*m.matrices.b_tail, base);
  doc["matrices"] = mats;
  json samples = json::array();
  for (const auto& s : m.samples) {
    json js;
    js["sample_id"] = s.sample_id;
    js["image_id"] = s.image_id;
    js["granularity"] = to_string(s.granularity);
    if (s.patch_row) js["patch_row"] = *s.patch_row;
    if (s.patch_col) js["patch_col"] = *s.patch_col;
    js["true_style"] = m.styles.at(s.true_style);
    js["predicted_style"] = m.styles.at(s.predicted_style);
    samples.push_back(std::move(js));
  }
  doc["samples"] = std::move(samples);
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

ActivationSet load_activations(const Manifest& m) {
  ActivationSet set;
  set.z = load_matrix(m.matrices.z);
  if (static_cast<std::size_t>(set.z.cols()) != m.samples.size())
    throw Error(ErrorKind::format, "Z has " + std::to_string(set.z.cols()) +
                                       " columns but the manifest lists " +
                                       std::to_string(m.samples.size()) + " samples");
  if (!set.z.allFinite()) throw Error(ErrorKind::format, "Z contains non-finite entries");
  set.layer = m.layer;
  set.model_name = m.model;
  set.samples = m.samples;
  return set;
}

Matrix load_hidden_states(const Manifest& m) {
  if (!m.matrices.h) throw Error(ErrorKind::missing_artifact, "manifest has no H matrix");
  Matrix h = load_matrix(*m.matrices.h);
  if (static_cast<std::size_t>(h.cols()) != m.samples.size())
    throw Error(ErrorKind::format, "H column count does not match sample count");
  if (!h.allFinite()) throw Error(ErrorKind::format, "H contains non-finite entries");
  return h;
}

std::vector<std::size_t> samples_of_images(const Manifest& m,
                                           const std::vector<std::string>& images) {
  const std::unordered_set<std::string> wanted(images.begin(), images.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.samples.size(); ++i)
    if (wanted.count(m.samples[i].image_id)) out.push_back(i);
  return out;
}

}  // namespace conceptkit
