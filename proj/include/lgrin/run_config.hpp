#pragma once

// Run configuration files for the command-line front end.
//
//   {
//     "model":  { ModelConfig fields; M, P and C default to the dataset's },
//     "train":  { TrainConfig fields },
//     "data":   { "manifest": path | "synth": {classes, per_class, M, P, noise, seed},
//                 "test_manifest": path, "test_fraction": x, "cv_folds": k, "split_seed": s },
//     "output": directory
//   }
//
// Unknown keys are rejected at every level. Relative paths resolve against
// the directory holding the config file.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgrin/error.hpp"
#include "lgrin/graph_data.hpp"
#include "lgrin/model.hpp"
#include "lgrin/training.hpp"

namespace lgrin {

struct DataSection {
  std::optional<fs::path> manifest;
  std::optional<SynthSpec> synth;
  std::optional<fs::path> test_manifest;
  double test_fraction = 0.0;  // > 0: stratified hold-out from the training data
  std::size_t cv_folds = 0;    // > 0: also report k-fold cross-validation
  std::uint64_t split_seed = 0;
};

struct RunConfig {
  nlohmann::json model_json = nlohmann::json::object();
  TrainConfig train;
  DataSection data;
  fs::path output = "lgrin_out";
  nlohmann::json source;  // the document as parsed, after overrides

  /// Model config with M, P and C filled from `ds` where the file leaves
  /// them out; explicit values must agree with the dataset.
  ModelConfig model_for(const GraphDataset& ds) const {
    nlohmann::json j = model_json;
    auto settle = [&](const char* key, std::size_t from_data) {
      if (!j.contains(key)) {
        j[key] = from_data;
      } else if (j[key].get<std::size_t>() != from_data) {
        throw ConfigError(std::string("model.") + key + " = " + j[key].dump() + " but the dataset has " +
                          std::to_string(from_data));
      }
    };
    settle("M", ds.target_length);
    settle("P", ds.feature_dim);
    settle("C", ds.num_classes);
    ModelConfig c = j.get<ModelConfig>();
    c.validate();
    return c;
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

inline SynthSpec parse_synth(const nlohmann::json& j) {
  reject_unknown(j, {"classes", "per_class", "M", "P", "noise", "seed"}, "data.synth");
  SynthSpec s;
  s.classes = j.value("classes", s.classes);
  s.per_class = j.value("per_class", s.per_class);
  s.nodes = j.value("M", s.nodes);
  s.features = j.value("P", s.features);
  s.noise = j.value("noise", s.noise);
  s.seed = j.value("seed", s.seed);
  return s;
}

}  // namespace detail

/// Apply `section.key=value` to a config document. The value is read as JSON
/// when it parses, otherwise as a string.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json::json_pointer ptr("/" + [&] {
    std::string p = path;
    for (char& ch : p)
      if (ch == '.') ch = '/';
    return p;
  }());
  doc[ptr] = value;
}

inline RunConfig parse_run_config(nlohmann::json doc, const fs::path& base_dir = {}) {
  detail::reject_unknown(doc, {"model", "train", "data", "output"}, "config");
  RunConfig rc;
  rc.source = doc;
  auto resolve = [&base_dir](const std::string& p) {
    fs::path path(p);
    return path.is_relative() ? base_dir / path : path;
  };
  try {
    if (doc.contains("model")) {
      rc.model_json = doc["model"];
      (void)rc.model_json.get<ModelConfig>();  // key and enum validation
    }
    if (doc.contains("train")) rc.train = doc["train"].get<TrainConfig>();
    if (!doc.contains("data")) throw ConfigError("missing required section 'data'");
    const auto& d = doc["data"];
    detail::reject_unknown(d, {"manifest", "synth", "test_manifest", "test_fraction", "cv_folds", "split_seed"},
                           "data");
    if (d.contains("manifest")) rc.data.manifest = resolve(d["manifest"].get<std::string>());
    if (d.contains("synth")) rc.data.synth = detail::parse_synth(d["synth"]);
    if (rc.data.manifest.has_value() == rc.data.synth.has_value()) {
      throw ConfigError("data needs exactly one of 'manifest' or 'synth'");
    }
    if (d.contains("test_manifest")) rc.data.test_manifest = resolve(d["test_manifest"].get<std::string>());
    rc.data.test_fraction = d.value("test_fraction", 0.0);
    rc.data.cv_folds = d.value("cv_folds", std::size_t{0});
    rc.data.split_seed = d.value("split_seed", std::uint64_t{0});
    if (rc.data.test_manifest && rc.data.test_fraction > 0.0) {
      throw ConfigError("data.test_manifest and data.test_fraction are mutually exclusive");
    }
    if (doc.contains("output")) rc.output = resolve(doc["output"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(e.what());
  }
  rc.train.validate();
  return rc;
}

inline RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config not found: " + path.string());
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  try {
    for (const auto& o : overrides) apply_override(doc, o);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(std::move(doc), path.parent_path());
}

/// Training data plus the optional held-out set the config asks for.
struct ResolvedData {
  GraphDataset train;
  std::optional<GraphDataset> test;
};

inline ResolvedData resolve_data(const DataSection& d) {
  GraphDataset all = d.manifest ? load_dataset(*d.manifest) : synth_generate(*d.synth);
  ResolvedData out;
  if (d.test_fraction > 0.0) {
    const Fold split = holdout_split(all, d.test_fraction, d.split_seed);
    out.train = subset(all, split.train);
    out.test = subset(all, split.test);
  } else {
    out.train = std::move(all);
    if (d.test_manifest) out.test = load_dataset(*d.test_manifest);
  }
  return out;
}

}  // namespace lgrin
