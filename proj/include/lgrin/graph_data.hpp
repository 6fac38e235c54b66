#pragma once

// Sequence samples as frame-to-node graphs: manifest/CSV ingestion and
// export, cyclic padding to a fixed node count, the synthetic sinusoid
// generator and stratified splits.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgrin/error.hpp"
#include "lgrin/tensor.hpp"

namespace lgrin {

namespace fs = std::filesystem;

struct SequenceSample {
  Tensor features;  // T×P, one row per frame
  std::size_t label = 0;
  std::string id;

  std::size_t frames() const { return features.shape().at(0); }
  std::size_t width() const { return features.shape().at(1); }
};

struct GraphDataset {
  std::vector<SequenceSample> samples;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::size_t target_length = 0;
  std::string name;

  std::size_t size() const noexcept { return samples.size(); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (const auto& s : samples) ++counts.at(s.label);
    return counts;
  }
};

/// Cyclic padding / truncation to exactly `target` frames: frame t of the
/// result is frame (t mod T) of the input for T ≤ target, and the first
/// `target` frames are kept otherwise.
inline SequenceSample pad_or_truncate(const SequenceSample& s, std::size_t target) {
  const std::size_t t = s.frames();
  if (t == 0) throw ContractError("sample '" + s.id + "' has no frames");
  if (t == target) return s;
  const std::size_t p = s.width();
  Tensor out(Shape{target, p});
  for (std::size_t i = 0; i < target; ++i) {
    const std::size_t src = i % t;
    for (std::size_t k = 0; k < p; ++k) out(i, k) = s.features(src, k);
  }
  return SequenceSample{std::move(out), s.label, s.id};
}

namespace detail {

inline Tensor read_feature_csv(const fs::path& path, std::size_t width) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open feature file " + path.string());
  std::vector<double> data;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t cells = 0;
    const char* cur = line.data();
    const char* end = line.data() + line.size();
    while (true) {
      while (cur < end && *cur == ' ') ++cur;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cur, end, v);
      if (ec != std::errc() || !std::isfinite(v)) {
        throw LoadError(path.string() + ":" + std::to_string(row) + ": non-numeric cell " +
                        std::to_string(cells + 1));
      }
      data.push_back(v);
      ++cells;
      cur = ptr;
      while (cur < end && *cur == ' ') ++cur;
      if (cur == end) break;
      if (*cur != ',') {
        throw LoadError(path.string() + ":" + std::to_string(row) + ": non-numeric cell " + std::to_string(cells));
      }
      ++cur;
    }
    if (cells != width) {
      throw LoadError(path.string() + ":" + std::to_string(row) + ": expected " + std::to_string(width) +
                      " values, found " + std::to_string(cells));
    }
  }
  if (data.empty()) throw LoadError(path.string() + ": no frames");
  const std::size_t frames = data.size() / width;
  return Tensor(Shape{frames, width}, std::move(data));
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Manifest JSON: {name, num_classes, feature_dim, target_length,
/// samples: [{features: <csv path relative to manifest>, label, id}]}.
inline GraphDataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("manifest not found: " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(manifest_path.string() + ": " + e.what());
  }
  GraphDataset ds;
  try {
    ds.name = j.at("name").get<std::string>();
    ds.num_classes = j.at("num_classes").get<std::size_t>();
    ds.feature_dim = j.at("feature_dim").get<std::size_t>();
    ds.target_length = j.at("target_length").get<std::size_t>();
    const auto& samples = j.at("samples");
    if (!samples.is_array()) throw LoadError(manifest_path.string() + ": samples must be an array");
    if (samples.empty()) throw LoadError(manifest_path.string() + ": empty dataset");
    if (ds.feature_dim == 0 || ds.num_classes == 0 || ds.target_length == 0) {
      throw LoadError(manifest_path.string() + ": num_classes, feature_dim and target_length must be positive");
    }
    const fs::path base = manifest_path.parent_path();
    std::size_t index = 0;
    for (const auto& s : samples) {
      const fs::path csv = base / s.at("features").get<std::string>();
      const auto label = s.at("label").get<std::size_t>();
      if (label >= ds.num_classes) {
        throw LoadError(manifest_path.string() + ": sample " + std::to_string(index) + " (" + csv.string() +
                        ") has label " + std::to_string(label) + " >= num_classes " +
                        std::to_string(ds.num_classes));
      }
      std::string id = s.contains("id") ? s.at("id").get<std::string>() : csv.stem().string();
      ds.samples.push_back(SequenceSample{detail::read_feature_csv(csv, ds.feature_dim), label, std::move(id)});
      ++index;
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(manifest_path.string() + ": " + e.what());
  }
  return ds;
}

/// Writes `dir/manifest.json` and one CSV per sample under `dir/features/`.
inline fs::path write_dataset(const GraphDataset& ds, const fs::path& dir, bool force = false) {
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest) && !force) {
    throw ConfigError(manifest.string() + " already exists (use --force to overwrite)");
  }
  fs::create_directories(dir / "features");
  nlohmann::json j;
  j["name"] = ds.name;
  j["num_classes"] = ds.num_classes;
  j["feature_dim"] = ds.feature_dim;
  j["target_length"] = ds.target_length;
  j["samples"] = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    const std::string rel = "features/" + s.id + ".csv";
    std::ofstream out(dir / rel, std::ios::binary);
    if (!out) throw LoadError("cannot write " + (dir / rel).string());
    for (std::size_t t = 0; t < s.frames(); ++t) {
      for (std::size_t k = 0; k < s.width(); ++k) {
        if (k) out << ',';
        out << detail::format_double(s.features(t, k));
      }
      out << '\n';
    }
    j["samples"].push_back({{"features", rel}, {"label", s.label}, {"id", s.id}});
  }
  std::ofstream out(manifest, std::ios::binary);
  out << j.dump(2) << '\n';
  return manifest;
}

struct SynthSpec {
  std::size_t classes = 4;
  std::size_t per_class = 50;
  std::size_t nodes = 32;     // frames per sample (M)
  std::size_t features = 8;   // P
  double noise = 0.0;         // σ_n
  std::uint64_t seed = 0;
};

/// Multi-channel sinusoids: feature j of frame t in class c is
/// sin(2π (c+1) t / M + φ[c][j]) + N(0, σ_n²). Phases depend only on the seed;
/// each sample's noise stream depends on (seed, class, index) alone.
inline GraphDataset synth_generate(const SynthSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (spec.features < 2) throw ConfigError("synthetic data needs at least 2 features per frame");
  if (spec.nodes < 1 || spec.per_class < 1) throw ConfigError("synthetic node count and per-class count must be >= 1");
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise)) throw ConfigError("noise must be finite and >= 0");

  std::mt19937_64 phase_rng(spec.seed);
  std::uniform_real_distribution<double> uniform_phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> phase(spec.classes * spec.features);
  for (double& ph : phase) ph = uniform_phase(phase_rng);

  GraphDataset ds;
  ds.name = "synth";
  ds.num_classes = spec.classes;
  ds.feature_dim = spec.features;
  ds.target_length = spec.nodes;
  ds.samples.reserve(spec.classes * spec.per_class);
  const double m = static_cast<double>(spec.nodes);
  for (std::size_t i = 0; i < spec.per_class; ++i) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                        static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(i)};
      std::mt19937_64 noise_rng(seq);
      std::normal_distribution<double> normal(0.0, 1.0);
      const double freq = static_cast<double>(c + 1);
      Tensor f(Shape{spec.nodes, spec.features});
      for (std::size_t t = 0; t < spec.nodes; ++t)
        for (std::size_t j = 0; j < spec.features; ++j) {
          const double clean =
              std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(t) / m + phase[c * spec.features + j]);
          f(t, j) = spec.noise > 0.0 ? clean + spec.noise * normal(noise_rng) : clean;
        }
      char id[48];
      std::snprintf(id, sizeof id, "c%zu_%05zu", c, i);
      ds.samples.push_back(SequenceSample{std::move(f), c, id});
    }
  }
  return ds;
}

/// Phase φ[c][j] used by `synth_generate` for the given seed.
inline double synth_phase(const SynthSpec& spec, std::size_t c, std::size_t j) {
  std::mt19937_64 phase_rng(spec.seed);
  std::uniform_real_distribution<double> uniform_phase(0.0, 2.0 * std::numbers::pi);
  double ph = 0.0;
  for (std::size_t k = 0; k <= c * spec.features + j; ++k) ph = uniform_phase(phase_rng);
  return ph;
}

inline GraphDataset subset(const GraphDataset& ds, const std::vector<std::size_t>& indices) {
  GraphDataset out{{}, ds.num_classes, ds.feature_dim, ds.target_length, ds.name};
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(ds.samples.at(i));
  return out;
}

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> shuffled_by_class(const GraphDataset& ds, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.samples[i].label).push_back(i);
  std::mt19937_64 rng(seed);
  for (auto& idx : by_class) std::shuffle(idx.begin(), idx.end(), rng);
  return by_class;
}

}  // namespace detail

/// Stratified k-fold partition. Samples are dealt class by class onto folds
/// round-robin, so each fold gets ⌊n/k⌋ or ⌈n/k⌉ samples and every class is
/// spread evenly.
inline std::vector<Fold> cv_split(const GraphDataset& ds, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("cross-validation needs k >= 2");
  if (k > ds.size()) throw ConfigError("k = " + std::to_string(k) + " exceeds dataset size " + std::to_string(ds.size()));
  const auto counts = ds.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0 && counts[c] < k) {
      throw ConfigError("split error: class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                        " samples, fewer than k = " + std::to_string(k));
    }
  }
  std::vector<std::vector<std::size_t>> test(k);
  std::size_t position = 0;
  for (const auto& idx : detail::shuffled_by_class(ds, seed))
    for (std::size_t i : idx) test[position++ % k].push_back(i);
  std::vector<Fold> folds(k);
  for (std::size_t f = 0; f < k; ++f) {
    std::sort(test[f].begin(), test[f].end());
    folds[f].test = test[f];
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) folds[f].train.insert(folds[f].train.end(), test[g].begin(), test[g].end());
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

/// Stratified hold-out: round(n_c · test_fraction) samples of each class go
/// to the test side.
inline Fold holdout_split(const GraphDataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
  Fold split;
  for (const auto& idx : detail::shuffled_by_class(ds, seed)) {
    const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * test_fraction));
    split.test.insert(split.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

}  // namespace lgrin
