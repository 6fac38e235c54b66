#pragma once

// Whole networks: the learnable graph inception model and the baseline GCN,
// their parameter registries, forward passes and inspection helpers.
//
// Parameters live in a flat, ordered registry of named tensors. A forward
// pass binds the registry onto a tape (`ForwardPass`), after which any number
// of samples can be pushed through against the same bound adjacency.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgrin/adjacency.hpp"
#include "lgrin/error.hpp"
#include "lgrin/graph_data.hpp"
#include "lgrin/layers.hpp"
#include "lgrin/tensor.hpp"

namespace lgrin {

enum class AdjacencyMode { learnable, binary, weighted };
enum class Architecture { lgrin, gcn_baseline };

NLOHMANN_JSON_SERIALIZE_ENUM(AdjacencyMode, {{AdjacencyMode::learnable, "learnable"},
                                             {AdjacencyMode::binary, "binary"},
                                             {AdjacencyMode::weighted, "weighted"}})
NLOHMANN_JSON_SERIALIZE_ENUM(PoolingMode, {{PoolingMode::learnable_full, "learnable_full"},
                                           {PoolingMode::max, "max"},
                                           {PoolingMode::mean, "mean"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Architecture, {{Architecture::lgrin, "lgrin"}, {Architecture::gcn_baseline, "gcn_baseline"}})

/// (η₁, η₂): MLP widths of the two G*conv branches in one inception layer.
struct BranchWidths {
  std::size_t first = 128;
  std::size_t second = 64;

  friend bool operator==(const BranchWidths&, const BranchWidths&) = default;
};

struct ModelConfig {
  Architecture architecture = Architecture::lgrin;
  std::size_t nodes = 90;         // M
  std::size_t feature_dim = 136;  // P
  std::size_t num_classes = 6;    // C
  std::size_t inception_layers = 2;
  std::vector<BranchWidths> etas{BranchWidths{}};  // one entry applies to every layer
  AdjacencyMode adjacency_mode = AdjacencyMode::learnable;
  PoolingMode pooling_mode = PoolingMode::learnable_full;
  double mask_threshold = 0.0;
  std::size_t gcn_width = 64;  // baseline hidden width
  std::uint64_t seed = 0;

  /// Facial-landmark setting: 90 frames of 68 (x, y) landmarks, 6 emotions.
  static ModelConfig facial() { return ModelConfig{}; }

  /// Desk-scale default: 32 frames of 4 features, 4 classes, default widths.
  static ModelConfig small() {
    ModelConfig c;
    c.nodes = 32;
    c.feature_dim = 4;
    c.num_classes = 4;
    return c;
  }

  /// Tiny single-layer model for finite-difference checks.
  static ModelConfig gradcheck() {
    ModelConfig c;
    c.nodes = 6;
    c.feature_dim = 5;
    c.num_classes = 3;
    c.inception_layers = 1;
    c.etas = {BranchWidths{8, 4}};
    return c;
  }

  BranchWidths eta(std::size_t layer) const { return etas.size() == 1 ? etas.front() : etas.at(layer); }

  void validate() const {
    if (nodes < 1) throw ConfigError("nodes must be >= 1");
    if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (architecture == Architecture::gcn_baseline) {
      if (gcn_width < 1) throw ConfigError("gcn_width must be >= 1");
      return;
    }
    if (inception_layers < 1) throw ConfigError("inception_layers must be >= 1");
    if (etas.empty()) throw ConfigError("etas must not be empty");
    if (etas.size() != 1 && etas.size() != inception_layers) {
      throw ConfigError("etas lists " + std::to_string(etas.size()) + " entries for " +
                        std::to_string(inception_layers) + " inception layers");
    }
    for (const auto& e : etas)
      if (e.first < 1 || e.second < 1) throw ConfigError("eta values must be >= 1");
    if (adjacency_mode == AdjacencyMode::learnable && nodes < 2) {
      throw ConfigError("learnable adjacency needs at least 2 nodes");
    }
    if (!(mask_threshold >= 0.0)) throw ConfigError("mask_threshold must be >= 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const BranchWidths& e) { j = nlohmann::json::array({e.first, e.second}); }
inline void from_json(const nlohmann::json& j, BranchWidths& e) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("eta entry must be a pair [eta1, eta2]");
  e.first = j[0].get<std::size_t>();
  e.second = j[1].get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"architecture", c.architecture},
                     {"M", c.nodes},
                     {"P", c.feature_dim},
                     {"C", c.num_classes},
                     {"inception_layers", c.inception_layers},
                     {"etas", c.etas},
                     {"adjacency_mode", c.adjacency_mode},
                     {"pooling_mode", c.pooling_mode},
                     {"mask_threshold", c.mask_threshold},
                     {"gcn_width", c.gcn_width},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::vector<std::string> known{"architecture", "M", "P", "C", "inception_layers", "etas",
                                              "adjacency_mode", "pooling_mode", "mask_threshold", "gcn_width", "seed"};
  if (!j.is_object()) throw ConfigError("model section must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown model key '" + key + "'");
  // unknown enum strings would silently map to the first enumerator
  auto enum_field = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    out = v.template get<std::decay_t<decltype(out)>>();
    if (nlohmann::json(out) != v) throw ConfigError(std::string("invalid ") + key + " " + v.dump());
  };
  enum_field("architecture", c.architecture);
  enum_field("adjacency_mode", c.adjacency_mode);
  enum_field("pooling_mode", c.pooling_mode);
  if (j.contains("M")) c.nodes = j.at("M").get<std::size_t>();
  if (j.contains("P")) c.feature_dim = j.at("P").get<std::size_t>();
  if (j.contains("C")) c.num_classes = j.at("C").get<std::size_t>();
  if (j.contains("inception_layers")) c.inception_layers = j.at("inception_layers").get<std::size_t>();
  if (j.contains("etas")) c.etas = j.at("etas").get<std::vector<BranchWidths>>();
  if (j.contains("mask_threshold")) c.mask_threshold = j.at("mask_threshold").get<double>();
  if (j.contains("gcn_width")) c.gcn_width = j.at("gcn_width").get<std::size_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
}

/// Width of the node embeddings entering inception layer `layer`
/// (layer == inception_layers gives the final width Q).
inline std::size_t layer_input_width(const ModelConfig& c, std::size_t layer) {
  std::size_t width = c.feature_dim;
  for (std::size_t k = 0; k < layer; ++k) width += c.eta(k).first + c.eta(k).second;
  return width;
}

/// Width of the pooled graph embedding fed to the classifier head.
inline std::size_t head_input_width(const ModelConfig& c) {
  if (c.architecture == Architecture::gcn_baseline) return 2 * c.gcn_width;
  const std::size_t q = layer_input_width(c, c.inception_layers);
  return c.pooling_mode == PoolingMode::learnable_full ? 3 * q : q;
}

/// Parameter count from the architecture alone, without building anything:
/// per branch F_in·η + η + η² + η, plus M² for a learned adjacency, M for the
/// pooling vector, and D_h·C + C for the head.
inline std::size_t closed_form_parameter_count(const ModelConfig& c) {
  const std::size_t head = head_input_width(c) * c.num_classes + c.num_classes;
  if (c.architecture == Architecture::gcn_baseline) {
    return c.feature_dim * c.gcn_width + c.gcn_width * c.gcn_width + head;
  }
  std::size_t total = head;
  for (std::size_t k = 0; k < c.inception_layers; ++k) {
    const std::size_t f_in = layer_input_width(c, k);
    for (std::size_t eta : {c.eta(k).first, c.eta(k).second}) total += f_in * eta + eta + eta * eta + eta;
  }
  if (c.adjacency_mode == AdjacencyMode::learnable) total += c.nodes * c.nodes;
  if (c.pooling_mode == PoolingMode::learnable_full) total += c.nodes;
  return total;
}

struct Parameter {
  std::string name;
  Tensor value;

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

struct Model {
  ModelConfig config;
  std::vector<Parameter> parameters;

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < parameters.size(); ++i)
      if (parameters[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t index_of(const std::string& name) const {
    if (auto i = find(name)) return *i;
    throw ContractError("no parameter named '" + name + "'");
  }

  const Tensor& operator[](const std::string& name) const { return parameters[index_of(name)].value; }
  Tensor& operator[](const std::string& name) { return parameters[index_of(name)].value; }
};

inline std::size_t parameter_count(const Model& model) {
  std::size_t n = 0;
  for (const auto& p : model.parameters) n += p.value.size();
  return n;
}

inline std::string branch_prefix(std::size_t layer, int branch) {
  return "inception" + std::to_string(layer) + ".g" + std::to_string(branch) + ".";
}

namespace detail {

inline Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w(Shape{fan_in, fan_out});
  for (double& v : w.values()) v = dist(rng);
  return w;
}

inline std::uint64_t adjacency_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ULL; }

inline void add_head(Model& m, std::mt19937_64& rng) {
  const std::size_t d = head_input_width(m.config);
  m.parameters.push_back({"head.w", xavier_uniform(d, m.config.num_classes, rng)});
  m.parameters.push_back({"head.b", Tensor(Shape{m.config.num_classes})});
}

}  // namespace detail

/// Xavier-uniform weights, zero biases, N(0, 1) raw adjacency and a uniform
/// 1/M pooling vector, all drawn from `config.seed`.
inline Model build_lgrin(ModelConfig config) {
  config.architecture = Architecture::lgrin;
  config.validate();
  Model m{config, {}};
  std::mt19937_64 rng(config.seed);
  for (std::size_t k = 0; k < config.inception_layers; ++k) {
    const std::size_t f_in = layer_input_width(config, k);
    int branch = 1;
    for (std::size_t eta : {config.eta(k).first, config.eta(k).second}) {
      const std::string pre = branch_prefix(k, branch++);
      m.parameters.push_back({pre + "w1", detail::xavier_uniform(f_in, eta, rng)});
      m.parameters.push_back({pre + "b1", Tensor(Shape{eta})});
      m.parameters.push_back({pre + "w2", detail::xavier_uniform(eta, eta, rng)});
      m.parameters.push_back({pre + "b2", Tensor(Shape{eta})});
    }
  }
  if (config.adjacency_mode == AdjacencyMode::learnable) {
    m.parameters.push_back(
        {"adjacency.raw", init_learnable_adjacency(config.nodes, detail::adjacency_seed(config.seed)).raw});
  }
  if (config.pooling_mode == PoolingMode::learnable_full) {
    m.parameters.push_back({"pooling.p", Tensor(Shape{config.nodes}, 1.0 / static_cast<double>(config.nodes))});
  }
  detail::add_head(m, rng);
  return m;
}

/// Two renormalised GCN layers over the binary path graph, [max | mean]
/// readout and a linear head.
inline Model build_baseline_gcn(ModelConfig config) {
  config.architecture = Architecture::gcn_baseline;
  config.validate();
  Model m{config, {}};
  std::mt19937_64 rng(config.seed);
  m.parameters.push_back({"gcn0.w", detail::xavier_uniform(config.feature_dim, config.gcn_width, rng)});
  m.parameters.push_back({"gcn1.w", detail::xavier_uniform(config.gcn_width, config.gcn_width, rng)});
  detail::add_head(m, rng);
  return m;
}

inline Model build_model(const ModelConfig& config) {
  return config.architecture == Architecture::gcn_baseline ? build_baseline_gcn(config) : build_lgrin(config);
}

/// A model's parameters bound onto one tape. Parameters flagged trainable
/// become gradient leaves keyed by registry index; the rest are constants.
class ForwardPass {
 public:
  ForwardPass(const Model& model, Tape& tape, const std::vector<bool>& trainable = {})
      : model_(&model), tape_(&tape) {
    const auto& params = model.parameters;
    if (!trainable.empty() && trainable.size() != params.size()) {
      throw ContractError("trainable mask covers " + std::to_string(trainable.size()) + " of " +
                          std::to_string(params.size()) + " parameters");
    }
    bound_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const bool train = trainable.empty() || trainable[i];
      bound_.push_back(train ? tape.parameter(params[i].value, i) : tape.constant(params[i].value));
    }
    const ModelConfig& c = model.config;
    if (c.architecture == Architecture::gcn_baseline) {
      adjacency_ = tape.constant(renormalized_adjacency(binary_adjacency(c.nodes)));
      return;
    }
    for (std::size_t k = 0; k < c.inception_layers; ++k) {
      InceptionBinding b;
      b.branch1 = bind_mlp(branch_prefix(k, 1));
      b.branch2 = bind_mlp(branch_prefix(k, 2));
      layers_.push_back(b);
    }
    if (c.adjacency_mode == AdjacencyMode::learnable) {
      adjacency_ = effective_adjacency(bound("adjacency.raw"));
    } else if (c.adjacency_mode == AdjacencyMode::binary) {
      adjacency_ = tape.constant(binary_adjacency(c.nodes));
    }
    if (adjacency_) mask_ = neighbor_mask(adjacency_->value(), c.mask_threshold);
    if (c.pooling_mode == PoolingMode::learnable_full) pooling_ = bound("pooling.p");
  }

  const Model& model() const { return *model_; }
  Tape& tape() const { return *tape_; }
  const std::vector<Var>& parameters() const { return bound_; }

  /// Effective learned adjacency (learnable mode only).
  std::optional<Var> learned_adjacency() const {
    if (model_->config.adjacency_mode != AdjacencyMode::learnable ||
        model_->config.architecture != Architecture::lgrin) {
      return std::nullopt;
    }
    return adjacency_;
  }
  std::optional<Var> pooling_weights() const { return pooling_; }

  /// Final node embeddings H^(K) for an M×P feature matrix.
  Var node_embeddings(const Tensor& features) const {
    const ModelConfig& c = model_->config;
    if (features.rank() != 2 || features.shape()[0] != c.nodes || features.shape()[1] != c.feature_dim) {
      throw ShapeError("model expects features [" + std::to_string(c.nodes) + "x" + std::to_string(c.feature_dim) +
                       "], got " + shape_string(features.shape()));
    }
    Var h = tape_->constant(features);
    if (c.architecture == Architecture::gcn_baseline) {
      h = gcn_layer(h, *adjacency_, bound("gcn0.w"));
      return gcn_layer(h, *adjacency_, bound("gcn1.w"));
    }
    Var adjacency = adjacency_ ? *adjacency_ : tape_->constant(weighted_adjacency(features));
    const NeighborMask mask = adjacency_ ? mask_ : neighbor_mask(adjacency.value(), c.mask_threshold);
    for (const auto& layer : layers_) h = inception_layer(h, adjacency, layer, mask);
    return h;
  }

  Var graph_embedding(Var node_embeddings) const {
    if (model_->config.architecture == Architecture::gcn_baseline) {
      return concat_features({readout(node_embeddings, ReadoutMode::max), readout(node_embeddings, ReadoutMode::mean)});
    }
    return pooling_layer(node_embeddings, pooling_, model_->config.pooling_mode);
  }

  Var logits(const Tensor& features) const {
    Var g = graph_embedding(node_embeddings(features));
    const std::size_t d = g.shape()[0];
    Var row = matmul(reshape(g, Shape{1, d}), bound("head.w"));
    return add(reshape(row, Shape{model_->config.num_classes}), bound("head.b"));
  }

 private:
  Var bound(const std::string& name) const { return bound_[model_->index_of(name)]; }

  MlpBinding bind_mlp(const std::string& prefix) const {
    return MlpBinding{bound(prefix + "w1"), bound(prefix + "b1"), bound(prefix + "w2"), bound(prefix + "b2")};
  }

  const Model* model_;
  Tape* tape_;
  std::vector<Var> bound_;
  std::vector<InceptionBinding> layers_;
  std::optional<Var> adjacency_;
  std::optional<Var> pooling_;
  NeighborMask mask_;
};

/// Logits for one sample already padded to M frames.
inline Tensor forward(const Model& model, const SequenceSample& sample) {
  Tape tape;
  ForwardPass pass(model, tape, std::vector<bool>(model.parameters.size(), false));
  return pass.logits(sample.features).value();
}

/// Node whose row wins the most columns of the max readout over H (first
/// index on ties, both within a column and in the plurality count).
inline std::size_t salient_node(const Tensor& node_embeddings) {
  const std::size_t m = node_embeddings.shape().at(0), q = node_embeddings.shape().at(1);
  std::vector<std::size_t> wins(m, 0);
  for (std::size_t k = 0; k < q; ++k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < m; ++i)
      if (node_embeddings(i, k) > node_embeddings(best, k)) best = i;
    ++wins[best];
  }
  std::size_t node = 0;
  for (std::size_t i = 1; i < m; ++i)
    if (wins[i] > wins[node]) node = i;
  return node;
}

inline Tensor node_embeddings(const Model& model, const SequenceSample& sample) {
  Tape tape;
  ForwardPass pass(model, tape, std::vector<bool>(model.parameters.size(), false));
  return pass.node_embeddings(sample.features).value();
}

inline std::size_t salient_node(const Model& model, const SequenceSample& sample) {
  if (model.config.architecture == Architecture::lgrin && model.config.pooling_mode == PoolingMode::mean) {
    throw ConfigError("salient node needs a max readout; pooling_mode is mean");
  }
  return salient_node(node_embeddings(model, sample));
}

}  // namespace lgrin
