#pragma once

// Optimisation and evaluation: step-decay schedule, Adam, the minibatch
// training loop, unweighted accuracy, finite-difference gradient checking,
// classifier-head fine-tuning and k-fold cross-validation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgrin/adjacency.hpp"
#include "lgrin/error.hpp"
#include "lgrin/graph_data.hpp"
#include "lgrin/model.hpp"
#include "lgrin/objective.hpp"
#include "lgrin/tensor.hpp"

namespace lgrin {

struct TrainConfig {
  double lr0 = 0.01;
  double decay = 0.5;
  std::size_t decay_every = 50;
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  LossWeights loss_weights{};
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("decay must lie in (0, 1]");
    if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be > 0");
    loss_weights.validate();
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr0", c.lr0},
                     {"decay", c.decay},
                     {"decay_every", c.decay_every},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lambda1", c.loss_weights.lambda1},
                     {"lambda2", c.loss_weights.lambda2},
                     {"lambda3", c.loss_weights.lambda3},
                     {"seed", c.seed},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"epsilon", c.epsilon}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::vector<std::string> known{"lr0",     "decay",   "decay_every", "epochs", "batch_size", "lambda1",
                                              "lambda2", "lambda3", "seed",        "beta1",  "beta2",      "epsilon"};
  if (!j.is_object()) throw ConfigError("train section must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown train key '" + key + "'");
  auto field = [&j](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  field("lr0", c.lr0);
  field("decay", c.decay);
  field("decay_every", c.decay_every);
  field("epochs", c.epochs);
  field("batch_size", c.batch_size);
  field("lambda1", c.loss_weights.lambda1);
  field("lambda2", c.loss_weights.lambda2);
  field("lambda3", c.loss_weights.lambda3);
  field("seed", c.seed);
  field("beta1", c.beta1);
  field("beta2", c.beta2);
  field("epsilon", c.epsilon);
}

/// lr0 · decay^⌊epoch / decay_every⌋.
inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr0 * std::pow(cfg.decay, static_cast<double>(epoch / cfg.decay_every));
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::size_t step = 0;
};

using GradientMap = std::map<std::size_t, Tensor>;

/// One bias-corrected Adam update over the registry. Entries flagged false in
/// `trainable` are skipped and never read from `grads`.
inline void adam_step(std::vector<Parameter>& params, const GradientMap& grads, AdamState& state, double lr,
                      const TrainConfig& cfg, const std::vector<bool>& trainable = {}) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value.shape());
      state.second_moment.emplace_back(p.value.shape());
    }
  }
  if (state.first_moment.size() != params.size()) throw ContractError("adam state does not match the registry");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable.empty() && !trainable[i]) continue;
    auto it = grads.find(i);
    if (it == grads.end()) throw ContractError("missing gradient for '" + params[i].name + "'");
    const Tensor& g = it->second;
    Tensor& value = params[i].value;
    if (g.shape() != value.shape()) {
      throw ShapeError("gradient for '" + params[i].name + "' has shape " + shape_string(g.shape()));
    }
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      value[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  double unweighted_accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t correct = 0;
  std::size_t total = 0;
};

/// Index of the largest logit, lowest index on ties.
inline std::size_t predict(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

inline Evaluation evaluate_predictions(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                                       std::size_t num_classes) {
  if (predicted.size() != labels.size()) throw ContractError("prediction and label counts differ");
  Evaluation e;
  e.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || predicted[i] >= num_classes) throw IndexError("class index out of range");
    ++e.confusion[labels[i]][predicted[i]];
    if (labels[i] == predicted[i]) ++e.correct;
  }
  e.total = labels.size();
  e.unweighted_accuracy = e.total ? static_cast<double>(e.correct) / static_cast<double>(e.total) : 0.0;
  return e;
}

/// Forward passes share one bound adjacency per chunk of this many samples.
inline constexpr std::size_t kEvalChunk = 16;

/// Unweighted accuracy: correct / total over all samples, regardless of class.
inline Evaluation evaluate(const Model& model, std::span<const SequenceSample> samples) {
  const std::size_t m = model.config.nodes;
  std::vector<std::size_t> predicted, labels;
  const std::vector<bool> frozen(model.parameters.size(), false);
  for (std::size_t start = 0; start < samples.size(); start += kEvalChunk) {
    Tape tape;
    ForwardPass pass(model, tape, frozen);
    const std::size_t end = std::min(samples.size(), start + kEvalChunk);
    for (std::size_t i = start; i < end; ++i) {
      const SequenceSample padded = pad_or_truncate(samples[i], m);
      predicted.push_back(predict(pass.logits(padded.features).value()));
      labels.push_back(samples[i].label);
    }
  }
  return evaluate_predictions(predicted, labels, model.config.num_classes);
}

inline Evaluation evaluate(const Model& model, const GraphDataset& ds) { return evaluate(model, ds.samples); }

// ---------------------------------------------------------------------------
// Training loop

struct TrainReport {
  std::vector<double> loss;      // per epoch: Σ step total losses / samples
  std::vector<double> accuracy;  // per epoch: running accuracy of the training forwards
  double final_train_accuracy = 0.0;
  std::optional<double> final_test_accuracy;
  std::size_t optimizer_steps = 0;
  double wall_clock_seconds = 0.0;
  std::uint64_t seed = 0;
  nlohmann::json config;
};

inline void to_json(nlohmann::json& j, const TrainReport& r) {
  j = nlohmann::json{{"loss", r.loss},
                     {"accuracy", r.accuracy},
                     {"final_train_accuracy", r.final_train_accuracy},
                     {"optimizer_steps", r.optimizer_steps},
                     {"wall_clock_seconds", r.wall_clock_seconds},
                     {"seed", r.seed},
                     {"config", r.config}};
  j["final_test_accuracy"] = r.final_test_accuracy ? nlohmann::json(*r.final_test_accuracy) : nlohmann::json(nullptr);
}

struct TrainOptions {
  std::vector<bool> trainable;                  // empty: everything trains
  const GraphDataset* test = nullptr;           // scored once at the end
  std::function<void(std::size_t epoch, const Model&)> on_epoch_end;
};

/// Loss of one minibatch bound on `tape`: Σ cross-entropy + graph learning term.
struct BatchLoss {
  Var total;
  std::vector<std::size_t> predicted;
};

inline BatchLoss batch_loss(const ForwardPass& pass, std::span<const SequenceSample* const> batch,
                            const StructureMatrix& structure, const LossWeights& weights) {
  std::vector<Var> logits;
  std::vector<std::size_t> labels;
  BatchLoss out;
  for (const SequenceSample* s : batch) {
    logits.push_back(pass.logits(s->features));
    labels.push_back(s->label);
    out.predicted.push_back(predict(logits.back().value()));
  }
  Var cls = classification_loss(logits, labels);
  Var gl = graph_learning_loss(pass.learned_adjacency(), structure, pass.pooling_weights(), weights, pass.tape());
  out.total = total_loss(cls, gl);
  return out;
}

inline void check_compatible(const Model& model, const GraphDataset& ds) {
  const ModelConfig& c = model.config;
  if (ds.feature_dim != c.feature_dim) {
    throw ConfigError("dataset feature_dim " + std::to_string(ds.feature_dim) + " != model P " +
                      std::to_string(c.feature_dim));
  }
  if (ds.target_length != c.nodes) {
    throw ConfigError("dataset target_length " + std::to_string(ds.target_length) + " != model M " +
                      std::to_string(c.nodes));
  }
  if (ds.num_classes > c.num_classes) {
    throw ConfigError("dataset has " + std::to_string(ds.num_classes) + " classes, model " +
                      std::to_string(c.num_classes));
  }
  for (const auto& s : ds.samples) {
    if (s.width() != c.feature_dim) throw ConfigError("sample '" + s.id + "' has width " + std::to_string(s.width()));
  }
}

inline std::vector<SequenceSample> padded_samples(const GraphDataset& ds, std::size_t nodes) {
  std::vector<SequenceSample> out;
  out.reserve(ds.size());
  for (const auto& s : ds.samples) out.push_back(pad_or_truncate(s, nodes));
  return out;
}

/// Seeded-shuffle minibatch Adam on the joint objective. Every sample in a
/// step is pushed through the same bound adjacency; gradients accumulate in
/// batch order.
inline TrainReport train(Model& model, const GraphDataset& ds, const TrainConfig& cfg, const TrainOptions& opts = {}) {
  cfg.validate();
  check_compatible(model, ds);
  if (ds.samples.empty()) throw ConfigError("cannot train on an empty dataset");
  const auto start_time = std::chrono::steady_clock::now();
  const std::vector<SequenceSample> samples = padded_samples(ds, model.config.nodes);
  const StructureMatrix structure = structure_matrix(model.config.nodes);

  TrainReport report;
  report.seed = cfg.seed;
  report.config = {{"model", model.config}, {"train", cfg}};

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);
  AdamState adam;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_at_epoch(cfg, epoch);
    double epoch_loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<const SequenceSample*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&samples[order[i]]);

      Tape tape;
      ForwardPass pass(model, tape, opts.trainable);
      const BatchLoss loss = batch_loss(pass, batch, structure, cfg.loss_weights);
      tape.backward(loss.total);
      adam_step(model.parameters, tape.parameter_gradients(), adam, lr, cfg, opts.trainable);
      ++report.optimizer_steps;

      const double value = loss.total.value().item();
      if (!std::isfinite(value)) throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
      for (const auto& p : model.parameters) {
        if (!p.value.all_finite()) {
          throw NumericalError("parameter '" + p.name + "' became non-finite at epoch " + std::to_string(epoch));
        }
      }
      epoch_loss += value;
      for (std::size_t i = 0; i < batch.size(); ++i) correct += loss.predicted[i] == batch[i]->label;
    }
    report.loss.push_back(epoch_loss / static_cast<double>(samples.size()));
    report.accuracy.push_back(static_cast<double>(correct) / static_cast<double>(samples.size()));
    if (opts.on_epoch_end) opts.on_epoch_end(epoch, model);
  }

  report.final_train_accuracy = evaluate(model, samples).unweighted_accuracy;
  if (opts.test) report.final_test_accuracy = evaluate(model, *opts.test).unweighted_accuracy;
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return report;
}

// ---------------------------------------------------------------------------
// Head fine-tuning

inline bool is_head_parameter(const Parameter& p) { return p.name == "head.w" || p.name == "head.b"; }

/// Retrain only the classifier head on `target`; the learned graph,
/// embeddings and pooling stay untouched. A different class count replaces
/// the head with a freshly initialised D_h × C' one.
inline TrainReport fine_tune_head(Model& model, const GraphDataset& target, const TrainConfig& cfg,
                                  const GraphDataset* test = nullptr) {
  if (target.feature_dim != model.config.feature_dim) {
    throw ConfigError("target feature_dim " + std::to_string(target.feature_dim) + " != model P " +
                      std::to_string(model.config.feature_dim));
  }
  if (target.target_length != model.config.nodes) {
    throw ConfigError("target length " + std::to_string(target.target_length) + " != model M " +
                      std::to_string(model.config.nodes));
  }
  if (target.num_classes != model.config.num_classes) {
    model.config.num_classes = target.num_classes;
    std::mt19937_64 rng(cfg.seed);
    model[std::string("head.w")] = detail::xavier_uniform(head_input_width(model.config), target.num_classes, rng);
    model[std::string("head.b")] = Tensor(Shape{target.num_classes});
  }
  TrainOptions opts;
  for (const auto& p : model.parameters) opts.trainable.push_back(is_head_parameter(p));
  opts.test = test;
  return train(model, target, cfg, opts);
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckGroup {
  std::string name;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_relative_error = 0.0;
  double kink_margin = 0.0;  // distance of the check point from the nearest ReLU/max kink

  bool passed(double tolerance = 1e-4) const { return max_relative_error < tolerance; }
};

/// Elementwise |a − n| / max(|a|, |n|, floor).
inline constexpr double kGradCheckFloor = 1e-6;
inline constexpr double kKinkClearance = 1e-3;

inline double single_sample_loss(const Model& model, const SequenceSample& sample, const LossWeights& w,
                                 const StructureMatrix& structure, double* kink_margin = nullptr) {
  Tape tape;
  tape.track_kinks(kink_margin != nullptr);
  ForwardPass pass(model, tape, std::vector<bool>(model.parameters.size(), false));
  const SequenceSample* batch[] = {&sample};
  const double v = batch_loss(pass, batch, structure, w).total.value().item();
  if (kink_margin) *kink_margin = tape.kink_margin();
  return v;
}

/// Compare backward gradients of the single-sample total loss against central
/// differences for every registry entry. `tamper` may alter the analytic
/// gradients before comparison (negative-control hook).
inline GradCheckReport grad_check(const Model& model, const SequenceSample& sample, const LossWeights& w,
                                  double eps = 1e-5, const std::function<void(GradientMap&)>& tamper = {}) {
  const SequenceSample padded = pad_or_truncate(sample, model.config.nodes);
  const StructureMatrix structure = structure_matrix(model.config.nodes);

  GradientMap analytic;
  GradCheckReport report;
  {
    Tape tape;
    tape.track_kinks();
    ForwardPass pass(model, tape);
    const SequenceSample* batch[] = {&padded};
    const Var loss = batch_loss(pass, batch, structure, w).total;
    tape.backward(loss);
    analytic = tape.parameter_gradients();
    report.kink_margin = tape.kink_margin();
  }
  if (tamper) tamper(analytic);

  Model probe = model;
  for (std::size_t i = 0; i < probe.parameters.size(); ++i) {
    GradCheckGroup group{probe.parameters[i].name};
    Tensor& value = probe.parameters[i].value;
    const Tensor& a = analytic.at(i);
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double original = value[k];
      value[k] = original + eps;
      const double up = single_sample_loss(probe, padded, w, structure);
      value[k] = original - eps;
      const double down = single_sample_loss(probe, padded, w, structure);
      value[k] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double abs_err = std::abs(a[k] - numeric);
      const double rel_err = abs_err / std::max({std::abs(a[k]), std::abs(numeric), kGradCheckFloor});
      group.max_absolute_error = std::max(group.max_absolute_error, abs_err);
      group.max_relative_error = std::max(group.max_relative_error, rel_err);
    }
    report.max_relative_error = std::max(report.max_relative_error, group.max_relative_error);
    report.groups.push_back(group);
  }
  return report;
}

/// Kink margin of the model's single-sample loss at its current parameters.
inline double kink_margin(const Model& model, const SequenceSample& sample, const LossWeights& w) {
  double margin = 0.0;
  const SequenceSample padded = pad_or_truncate(sample, model.config.nodes);
  single_sample_loss(model, padded, w, structure_matrix(model.config.nodes), &margin);
  return margin;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct CrossValidationReport {
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0.0;
};

inline void to_json(nlohmann::json& j, const CrossValidationReport& r) {
  j = nlohmann::json{{"fold_accuracy", r.fold_accuracy}, {"mean_accuracy", r.mean_accuracy}};
}

/// Fresh model per fold, trained on the other k − 1 folds and scored on the
/// held-out one.
inline CrossValidationReport cross_validate(const ModelConfig& config, const GraphDataset& ds, std::size_t k,
                                            const TrainConfig& cfg, std::uint64_t split_seed) {
  CrossValidationReport report;
  for (const Fold& fold : cv_split(ds, k, split_seed)) {
    Model model = build_model(config);
    const GraphDataset train_set = subset(ds, fold.train);
    const GraphDataset test_set = subset(ds, fold.test);
    train(model, train_set, cfg);
    report.fold_accuracy.push_back(evaluate(model, test_set).unweighted_accuracy);
  }
  report.mean_accuracy = std::accumulate(report.fold_accuracy.begin(), report.fold_accuracy.end(), 0.0) /
                         static_cast<double>(report.fold_accuracy.size());
  return report;
}

}  // namespace lgrin
