#pragma once

// Joint objective: summed cross-entropy over a batch plus the graph learning
// penalty λ1·eᵀ(A_d ⊙ A)e + λ2·‖A‖²_F + λ3·‖p‖²₂ on the effective adjacency A
// and pooling vector p.

#include <optional>
#include <span>
#include <string>

#include "lgrin/adjacency.hpp"
#include "lgrin/error.hpp"
#include "lgrin/tensor.hpp"

namespace lgrin {

struct LossWeights {
  double lambda1 = 0.1;
  double lambda2 = 0.1;
  double lambda3 = 1e-4;

  void validate() const {
    if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0)) throw ConfigError("loss weights must be >= 0");
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Σ_n cross_entropy(logits_n, label_n); a sum, not a mean.
inline Var classification_loss(std::span<const Var> logits, std::span<const std::size_t> labels) {
  if (logits.size() != labels.size()) {
    throw ContractError(std::to_string(logits.size()) + " logits for " + std::to_string(labels.size()) + " labels");
  }
  if (logits.empty()) throw ContractError("classification loss over an empty batch");
  Var total = cross_entropy_logits(logits[0], labels[0]);
  for (std::size_t i = 1; i < logits.size(); ++i) total = add(total, cross_entropy_logits(logits[i], labels[i]));
  return total;
}

/// Any term whose operand is absent (fixed adjacency, fixed pooling) is dropped.
inline Var graph_learning_loss(std::optional<Var> adjacency, const StructureMatrix& structure,
                               std::optional<Var> pooling, const LossWeights& w, Tape& tape) {
  std::optional<Var> total;
  auto accumulate = [&total](Var term) { total = total ? add(*total, term) : term; };
  if (adjacency) {
    if (adjacency->shape() != structure.values.shape()) {
      throw ShapeError("adjacency " + shape_string(adjacency->shape()) + " vs structure matrix " +
                       shape_string(structure.values.shape()));
    }
    Var a = *adjacency;
    accumulate(scale(sum(mul(tape.constant(structure.values), a)), w.lambda1));
    accumulate(scale(sum(mul(a, a)), w.lambda2));
  }
  if (pooling) accumulate(scale(sum(mul(*pooling, *pooling)), w.lambda3));
  return total ? *total : tape.constant(Tensor::scalar(0.0));
}

inline Var graph_learning_loss(Var adjacency, const StructureMatrix& structure, Var pooling, const LossWeights& w) {
  return graph_learning_loss(std::optional<Var>(adjacency), structure, std::optional<Var>(pooling), w,
                             *adjacency.tape);
}

inline Var total_loss(Var classification, Var graph_learning) {
  if (classification.value().rank() != 0 || graph_learning.value().rank() != 0) {
    throw ContractError("total_loss combines scalars only");
  }
  return add(classification, graph_learning);
}

}  // namespace lgrin
