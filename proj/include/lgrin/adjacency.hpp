#pragma once

// The shared M×M graph adjacency in its three regimes (learned, binary path,
// attribute-distance weighted), plus the temporal structure matrix and the
// renormalised propagation matrix used by the baseline GCN.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "lgrin/error.hpp"
#include "lgrin/tensor.hpp"

namespace lgrin {

/// Unconstrained raw parameter S; the adjacency actually used is
/// relu((S + Sᵀ) / 2).
struct LearnableAdjacency {
  Tensor raw;

  std::size_t nodes() const { return raw.shape().at(0); }
};

inline LearnableAdjacency init_learnable_adjacency(std::size_t nodes, std::uint64_t seed) {
  if (nodes < 2) throw ConfigError("learnable adjacency needs at least 2 nodes, got " + std::to_string(nodes));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor raw(Shape{nodes, nodes});
  for (double& v : raw.values()) v = normal(rng);
  return LearnableAdjacency{std::move(raw)};
}

/// relu of the symmetrised raw matrix, recorded on the tape.
inline Var effective_adjacency(Var raw) {
  detail::require_rank(raw.value(), 2, "effective_adjacency");
  if (raw.shape()[0] != raw.shape()[1]) throw ShapeError("adjacency must be square, got " + shape_string(raw.shape()));
  return relu(scale(add(raw, transpose(raw)), 0.5));
}

/// Detached evaluation of `effective_adjacency`.
inline Tensor effective_adjacency(const LearnableAdjacency& adj) {
  Tape tape;
  return effective_adjacency(tape.constant(adj.raw)).value();
}

enum class FixedAdjacencyKind { binary, weighted };

/// Temporal path graph: 1 iff |i − j| = 1.
inline Tensor binary_adjacency(std::size_t nodes) {
  Tensor a(Shape{nodes, nodes});
  for (std::size_t i = 0; i + 1 < nodes; ++i) {
    a(i, i + 1) = 1.0;
    a(i + 1, i) = 1.0;
  }
  return a;
}

/// Squared Euclidean distance between node attribute rows.
inline Tensor weighted_adjacency(const Tensor& features) {
  detail::require_rank(features, 2, "weighted_adjacency");
  const std::size_t m = features.shape()[0], p = features.shape()[1];
  Tensor a(Shape{m, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < p; ++k) {
        const double diff = features(i, k) - features(j, k);
        d += diff * diff;
      }
      a(i, j) = d;
      a(j, i) = d;
    }
  return a;
}

inline Tensor fixed_adjacency(FixedAdjacencyKind kind, std::size_t nodes, const Tensor* features = nullptr) {
  if (kind == FixedAdjacencyKind::binary) return binary_adjacency(nodes);
  if (features == nullptr) throw ConfigError("weighted adjacency requires node features");
  if (features->rank() != 2 || features->shape()[0] != nodes) {
    throw ShapeError("weighted adjacency over " + std::to_string(nodes) + " nodes given features " +
                     shape_string(features->shape()));
  }
  return weighted_adjacency(*features);
}

/// D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.
inline Tensor renormalized_adjacency(const Tensor& a) {
  detail::require_rank(a, 2, "renormalized_adjacency");
  const std::size_t m = a.shape()[0];
  if (a.shape()[1] != m) throw ShapeError("adjacency must be square, got " + shape_string(a.shape()));
  Tensor out = a;
  for (std::size_t i = 0; i < m; ++i) out(i, i) += 1.0;
  std::vector<double> inv_sqrt(m);
  for (std::size_t i = 0; i < m; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < m; ++j) deg += out(i, j);
    if (!(deg > 0.0)) throw NumericalError("non-positive degree at node " + std::to_string(i));
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) *= inv_sqrt[i] * inv_sqrt[j];
  return out;
}

/// Temporal distance penalty: entry (i, j) = (i − j)², 0-based.
struct StructureMatrix {
  Tensor values;

  std::size_t nodes() const { return values.shape().at(0); }
};

inline StructureMatrix structure_matrix(std::size_t nodes) {
  Tensor d(Shape{nodes, nodes});
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t j = 0; j < nodes; ++j) {
      const double diff = static_cast<double>(i) - static_cast<double>(j);
      d(i, j) = diff * diff;
    }
  return StructureMatrix{std::move(d)};
}

/// Edge iff weight > threshold; every node is its own neighbour.
inline NeighborMask neighbor_mask(const Tensor& adjacency, double threshold = 0.0) {
  detail::require_rank(adjacency, 2, "neighbor_mask");
  const std::size_t m = adjacency.shape()[0];
  NeighborMask mask(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) mask.set(i, j, i == j || adjacency(i, j) > threshold);
  return mask;
}

}  // namespace lgrin
