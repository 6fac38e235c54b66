#pragma once

// Network building blocks. Each layer is a pure function of its inputs and of
// parameter handles already bound onto the tape.

#include <optional>
#include <vector>

#include "lgrin/tensor.hpp"

namespace lgrin {

/// Two weight layers F_in → η → η with a ReLU between them.
struct MlpBinding {
  Var w1, b1, w2, b2;

  std::size_t width() const { return w2.shape().at(1); }
};

/// The two G*conv branches of one inception layer.
struct InceptionBinding {
  MlpBinding branch1;
  MlpBinding branch2;
};

inline Var mlp(Var x, const MlpBinding& p) {
  return add_bias(matmul(relu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

/// relu(MLP(A · H)): the learnable-adjacency spectral convolution.
inline Var gstar_conv(Var h, Var adjacency, const MlpBinding& p) {
  return relu(mlp(matmul(adjacency, h), p));
}

/// [G*₁(H) | G*₂(H) | 1-hop neighbourhood max of H]; output width η₁ + η₂ + F_in.
inline Var inception_layer(Var h, Var adjacency, const InceptionBinding& p, const NeighborMask& mask) {
  return concat_features({gstar_conv(h, adjacency, p.branch1), gstar_conv(h, adjacency, p.branch2),
                          neighborhood_max(h, mask)});
}

enum class PoolingMode { learnable_full, max, mean };

/// Graph-level embedding. learnable_full gives [max | Hᵀp | mean] (width 3Q);
/// the fixed modes give a single readout of width Q.
inline Var pooling_layer(Var h, std::optional<Var> weights, PoolingMode mode) {
  switch (mode) {
    case PoolingMode::max:
      return readout(h, ReadoutMode::max);
    case PoolingMode::mean:
      return readout(h, ReadoutMode::mean);
    case PoolingMode::learnable_full:
      break;
  }
  if (!weights) throw ContractError("learnable pooling needs a weight vector");
  return concat_features({readout(h, ReadoutMode::max), weighted_readout(h, *weights), readout(h, ReadoutMode::mean)});
}

/// relu(Â · H · W), the renormalised GCN propagation of the baseline.
inline Var gcn_layer(Var h, Var a_hat, Var w) { return relu(matmul(matmul(a_hat, h), w)); }

}  // namespace lgrin
