#pragma once

// Dense 64-bit tensors and a define-by-run reverse-mode gradient tape.
//
// A `Tensor` is a detached value (shape + row-major data). A `Tape` records
// every operation applied to `Var` handles during one forward pass; calling
// `Tape::backward` on a scalar result fills in gradients for every node that
// requires them. Parameters enter the tape through `Tape::parameter`, tagged
// with a caller-chosen key so their gradients can be collected afterwards.
//
// Only rank 0, 1 and 2 tensors are used. Vectors are rank 1; matrices are
// rank 2 and stored row-major.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lgrin/error.hpp"

namespace lgrin {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

class Tensor {
 public:
  Tensor() : shape_{}, values_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_size(shape_)) {
      throw ShapeError("shape " + shape_string(shape_) + " holds " + std::to_string(shape_size(shape_)) +
                       " values, got " + std::to_string(values_.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  static Tensor vector(std::initializer_list<double> v) {
    return Tensor(Shape{v.size()}, std::vector<double>(v));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(data));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

  static Tensor identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : shape_.back(); }

  double& operator()(std::size_t i, std::size_t j) { return values_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * shape_[1] + j]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double item() const {
    if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return values_[0];
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& other) {
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// Boolean M×M neighbourhood relation; row i lists the nodes pooled into node i.
class NeighborMask {
 public:
  NeighborMask() = default;
  explicit NeighborMask(std::size_t n, bool fill = false) : n_(n), bits_(n * n, fill ? 1 : 0) {}

  static NeighborMask identity(std::size_t n) {
    NeighborMask m(n);
    for (std::size_t i = 0; i < n; ++i) m.set(i, i, true);
    return m;
  }

  std::size_t size() const noexcept { return n_; }
  bool operator()(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { bits_[i * n_ + j] = v ? 1 : 0; }

  friend bool operator==(const NeighborMask&, const NeighborMask&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<unsigned char> bits_;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t index = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr, std::nullopt); }

  /// Leaf whose gradient is collected under `key` by `parameter_gradients`.
  Var parameter(Tensor value, std::size_t key) { return push(std::move(value), true, nullptr, key); }

  /// Record an operation result. `backward` receives the gradient of the
  /// result and must route it into the parents via `accumulate`.
  Var record(Tensor value, bool requires_grad, BackwardFn backward) {
    return push(std::move(value), requires_grad, requires_grad ? std::move(backward) : nullptr, std::nullopt);
  }

  const Tensor& value(std::size_t i) const { return nodes_[i].value; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Add `g` into the gradient buffer of node `target` (no-op for constants).
  void accumulate(Var target, const Tensor& g) {
    Node& n = nodes_[target.index];
    if (!n.requires_grad) return;
    if (!n.grad) {
      n.grad = g;
    } else {
      *n.grad += g;
    }
  }

  /// Mutable buffer for in-place accumulation; created as zeros on first use.
  Tensor& grad_buffer(Var target) {
    Node& n = nodes_[target.index];
    if (!n.grad) n.grad = Tensor::zeros(n.value.shape());
    return *n.grad;
  }

  void backward(Var loss) {
    if (loss.tape != this) throw ContractError("loss belongs to another tape");
    const Tensor& lv = nodes_[loss.index].value;
    if (lv.rank() != 0) throw ContractError("backward needs a scalar loss, got shape " + shape_string(lv.shape()));
    for (auto& n : nodes_) n.grad.reset();
    nodes_[loss.index].grad = Tensor::scalar(1.0);
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.grad || !n.backward) continue;
      // parents always precede their child, so this buffer is not touched again
      n.backward(*this, *n.grad);
    }
  }

  /// Gradient of the last backward pass at node `v`; zeros if unreached.
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.index];
    return n.grad ? *n.grad : Tensor::zeros(n.value.shape());
  }

  /// Gradients of every parameter leaf, keyed as registered. Leaves not on the
  /// loss path get zeros. A key bound twice sums its contributions.
  std::map<std::size_t, Tensor> parameter_gradients() const {
    std::map<std::size_t, Tensor> out;
    for (const auto& n : nodes_) {
      if (!n.param_key) continue;
      Tensor g = n.grad ? *n.grad : Tensor::zeros(n.value.shape());
      auto [it, inserted] = out.try_emplace(*n.param_key, g);
      if (!inserted) it->second += g;
    }
    return out;
  }

  /// Smallest distance of any ReLU input or max-competition margin from a
  /// non-differentiable point seen during the forward pass. Exact ties and
  /// exact zeros are structural (they persist under perturbation) and ignored.
  /// Only measured once `track_kinks` has been switched on.
  double kink_margin() const noexcept { return kink_margin_; }
  void note_kink(double margin) {
    if (margin > 0.0) kink_margin_ = std::min(kink_margin_, margin);
  }
  bool tracking_kinks() const noexcept { return track_kinks_; }
  void track_kinks(bool on = true) noexcept { track_kinks_ = on; }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    BackwardFn backward;
    std::optional<std::size_t> param_key;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn backward, std::optional<std::size_t> key) {
    nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad, std::move(backward), key});
    return Var{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // deque: value() references stay valid as the tape grows
  double kink_margin_ = std::numeric_limits<double>::infinity();
  bool track_kinks_ = false;
};

inline const Tensor& Var::value() const { return tape->value(index); }
inline bool Var::requires_grad() const { return tape->requires_grad(index); }

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMatrix> as_matrix(const Tensor& t) {
  return {t.values().data(), static_cast<Eigen::Index>(t.shape()[0]), static_cast<Eigen::Index>(t.shape()[1])};
}
inline Eigen::Map<RowMatrix> as_matrix(Tensor& t) {
  return {t.values().data(), static_cast<Eigen::Index>(t.shape()[0]), static_cast<Eigen::Index>(t.shape()[1])};
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " + shape_string(t.shape()));
  }
}

inline void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands live on different tapes");
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank(av, 2, "matmul");
  detail::require_rank(bv, 2, "matmul");
  if (av.shape()[1] != bv.shape()[0]) {
    throw ShapeError("matmul " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Tensor out(Shape{av.shape()[0], bv.shape()[1]});
  detail::as_matrix(out).noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape->record(std::move(out), rg, [a, b](Tape& t, const Tensor& g) {
    auto gm = detail::as_matrix(g);
    if (a.requires_grad()) {
      auto ga = detail::as_matrix(t.grad_buffer(a));
      ga.noalias() += gm * detail::as_matrix(b.value()).transpose();
    }
    if (b.requires_grad()) {
      auto gb = detail::as_matrix(t.grad_buffer(b));
      gb.noalias() += detail::as_matrix(a.value()).transpose() * gm;
    }
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  if (a.shape() != b.shape()) throw ShapeError("add " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
  Tensor out = a.value();
  out += b.value();
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape->record(std::move(out), rg, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

/// Row-wise bias: x[M×F] + b[F].
inline Var add_bias(Var x, Var b) {
  detail::require_same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  detail::require_rank(xv, 2, "add_bias");
  detail::require_rank(bv, 1, "add_bias");
  if (xv.shape()[1] != bv.shape()[0]) {
    throw ShapeError("add_bias " + shape_string(xv.shape()) + " + " + shape_string(bv.shape()));
  }
  Tensor out = xv;
  const std::size_t rows = xv.shape()[0], cols = xv.shape()[1];
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) += bv[j];
  const bool rg = x.requires_grad() || b.requires_grad();
  return x.tape->record(std::move(out), rg, [x, b, rows, cols](Tape& t, const Tensor& g) {
    t.accumulate(x, g);
    if (b.requires_grad()) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) gb[j] += g(i, j);
    }
  });
}

inline Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= factor;
  return x.tape->record(std::move(out), x.requires_grad(), [x, factor](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

/// Elementwise product of equally shaped tensors.
inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b);
  if (a.shape() != b.shape()) throw ShapeError("mul " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape->record(std::move(out), rg, [a, b](Tape& t, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor& ga = t.grad_buffer(a);
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = t.grad_buffer(b);
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var transpose(Var x) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 2, "transpose");
  const std::size_t r = xv.shape()[0], c = xv.shape()[1];
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = xv(i, j);
  return x.tape->record(std::move(out), x.requires_grad(), [x, r, c](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx(i, j) += g(j, i);
  });
}

/// Same values, new shape of equal element count.
inline Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    throw ShapeError("reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  const std::vector<double> data(x.value().values().begin(), x.value().values().end());
  return x.tape->record(Tensor(std::move(shape), data), x.requires_grad(), [x](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// max(x, 0); the subgradient at exactly 0 is 0.
inline Var relu(Var x) {
  Tensor out = x.value();
  if (x.tape->tracking_kinks()) {
    double margin = std::numeric_limits<double>::infinity();
    for (double v : out.values())
      if (v != 0.0) margin = std::min(margin, std::abs(v));
    x.tape->note_kink(margin);
  }
  for (double& v : out.values()) v = v < 0.0 ? 0.0 : v;
  return x.tape->record(std::move(out), x.requires_grad(), [x](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

/// Sum of all entries, as a scalar.
inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape->record(Tensor::scalar(s), x.requires_grad(), [x](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x);
    const double up = g.item();
    for (double& v : gx.values()) v += up;
  });
}

/// Append columns of matrices sharing a row count, in argument order. Rank-1
/// parts are appended end to end instead.
inline Var concat_features(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_features of zero parts");
  Tape* tape = parts.front().tape;
  const std::size_t rank = parts.front().value().rank();
  if (rank != 1 && rank != 2) throw ShapeError("concat_features expects rank 1 or 2");
  const std::size_t rows = parts.front().value().rows();
  std::size_t total = 0;
  bool rg = false;
  for (const Var& p : parts) {
    detail::require_same_tape(parts.front(), p);
    const Tensor& v = p.value();
    if (v.rank() != rank || v.rows() != rows) {
      throw ShapeError("concat_features row mismatch: " + shape_string(parts.front().shape()) + " vs " +
                       shape_string(v.shape()));
    }
    total += v.cols();
    rg = rg || p.requires_grad();
  }
  Tensor out(rank == 2 ? Shape{rows, total} : Shape{total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t c = v.cols();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(v.values().begin() + i * c, c, out.values().begin() + i * total + offset);
    offset += c;
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return tape->record(std::move(out), rg, [saved, rows, total](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : saved) {
      const std::size_t c = p.value().cols();
      if (p.requires_grad()) {
        Tensor& gp = t.grad_buffer(p);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * total + off + j];
      }
      off += c;
    }
  });
}

inline Var concat_features(std::initializer_list<Var> parts) {
  return concat_features(std::span<const Var>(parts.begin(), parts.size()));
}

/// Row i of the result is the column-wise max of h over the rows j with
/// mask(i, j). Gradient goes to the first maximising index.
inline Var neighborhood_max(Var h, const NeighborMask& mask) {
  const Tensor& hv = h.value();
  detail::require_rank(hv, 2, "neighborhood_max");
  const std::size_t m = hv.shape()[0], f = hv.shape()[1];
  if (mask.size() != m) {
    throw ShapeError("neighborhood_max mask of size " + std::to_string(mask.size()) + " for " + shape_string(hv.shape()));
  }
  Tensor out(Shape{m, f});
  std::vector<std::size_t> arg(m * f);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &out(i, 0);
    std::size_t* row_arg = &arg[i * f];
    bool any = false;
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask(i, j)) continue;
      const double* src = hv.values().data() + j * f;
      if (!any) {
        std::copy_n(src, f, row);
        std::fill_n(row_arg, f, j);
        any = true;
        continue;
      }
      for (std::size_t k = 0; k < f; ++k)
        if (src[k] > row[k]) {
          row[k] = src[k];
          row_arg[k] = j;
        }
    }
    if (!any) throw ContractError("neighborhood_max: node " + std::to_string(i) + " has an empty neighbourhood");
  }
  if (h.tape->tracking_kinks()) {
    // gap between each winner and the best strictly smaller competitor
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < f; ++k)
        for (std::size_t j = 0; j < m; ++j)
          if (mask(i, j) && hv(j, k) < out(i, k)) margin = std::min(margin, out(i, k) - hv(j, k));
    h.tape->note_kink(margin);
  }
  return h.tape->record(std::move(out), h.requires_grad(), [h, arg = std::move(arg), m, f](Tape& t, const Tensor& g) {
    Tensor& gh = t.grad_buffer(h);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < f; ++k) gh(arg[i * f + k], k) += g(i, k);
  });
}

enum class ReadoutMode { max, mean };

/// Column-wise max or mean over all rows of h[M×F], giving a length-F vector.
inline Var readout(Var h, ReadoutMode mode) {
  const Tensor& hv = h.value();
  detail::require_rank(hv, 2, "readout");
  const std::size_t m = hv.shape()[0], f = hv.shape()[1];
  if (m == 0) throw ShapeError("readout over zero rows");
  Tensor out(Shape{f});
  if (mode == ReadoutMode::mean) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < f; ++k) out[k] += hv(i, k);
    for (std::size_t k = 0; k < f; ++k) out[k] /= static_cast<double>(m);
    return h.tape->record(std::move(out), h.requires_grad(), [h, m, f](Tape& t, const Tensor& g) {
      Tensor& gh = t.grad_buffer(h);
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < f; ++k) gh(i, k) += g[k] * inv;
    });
  }
  std::vector<std::size_t> arg(f, 0);
  for (std::size_t k = 0; k < f; ++k) out[k] = hv(0, k);
  for (std::size_t i = 1; i < m; ++i)
    for (std::size_t k = 0; k < f; ++k)
      if (hv(i, k) > out[k]) {
        out[k] = hv(i, k);
        arg[k] = i;
      }
  if (h.tape->tracking_kinks()) {
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < f; ++k)
        if (hv(i, k) < out[k]) margin = std::min(margin, out[k] - hv(i, k));
    h.tape->note_kink(margin);
  }
  return h.tape->record(std::move(out), h.requires_grad(), [h, arg = std::move(arg), f](Tape& t, const Tensor& g) {
    Tensor& gh = t.grad_buffer(h);
    for (std::size_t k = 0; k < f; ++k) gh(arg[k], k) += g[k];
  });
}

/// Σ_i p_i · h_i over the rows of h[M×F] with weights p[M].
inline Var weighted_readout(Var h, Var p) {
  detail::require_same_tape(h, p);
  const Tensor& hv = h.value();
  const Tensor& pv = p.value();
  detail::require_rank(hv, 2, "weighted_readout");
  detail::require_rank(pv, 1, "weighted_readout");
  const std::size_t m = hv.shape()[0], f = hv.shape()[1];
  if (pv.shape()[0] != m) {
    throw ShapeError("weighted_readout " + shape_string(hv.shape()) + " with weights " + shape_string(pv.shape()));
  }
  Tensor out(Shape{f});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < f; ++k) out[k] += pv[i] * hv(i, k);
  const bool rg = h.requires_grad() || p.requires_grad();
  return h.tape->record(std::move(out), rg, [h, p, m, f](Tape& t, const Tensor& g) {
    if (h.requires_grad()) {
      Tensor& gh = t.grad_buffer(h);
      const Tensor& pv = p.value();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < f; ++k) gh(i, k) += pv[i] * g[k];
    }
    if (p.requires_grad()) {
      Tensor& gp = t.grad_buffer(p);
      const Tensor& hv = h.value();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < f; ++k) gp[i] += hv(i, k) * g[k];
    }
  });
}

/// −log softmax(logits)[label], stabilised by subtracting the max logit.
inline Var cross_entropy_logits(Var logits, std::size_t label) {
  const Tensor& lv = logits.value();
  detail::require_rank(lv, 1, "cross_entropy_logits");
  const std::size_t c = lv.shape()[0];
  if (label >= c) {
    throw IndexError("label " + std::to_string(label) + " out of range for " + std::to_string(c) + " classes");
  }
  const double mx = *std::max_element(lv.values().begin(), lv.values().end());
  double z = 0.0;
  for (double v : lv.values()) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  std::vector<double> prob(c);
  for (std::size_t i = 0; i < c; ++i) prob[i] = std::exp(lv[i] - log_z);
  return logits.tape->record(Tensor::scalar(log_z - lv[label]), logits.requires_grad(),
                             [logits, label, prob = std::move(prob)](Tape& t, const Tensor& g) {
                               Tensor& gl = t.grad_buffer(logits);
                               const double up = g.item();
                               for (std::size_t i = 0; i < prob.size(); ++i)
                                 gl[i] += up * (prob[i] - (i == label ? 1.0 : 0.0));
                             });
}

}  // namespace lgrin
