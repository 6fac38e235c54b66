#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "lgrin/tensor.hpp"

namespace lgrin::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// Scalar-valued function of one tensor, built fresh on each tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

inline Tensor analytic_gradient(const ScalarFn& f, const Tensor& x) {
  Tape tape;
  Var v = tape.parameter(x, 0);
  tape.backward(f(tape, v));
  return tape.grad(v);
}

inline Tensor numeric_gradient(const ScalarFn& f, const Tensor& x, double eps = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  auto eval = [&f](const Tensor& at) {
    Tape tape;
    return f(tape, tape.constant(at)).value().item();
  };
  for (std::size_t k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + eps;
    const double up = eval(probe);
    probe[k] = x[k] - eps;
    const double down = eval(probe);
    probe[k] = x[k];
    g[k] = (up - down) / (2.0 * eps);
  }
  return g;
}

inline double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = std::abs(a[k] - b[k]);
    worst = std::max(worst, d / std::max({std::abs(a[k]), std::abs(b[k]), floor}));
  }
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  return worst;
}

// Fresh, empty directory under the system temp dir; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("lgrin_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace lgrin::testing
