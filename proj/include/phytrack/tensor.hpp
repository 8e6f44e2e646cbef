#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace phytrack {

// Dense row-major tensor of doubles, up to 4 dimensions.
// Convention: feature maps are (H, W, C), matrices are (rows, cols),
// similarity volumes are (h', w', h', w').
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::initializer_list<int> shape) { reshape(shape); }
  explicit Tensor(const std::vector<int>& shape) { reshape(shape); }

  static Tensor zeros(std::initializer_list<int> shape) { return Tensor(shape); }

  static Tensor full(std::initializer_list<int> shape, double value) {
    Tensor t(shape);
    std::fill(t.v_.begin(), t.v_.end(), value);
    return t;
  }

  static Tensor scalar(double value) {
    Tensor t({1});
    t.v_[0] = value;
    return t;
  }

  void reshape(std::initializer_list<int> shape) {
    reshape(std::vector<int>(shape));
  }

  void reshape(const std::vector<int>& shape) {
    assert(shape.size() >= 1 && shape.size() <= 4);
    ndim_ = static_cast<int>(shape.size());
    std::size_t n = 1;
    for (int i = 0; i < 4; ++i) dims_[i] = 1;
    for (int i = 0; i < ndim_; ++i) {
      assert(shape[i] > 0);
      dims_[i] = shape[i];
      n *= static_cast<std::size_t>(shape[i]);
    }
    v_.assign(n, 0.0);
  }

  int ndim() const { return ndim_; }
  int dim(int i) const { return dims_[i]; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  std::vector<int> shape() const {
    return std::vector<int>(dims_.begin(), dims_.begin() + ndim_);
  }

  bool same_shape(const Tensor& o) const {
    return ndim_ == o.ndim_ && dims_ == o.dims_;
  }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  double& operator()(int a) { return v_[a]; }
  double operator()(int a) const { return v_[a]; }

  double& operator()(int a, int b) { return v_[idx2(a, b)]; }
  double operator()(int a, int b) const { return v_[idx2(a, b)]; }

  double& operator()(int a, int b, int c) { return v_[idx3(a, b, c)]; }
  double operator()(int a, int b, int c) const { return v_[idx3(a, b, c)]; }

  double& operator()(int a, int b, int c, int d) { return v_[idx4(a, b, c, d)]; }
  double operator()(int a, int b, int c, int d) const { return v_[idx4(a, b, c, d)]; }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  double max_abs_diff(const Tensor& o) const {
    assert(size() == o.size());
    double m = 0.0;
    for (std::size_t i = 0; i < v_.size(); ++i)
      m = std::max(m, std::abs(v_[i] - o.v_[i]));
    return m;
  }

  void fill(double value) { std::fill(v_.begin(), v_.end(), value); }

  void add_scaled(const Tensor& o, double s) {
    assert(size() == o.size());
    for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += s * o.v_[i];
  }

  std::string shape_str() const {
    std::string s = "(";
    for (int i = 0; i < ndim_; ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

 private:
  std::size_t idx2(int a, int b) const {
    assert(ndim_ == 2);
    return static_cast<std::size_t>(a) * dims_[1] + b;
  }
  std::size_t idx3(int a, int b, int c) const {
    assert(ndim_ == 3);
    return (static_cast<std::size_t>(a) * dims_[1] + b) * dims_[2] + c;
  }
  std::size_t idx4(int a, int b, int c, int d) const {
    assert(ndim_ == 4);
    return ((static_cast<std::size_t>(a) * dims_[1] + b) * dims_[2] + c) * dims_[3] + d;
  }

  std::array<int, 4> dims_{1, 1, 1, 1};
  int ndim_ = 0;
  std::vector<double> v_;
};

// Deterministic fills used by layer initialization and tests.
inline Tensor random_uniform(std::initializer_list<int> shape, double lo, double hi,
                             std::mt19937_64& rng) {
  Tensor t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

inline Tensor random_normal(std::initializer_list<int> shape, double mean, double stddev,
                            std::mt19937_64& rng) {
  Tensor t(shape);
  std::normal_distribution<double> dist(mean, stddev);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace phytrack
