#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace avemo {

/// Dense row-major double tensor. Most of the code uses rank 1 or 2.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }

  Tensor(std::vector<int> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<long long>(data.size()) != numel_of(shape))
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  static long long numel_of(const std::vector<int>& s) {
    long long n = 1;
    for (int e : s) {
      if (e <= 0) throw std::invalid_argument("Tensor: non-positive extent");
      n *= e;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor row(std::vector<double> d) {
    int n = static_cast<int>(d.size());
    return Tensor({n}, std::move(d));
  }

  static Tensor matrix(int r, int c, std::vector<double> d) {
    return Tensor({r, c}, std::move(d));
  }

  long long numel() const { return static_cast<long long>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  int rows() const {
    if (rank() != 2) throw std::logic_error("Tensor::rows: not rank 2");
    return shape[0];
  }
  int cols() const {
    if (rank() != 2) throw std::logic_error("Tensor::cols: not rank 2");
    return shape[1];
  }

  double& at(int i) { return data[static_cast<size_t>(i)]; }
  double at(int i) const { return data[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
  double at(int i, int j) const {
    return data[static_cast<size_t>(i) * cols() + j];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double item() const {
    if (numel() != 1) throw std::logic_error("Tensor::item: not a scalar");
    return data[0];
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace avemo
