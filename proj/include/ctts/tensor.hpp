#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctts::ad {

// Dense row-major tensor of real values. Plain value semantics; the autodiff
// graph owns copies of everything it needs.
template <class Real>
struct Tensor {
  std::vector<int> shape;
  std::vector<Real> data;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != data.size())
      throw std::runtime_error("tensor: shape/data size mismatch");
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::runtime_error("tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(numel_of(t.shape), Real(0));
    return t;
  }

  static Tensor full(std::vector<int> s, Real v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(Real v) { return Tensor({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  // 2-D accessors; most of the model works with matrices and vectors.
  int rows() const { return rank() >= 1 ? shape[0] : 1; }
  int cols() const { return rank() >= 2 ? shape[1] : 1; }
  Real& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  Real at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor<Real> with_grad(bool g = true) const {
    Tensor t = *this;
    t.requires_grad = g;
    return t;
  }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> t;
    t.shape = shape;
    t.requires_grad = requires_grad;
    t.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      t.data[i] = static_cast<Other>(data[i]);
    return t;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

template <class Real>
Tensor<Real> uniform_tensor(std::vector<int> shape, Real lo, Real hi, std::mt19937_64& rng) {
  Tensor<Real> t = Tensor<Real>::zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.data) v = static_cast<Real>(dist(rng));
  return t;
}

template <class Real>
Tensor<Real> normal_tensor(std::vector<int> shape, Real mean, Real stddev, std::mt19937_64& rng) {
  Tensor<Real> t = Tensor<Real>::zeros(std::move(shape));
  std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
  for (auto& v : t.data) v = static_cast<Real>(dist(rng));
  return t;
}

}  // namespace ctts::ad
