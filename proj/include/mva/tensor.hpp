#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "mva/errors.hpp"

namespace mva {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major array of rank 1..3 with an optional same-shape gradient
// buffer. Parameters and activations are Tensor<float>; the finite-difference
// oracles instantiate Tensor<double>.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until ensure_grad()

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), T(0)) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape)) {
      throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T value) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = value;
    return t;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t extent(int i) const { return shape[static_cast<size_t>(i)]; }
  bool empty() const { return data.empty(); }

  T& operator()(int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator()(int64_t i) const { return data[static_cast<size_t>(i)]; }
  T& operator()(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const T& operator()(int64_t i, int64_t j) const {
    return data[static_cast<size_t>(i * shape[1] + j)];
  }
  T& operator()(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const T& operator()(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    for (auto& g : grad) g = T(0);
  }
  T& grad_at(int64_t i) { return grad[static_cast<size_t>(i)]; }
  T& grad_at(int64_t i, int64_t j) { return grad[static_cast<size_t>(i * shape[1] + j)]; }
  T& grad_at(int64_t i, int64_t j, int64_t k) {
    return grad[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shapes disagree: " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
}

template <typename T>
void check_rank(const Tensor<T>& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape));
  }
}

// Cast between element types (float <-> double), values only.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i) out.data[static_cast<size_t>(i)] = static_cast<To>(t.data[static_cast<size_t>(i)]);
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  check_rank(x, 2, "transpose2d");
  const int64_t rows = x.extent(0), cols = x.extent(1);
  Tensor<T> out({cols, rows});
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out(j, i) = x(i, j);
  return out;
}

}  // namespace mva
