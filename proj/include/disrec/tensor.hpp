#pragma once

#include <cmath>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "disrec/common.hpp"

namespace disrec {

// Dense row-major tensor of doubles, rank 1 or 2 in practice. Carries an
// optional gradient slot of identical shape; the slot is allocated for
// learnable parameters and for intermediates living on a tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.assign(t.count(t.shape_), 0.0);
    return t;
  }

  static Tensor full(std::vector<std::size_t> shape, double value) {
    Tensor t = zeros(std::move(shape));
    t.fill(value);
    return t;
  }

  static Tensor scalar(double value) {
    Tensor t = zeros({1});
    t.data_[0] = value;
    return t;
  }

  static Tensor from_vector(std::vector<double> values) {
    Tensor t;
    t.shape_ = {values.size()};
    t.data_ = std::move(values);
    return t;
  }

  static Tensor from_matrix(std::size_t rows, std::size_t cols,
                            std::vector<double> values) {
    require(values.size() == rows * cols, "Tensor::from_matrix: size mismatch");
    Tensor t;
    t.shape_ = {rows, cols};
    t.data_ = std::move(values);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::size_t rows() const {
    require(rank() == 2, "Tensor::rows: not a matrix");
    return shape_[0];
  }
  std::size_t cols() const {
    require(rank() == 2, "Tensor::cols: not a matrix");
    return shape_[1];
  }

  bool is_scalar() const { return size() == 1; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const {
    require(is_scalar(), "Tensor::item: not a scalar");
    return data_[0];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(double value) {
    for (double& x : data_) x = value;
  }

  bool all_finite() const {
    for (double x : data_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  // --- gradient slot ---

  bool has_grad() const { return !grad_.empty(); }

  void alloc_grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  }

  void zero_grad() {
    for (double& g : grad_) g = 0.0;
  }

  double* grad() { return grad_.data(); }
  const double* grad() const { return grad_.data(); }

  double& grad_at(std::size_t i) { return grad_[i]; }
  double grad_at(std::size_t i) const { return grad_[i]; }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

// Named learnable tensor. The gradient lives in the value's grad slot.
struct Parameter {
  std::string name;
  Tensor value;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    value.alloc_grad();
  }

  std::size_t size() const { return value.size(); }
  void zero_grad() { value.zero_grad(); }
};

}  // namespace disrec
