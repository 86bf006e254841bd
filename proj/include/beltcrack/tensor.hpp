#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace beltcrack {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Dense row-major (C-order) tensor. Feature maps are c x h x w, stacks are
// T x c x h x w. Storage is a flat Eigen array so whole-tensor arithmetic is
// a single expression.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), values_(Array::Zero(shape_size(shape_))) {}
  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), values_(Array::Constant(shape_size(shape_), fill)) {}
  Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
    if (static_cast<Index>(values.size()) != shape_size(shape_)) {
      throw std::invalid_argument("Tensor: value count does not match shape " + shape_string(shape_));
    }
    values_.resize(shape_size(shape_));
    Index i = 0;
    for (Scalar v : values) values_[i++] = v;
  }
  Tensor(Shape shape, Array values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_size(shape_)) {
      throw std::invalid_argument("Tensor: value count does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(axis < 0 ? shape_.size() + axis : axis); }
  Index size() const { return values_.size(); }
  bool empty() const { return values_.size() == 0; }

  Array& values() { return values_; }
  const Array& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }

  Scalar& at(Index i, Index j) { return values_[i * shape_[1] + j]; }
  Scalar at(Index i, Index j) const { return values_[i * shape_[1] + j]; }
  Scalar& at(Index c, Index y, Index x) { return values_[(c * shape_[1] + y) * shape_[2] + x]; }
  Scalar at(Index c, Index y, Index x) const { return values_[(c * shape_[1] + y) * shape_[2] + x]; }
  Scalar& at(Index t, Index c, Index y, Index x) {
    return values_[((t * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  Scalar at(Index t, Index c, Index y, Index x) const {
    return values_[((t * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  MatrixMap matrix(Index rows, Index cols) {
    check_matrix(rows, cols);
    return MatrixMap(values_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_matrix(rows, cols);
    return ConstMatrixMap(values_.data(), rows, cols);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw std::invalid_argument("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
    }
    return Tensor(std::move(shape), values_);
  }

  void set_zero() { values_.setZero(); }
  Scalar max_abs() const { return values_.size() ? values_.abs().maxCoeff() : Scalar(0); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, values_.template cast<Other>().eval());
  }

 private:
  void check_matrix(Index rows, Index cols) const {
    if (rows * cols != size()) {
      throw std::invalid_argument("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                                  " of tensor " + shape_string(shape_));
    }
  }

  Shape shape_;
  Array values_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace beltcrack
