#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace csiwm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXd = RowMatrix<double>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape);

/// Dense row-major N-d array. Storage is a single Eigen column vector so the
/// whole buffer can be handed to Eigen expressions; 2-d views come from
/// `matrix()`.
template <typename Scalar>
class BasicTensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(shape_size(shape_))) {}

  BasicTensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values)
      : BasicTensor(std::move(shape), Eigen::Map<const Vector>(values.begin(), Index(values.size()))) {}

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  static BasicTensor constant(Shape shape, Scalar value) {
    BasicTensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static BasicTensor scalar(Scalar value) { return BasicTensor(Shape{}, Vector::Constant(1, value)); }

  template <typename Derived>
  static BasicTensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    BasicTensor t(Shape{m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return Index(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(std::size_t(axis)); }
  Index size() const { return data_.size(); }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar item() const {
    if (size() != 1) throw std::logic_error("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  /// Leading dimension by the product of the rest.
  MatrixMap matrix() {
    const Index rows = shape_.empty() ? 1 : shape_[0];
    return MatrixMap(data_.data(), rows, rows == 0 ? 0 : size() / rows);
  }
  ConstMatrixMap matrix() const {
    const Index rows = shape_.empty() ? 1 : shape_[0];
    return ConstMatrixMap(data_.data(), rows, rows == 0 ? 0 : size() / rows);
  }

  /// Everything but the last dimension by the last dimension.
  MatrixMap rows_by_last() {
    const Index cols = shape_.empty() ? 1 : shape_.back();
    return MatrixMap(data_.data(), cols == 0 ? 0 : size() / cols, cols);
  }
  ConstMatrixMap rows_by_last() const {
    const Index cols = shape_.empty() ? 1 : shape_.back();
    return ConstMatrixMap(data_.data(), cols == 0 ? 0 : size() / cols, cols);
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Shape shape_;
  Vector data_;
};

using Tensor = BasicTensor<double>;

inline std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

}  // namespace csiwm
