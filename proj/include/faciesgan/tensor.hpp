#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace faciesgan {

// Dense row-major tensor. Rank is 1..4; NN code uses (N,C,H,W) for feature
// maps and (rows,cols) for weight matrices.
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatMap =
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
  using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

  Tensor() = default;
  explicit Tensor(std::vector<long> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel_of(shape_)), T(0));
  }
  Tensor(std::initializer_list<long> shape) : Tensor(std::vector<long>(shape)) {}

  static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }

  const std::vector<long>& shape() const { return shape_; }
  long dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  long numel() const { return static_cast<long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](long i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](long i) const { return data_[static_cast<size_t>(i)]; }

  // (N,C,H,W) accessor
  T& at(long n, long c, long h, long w) {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at(long n, long c, long h, long w) const {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(T(0)); }

  // Reinterpret the buffer with a new shape of equal element count.
  void reshape(std::vector<long> shape) {
    if (numel_of(shape) != numel()) throw std::invalid_argument("tensor reshape: element count mismatch");
    shape_ = std::move(shape);
  }

  MatMap mat(long rows, long cols) {
    check_2d(rows, cols);
    return MatMap(data_.data(), rows, cols);
  }
  ConstMatMap mat(long rows, long cols) const {
    check_2d(rows, cols);
    return ConstMatMap(data_.data(), rows, cols);
  }
  VecMap vec() { return VecMap(data_.data(), numel()); }
  ConstVecMap vec() const { return ConstVecMap(data_.data(), numel()); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static long numel_of(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) {
      if (d < 0) throw std::invalid_argument("tensor shape: negative dim");
      n *= d;
    }
    return n;
  }

 private:
  void check_2d(long rows, long cols) const {
    if (rows * cols != numel()) throw std::invalid_argument("tensor mat view: size mismatch");
  }

  std::vector<long> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace faciesgan
