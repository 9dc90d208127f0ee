#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vpcnn {

using Dims = std::vector<std::size_t>;

std::size_t num_elements(const Dims& dims);
std::string to_string(const Dims& dims);

/// Dense row-major array of doubles (last dimension fastest) with an optional
/// gradient buffer of the same shape.
///
/// Volumes use the layout [channels, rows, columns, depth].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> data);

  static Tensor scalar(double value);

  const Dims& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  /// Row-major flattening; the only place the index formula lives.
  std::size_t flat_index(std::span<const std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  /// Scalar value of a single-element tensor.
  double item() const;

  bool has_grad() const { return !grad_.empty(); }
  void enable_grad();
  void zero_grad();
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  /// Same data, new extents with equal element count.
  Tensor reshaped(Dims dims) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Dims dims_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

/// Throws ShapeError unless both tensors have identical extents.
void require_same_dims(const Tensor& a, const Tensor& b, const char* what);

/// Channel-axis concatenation of rank-4 tensors sharing spatial extents.
Tensor concat_channels(std::span<const Tensor> parts);

/// Channels [begin, begin + count) of a rank-4 tensor.
Tensor slice_channels(const Tensor& t, std::size_t begin, std::size_t count);

}  // namespace vpcnn
