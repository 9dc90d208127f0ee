#include "vpcnn/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "vpcnn/error.hpp"

namespace vpcnn {

std::size_t num_elements(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Dims dims, double fill) : dims_(std::move(dims)) {
  for (auto d : dims_)
    if (d == 0) throw ShapeError("tensor extents must be positive: " + to_string(dims_));
  data_.assign(num_elements(dims_), fill);
}

Tensor::Tensor(Dims dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  for (auto d : dims_)
    if (d == 0) throw ShapeError("tensor extents must be positive: " + to_string(dims_));
  if (num_elements(dims_) != data_.size())
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match dims " + to_string(dims_));
}

Tensor Tensor::scalar(double value) { return Tensor(Dims{1}, value); }

std::size_t Tensor::flat_index(std::span<const std::size_t> index) const {
  if (index.size() != dims_.size())
    throw ShapeError("index rank " + std::to_string(index.size()) +
                     " != tensor rank " + std::to_string(dims_.size()));
  std::size_t flat = 0;
  for (std::size_t k = 0; k < dims_.size(); ++k) {
    if (index[k] >= dims_[k]) throw ShapeError("index out of range on axis " + std::to_string(k));
    flat = flat * dims_[k] + index[k];
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return data_[flat_index(std::span(index.begin(), index.size()))];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(std::span(index.begin(), index.size()))];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor with dims " + to_string(dims_));
  return data_[0];
}

void Tensor::enable_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

Tensor Tensor::reshaped(Dims dims) const {
  return Tensor(std::move(dims), data_);
}

void require_same_dims(const Tensor& a, const Tensor& b, const char* what) {
  if (a.dims() != b.dims())
    throw ShapeError(std::string(what) + ": dims " + to_string(a.dims()) + " vs " +
                     to_string(b.dims()));
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Dims dims = parts.front().dims();
  if (dims.size() != 4) throw ShapeError("concat_channels expects rank-4 tensors");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    if (p.rank() != 4 || !std::equal(p.dims().begin() + 1, p.dims().end(), dims.begin() + 1))
      throw ShapeError("concat_channels: spatial dims differ");
    channels += p.dim(0);
  }
  dims[0] = channels;
  std::vector<double> data;
  data.reserve(num_elements(dims));
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor(std::move(dims), std::move(data));
}

Tensor slice_channels(const Tensor& t, std::size_t begin, std::size_t count) {
  if (t.rank() != 4) throw ShapeError("slice_channels expects a rank-4 tensor");
  if (count == 0 || begin + count > t.dim(0)) throw ShapeError("slice_channels: range out of bounds");
  const std::size_t plane = t.size() / t.dim(0);
  Dims dims = t.dims();
  dims[0] = count;
  auto first = t.data().begin() + static_cast<std::ptrdiff_t>(begin * plane);
  return Tensor(std::move(dims),
                std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * plane)));
}

}  // namespace vpcnn
