#include "salcal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "salcal/error.hpp"

namespace salcal {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<Index>(data_.size()) != shape_numel(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
  check_finite("Tensor");
}

Tensor::Tensor(Shape shape, std::initializer_list<float> data)
    : Tensor(std::move(shape), std::vector<float>(data)) {}

Tensor Tensor::filled(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  t.check_finite("Tensor::filled");
  return t;
}

Tensor Tensor::from_image(const Image2D& image) {
  Tensor t({image.rows(), image.cols()});
  t.image() = image;
  t.check_finite("Tensor::from_image");
  return t;
}

Eigen::Map<Image2D> Tensor::image() {
  if (rank() != 2) throw ShapeError("image view needs a rank-2 tensor, got " + shape_to_string(shape_));
  return {data_.data(), shape_[0], shape_[1]};
}

Eigen::Map<const Image2D> Tensor::image() const {
  if (rank() != 2) throw ShapeError("image view needs a rank-2 tensor, got " + shape_to_string(shape_));
  return {data_.data(), shape_[0], shape_[1]};
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

Tensor Tensor::slice_rows(Index begin, Index count) const {
  if (rank() == 0 || begin < 0 || count <= 0 || begin + count > shape_[0]) {
    throw ShapeError("row slice out of range for shape " + shape_to_string(shape_));
  }
  const Index stride = size() / shape_[0];
  Shape s = shape_;
  s[0] = count;
  Tensor t;
  t.shape_ = std::move(s);
  t.data_.assign(data_.begin() + begin * stride, data_.begin() + (begin + count) * stride);
  return t;
}

void Tensor::set_row(Index row, const Tensor& value) {
  const Index stride = size() / shape_.at(0);
  if (value.size() != stride || row < 0 || row >= shape_[0]) {
    throw ShapeError("set_row: value " + shape_to_string(value.shape()) + " does not fit row of " +
                     shape_to_string(shape_));
  }
  std::copy(value.data_.begin(), value.data_.end(), data_.begin() + row * stride);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void Tensor::check_finite(const char* where) const {
  if (!all_finite()) throw NumericError(std::string(where) + ": non-finite value in tensor " + shape_to_string(shape_));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  Shape s{static_cast<Index>(items.size())};
  s.insert(s.end(), items[0].shape().begin(), items[0].shape().end());
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(shape_numel(s)));
  for (const Tensor& t : items) {
    if (t.shape() != items[0].shape()) {
      throw ShapeError("stack: shape " + shape_to_string(t.shape()) + " differs from " +
                       shape_to_string(items[0].shape()));
    }
    data.insert(data.end(), t.storage().begin(), t.storage().end());
  }
  return Tensor(std::move(s), std::move(data));
}

}  // namespace salcal
