#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace salcal {

using Index = std::int64_t;
using Shape = std::vector<Index>;

// Row-major 2-D views used for images, saliency maps and weight matrices.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowArray2 = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Image2D = RowArray2<float>;

std::string shape_to_string(const Shape& shape);
Index shape_numel(const Shape& shape);

// Dense row-major float32 array. Every tensor holds only finite values; the
// constructors and all library operations check this.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero filled
  Tensor(Shape shape, std::vector<float> data);
  Tensor(Shape shape, std::initializer_list<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, float value);
  static Tensor from_image(const Image2D& image);

  const Shape& shape() const { return shape_; }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  const std::vector<float>& storage() const { return data_; }

  float& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  float operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  // Flat Eigen views over the storage.
  Eigen::Map<Eigen::ArrayXf> array() { return {data_.data(), size()}; }
  Eigen::Map<const Eigen::ArrayXf> array() const { return {data_.data(), size()}; }

  // Rank-2 tensors viewed as row-major matrices.
  Eigen::Map<Image2D> image();
  Eigen::Map<const Image2D> image() const;

  Tensor reshaped(Shape shape) const;

  // Sub-tensor along the leading axis, rows [begin, begin + count).
  Tensor slice_rows(Index begin, Index count) const;
  void set_row(Index row, const Tensor& value);

  bool all_finite() const;
  // Throws NumericError naming `where` if any value is NaN or Inf.
  void check_finite(const char* where) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Stacks same-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);

}  // namespace salcal
