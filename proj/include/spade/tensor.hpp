#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace spade {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major f32 array. No broadcasting: every operation states the
/// shapes it accepts and rejects anything else with DimensionError.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor vector(std::initializer_list<float> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<float> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& at(std::size_t r, std::size_t c);
  float at(std::size_t r, std::size_t c) const;

  /// Row `r` of a rank-2 tensor (or of the flattened leading axes).
  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;
  std::size_t rows() const;
  std::size_t row_size() const;

  /// Same data viewed under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;
  /// Throws NumericError naming `what` if any element is NaN or Inf.
  void require_finite(const char* what) const;
  void require_shape(const Shape& expected, const char* what) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Bitwise equality (distinguishes -0.0f from 0.0f and compares NaN payloads).
bool bit_equal(std::span<const float> a, std::span<const float> b) noexcept;

float max_abs_diff(std::span<const float> a, std::span<const float> b);

}  // namespace spade
