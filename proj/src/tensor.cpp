#include "spade/tensor.hpp"

#include <cmath>
#include <cstring>

#include "spade/error.hpp"

namespace spade {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " holds " + std::to_string(shape_numel(shape_)) +
                         " elements, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor({values.size()}, std::vector<float>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<float> values) {
  return Tensor({rows, cols}, std::vector<float>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[axis];
}

float& Tensor::at(std::size_t r, std::size_t c) { return data_[r * row_size() + c]; }
float Tensor::at(std::size_t r, std::size_t c) const { return data_[r * row_size() + c]; }

std::size_t Tensor::row_size() const {
  if (shape_.empty()) throw DimensionError("row access on a rank-0 tensor");
  return shape_.back();
}

std::size_t Tensor::rows() const {
  const std::size_t rs = row_size();
  return rs == 0 ? 0 : data_.size() / rs;
}

std::span<float> Tensor::row(std::size_t r) {
  const std::size_t rs = row_size();
  if (r >= rows()) throw DimensionError("row " + std::to_string(r) + " out of range for " + shape_str(shape_));
  return std::span<float>(data_).subspan(r * rs, rs);
}

std::span<const float> Tensor::row(std::size_t r) const {
  const std::size_t rs = row_size();
  if (r >= rows()) throw DimensionError("row " + std::to_string(r) + " out of range for " + shape_str(shape_));
  return std::span<const float>(data_).subspan(r * rs, rs);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::require_finite(const char* what) const {
  if (!all_finite()) throw NumericError(std::string(what) + " contains NaN or Inf");
}

void Tensor::require_shape(const Shape& expected, const char* what) const {
  if (shape_ != expected) {
    throw DimensionError(std::string(what) + ": expected " + shape_str(expected) + ", got " + shape_str(shape_));
  }
}

bool bit_equal(std::span<const float> a, std::span<const float> b) noexcept {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

float max_abs_diff(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff length mismatch");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace spade
