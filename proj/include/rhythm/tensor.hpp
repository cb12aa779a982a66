#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace rhythm {

// Storage precision. Values are always held as double; an f32 tensor has
// every element rounded to the nearest float after each write through
// round_to_dtype(), which is what the op layer calls on every output.
enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::f64);
  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::f64);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor vector(std::initializer_list<double> values);
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_, other.dtype_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  DType dtype() const { return dtype_; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major 2-D element access; rank must be 2.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const;

  Tensor reshaped(Shape shape) const;
  Tensor as_dtype(DType dtype) const;
  void round_to_dtype();

  bool all_finite() const;
  // Accumulates other into this; shapes must match exactly.
  Tensor& operator+=(const Tensor& other);

 private:
  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::f64;
};

// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace rhythm
