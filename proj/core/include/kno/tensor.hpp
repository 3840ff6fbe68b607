#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace kno {

/// Dense row-major tensor of 64-bit floats. Shapes are small (<= 3 axes in
/// practice); data length always equals the product of the extents.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, double value);
  static Tensor scalar(double value);

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }
  bool is_scalar() const { return size() == 1; }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // 2-D / 3-D accessors (row-major).
  double& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
  const double& at(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }
  double& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const double& at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;

  /// Throws NumericError if any entry is NaN or infinite.
  void check_finite(const char* what) const;
};

std::int64_t shape_product(const std::vector<std::int64_t>& shape);

}  // namespace kno
