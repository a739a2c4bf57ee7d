#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scz {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major n-d array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  void fill(double v);
  Tensor& operator+=(const Tensor& other);

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Errc::shape_mismatch unless `t` has exactly `expected` shape.
void require_shape(const Tensor& t, const Shape& expected, std::string_view where);
// Errc::shape_mismatch unless rank matches.
void require_rank(const Tensor& t, std::size_t rank, std::string_view where);
// Errc::non_finite when any element is NaN or infinite.
void require_finite(const Tensor& t, std::string_view where);

// Debug dump: one text line "tensor <rank> <d0> ... <dn-1>\n" followed by
// little-endian IEEE-754 binary32 values.
void write_tensor_dump(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor_dump(const std::filesystem::path& path);

}  // namespace scz
