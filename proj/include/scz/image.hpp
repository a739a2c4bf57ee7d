#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scz {

// Row-major 2-D grid of doubles. Two instantiations exist:
//   Image      intensities in [0,1], 0 = ink, 1 = paper.
//   FilterMap  signed, unbounded filter responses.
template <typename Tag>
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, double fill = 0.0)
      : width_(width), height_(height), values_(checked_count(width, height), fill) {}
  Raster(int width, int height, std::vector<double> values)
      : width_(width), height_(height), values_(std::move(values)) {
    if (values_.size() != checked_count(width, height)) {
      throw std::invalid_argument("raster value count does not match dimensions");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return values_.empty(); }
  std::size_t size() const noexcept { return values_.size(); }

  double at(int x, int y) const { return values_[index(x, y)]; }
  double& at(int x, int y) { return values_[index(x, y)]; }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  bool operator==(const Raster&) const = default;

 private:
  static std::size_t checked_count(int width, int height) {
    if (width < 0 || height < 0) throw std::invalid_argument("negative raster dimension");
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

struct IntensityTag {};
struct ResponseTag {};

using Image = Raster<IntensityTag>;
using FilterMap = Raster<ResponseTag>;

// Throws Errc::unsupported_format unless every pixel is finite and in [0,1].
void validate_intensities(const Image& img);

// Square kernel of side 2*radius+1, addressed by offsets in [-radius, radius].
class Kernel {
 public:
  Kernel() = default;
  Kernel(int radius, std::vector<double> weights);

  int radius() const noexcept { return radius_; }
  int side() const noexcept { return 2 * radius_ + 1; }
  double at(int dx, int dy) const {
    return weights_[static_cast<std::size_t>(dy + radius_) * side() + static_cast<std::size_t>(dx + radius_)];
  }
  std::span<const double> weights() const noexcept { return weights_; }
  double sum() const;

 private:
  int radius_ = 0;
  std::vector<double> weights_;
};

enum class BorderPolicy { replicate, reflect, zero };

std::string_view to_string(BorderPolicy policy);
BorderPolicy parse_border_policy(std::string_view name);

}  // namespace scz
