#pragma once

#include <filesystem>

#include "scz/filters.hpp"
#include "scz/image.hpp"
#include "scz/kv_config.hpp"

namespace scz {

struct PreprocessConfig {
  int canvas_w = 128;
  int canvas_h = 128;
  double sigma = 2.0;
  int radius = 8;
  BorderPolicy border = BorderPolicy::replicate;
  double ink_threshold = 0.5;

  // Throws Errc::bad_config on out-of-range values.
  void validate() const;

  KeyValues to_kv() const;
  static PreprocessConfig from_kv(const KeyValues& kv);
  static PreprocessConfig read(const std::filesystem::path& path);

  bool operator==(const PreprocessConfig&) const = default;
};

struct ContentBox {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;
};

// Tight bounding box of pixels strictly darker than `ink_threshold`.
// Errc::no_ink when there are none.
ContentBox find_content(const Image& img, double ink_threshold);
Image crop(const Image& img, const ContentBox& box);
Image crop_to_content(const Image& img, double ink_threshold);

// Places `img` at floor offsets inside a target-sized canvas of `fill`.
// Errc::target_too_small when the image does not fit.
Image center_pad(const Image& img, int target_width, int target_height, double fill);

// crop -> center/pad -> Laplacian of Gaussian -> min-max normalize.
Image preprocess(const Image& img, const PreprocessConfig& cfg);

}  // namespace scz
