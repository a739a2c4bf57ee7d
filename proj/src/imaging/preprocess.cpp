#include "scz/preprocess.hpp"

#include <algorithm>
#include <string>

#include "scz/error.hpp"

namespace scz {

void PreprocessConfig::validate() const {
  if (canvas_w <= 0 || canvas_h <= 0) throw Error(Errc::bad_config, "canvas dimensions must be positive");
  if (!(sigma > 0.0)) throw Error(Errc::invalid_sigma, "sigma must be positive");
  if (radius < 1) throw Error(Errc::bad_config, "radius must be >= 1");
  if (!(ink_threshold > 0.0 && ink_threshold < 1.0)) {
    throw Error(Errc::bad_config, "ink_threshold must lie in (0,1)");
  }
}

KeyValues PreprocessConfig::to_kv() const {
  KeyValues kv;
  kv.set("canvas_w", static_cast<long long>(canvas_w));
  kv.set("canvas_h", static_cast<long long>(canvas_h));
  kv.set("sigma", sigma);
  kv.set("radius", static_cast<long long>(radius));
  kv.set("border", std::string(to_string(border)));
  kv.set("ink_threshold", ink_threshold);
  return kv;
}

PreprocessConfig PreprocessConfig::from_kv(const KeyValues& kv) {
  PreprocessConfig c;
  c.canvas_w = static_cast<int>(kv.get_int("canvas_w", c.canvas_w));
  c.canvas_h = static_cast<int>(kv.get_int("canvas_h", c.canvas_h));
  c.sigma = kv.get_double("sigma", c.sigma);
  c.radius = static_cast<int>(kv.get_int("radius", c.radius));
  c.border = parse_border_policy(kv.get_string("border", std::string(to_string(c.border))));
  c.ink_threshold = kv.get_double("ink_threshold", c.ink_threshold);
  c.validate();
  return c;
}

PreprocessConfig PreprocessConfig::read(const std::filesystem::path& path) {
  return from_kv(KeyValues::read(path));
}

ContentBox find_content(const Image& img, double ink_threshold) {
  int min_x = img.width(), min_y = img.height(), max_x = -1, max_y = -1;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (img.at(x, y) < ink_threshold) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
    }
  }
  if (max_x < 0) throw Error(Errc::no_ink, "no pixel darker than the ink threshold");
  return {min_x, min_y, max_x - min_x + 1, max_y - min_y + 1};
}

Image crop(const Image& img, const ContentBox& box) {
  Image out(box.width, box.height);
  for (int y = 0; y < box.height; ++y) {
    for (int x = 0; x < box.width; ++x) out.at(x, y) = img.at(box.x0 + x, box.y0 + y);
  }
  return out;
}

Image crop_to_content(const Image& img, double ink_threshold) {
  if (img.empty()) throw Error(Errc::empty_image, "cannot crop an empty image");
  return crop(img, find_content(img, ink_threshold));
}

Image center_pad(const Image& img, int target_width, int target_height, double fill) {
  if (img.width() > target_width || img.height() > target_height) {
    throw Error(Errc::target_too_small, "content " + std::to_string(img.width()) + "x" +
                                            std::to_string(img.height()) + " does not fit canvas " +
                                            std::to_string(target_width) + "x" + std::to_string(target_height));
  }
  Image out(target_width, target_height, fill);
  const int ox = (target_width - img.width()) / 2;
  const int oy = (target_height - img.height()) / 2;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) out.at(ox + x, oy + y) = img.at(x, y);
  }
  return out;
}

Image preprocess(const Image& img, const PreprocessConfig& cfg) {
  cfg.validate();
  const Image content = crop_to_content(img, cfg.ink_threshold);
  const Image canvas = center_pad(content, cfg.canvas_w, cfg.canvas_h, 1.0);
  const FilterMap response = laplacian_of_gaussian(canvas, cfg.sigma, cfg.radius, cfg.border, LogPath::analytic);
  return normalize_filtermap(response);
}

}  // namespace scz
