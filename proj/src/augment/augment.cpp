#include "scz/augment.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "scz/error.hpp"
#include "scz/rng.hpp"

namespace scz {

std::string to_string(const Provenance& p) {
  switch (p.transform) {
    case Transform::original: return "original";
    case Transform::hflip: return "hflip";
    case Transform::shear: {
      char buf[48];
      std::snprintf(buf, sizeof buf, "shear(%.17g)", p.angle_deg);
      return buf;
    }
  }
  return "original";
}

Provenance parse_provenance(std::string_view text) {
  if (text == "original") return {};
  if (text == "hflip") return {Transform::hflip, 0.0};
  if (text.starts_with("shear(") && text.ends_with(")")) {
    const std::string inner(text.substr(6, text.size() - 7));
    try {
      std::size_t used = 0;
      const double angle = std::stod(inner, &used);
      if (used == inner.size()) return {Transform::shear, angle};
    } catch (const std::exception&) {
    }
  }
  throw Error(Errc::bad_config, "bad provenance '" + std::string(text) + "'");
}

void AugmentConfig::validate() const {
  if (!(shear_min_deg <= shear_max_deg)) throw Error(Errc::bad_config, "shear_min_deg > shear_max_deg");
  if (!(shear_min_deg > -45.0 && shear_max_deg < 45.0)) {
    throw Error(Errc::bad_config, "shear range must lie within (-45, 45)");
  }
  if (shear_exclude_deg < 0.0) throw Error(Errc::bad_config, "shear_exclude_deg must be >= 0");
  if (!(shear_min_deg <= -shear_exclude_deg || shear_max_deg >= shear_exclude_deg)) {
    throw Error(Errc::bad_config, "shear range lies entirely inside the excluded band");
  }
}

KeyValues AugmentConfig::to_kv() const {
  KeyValues kv;
  kv.set("shear_min_deg", shear_min_deg);
  kv.set("shear_max_deg", shear_max_deg);
  kv.set("shear_exclude_deg", shear_exclude_deg);
  kv.set("seed", std::to_string(seed));
  return kv;
}

AugmentConfig AugmentConfig::from_kv(const KeyValues& kv) {
  AugmentConfig c;
  c.shear_min_deg = kv.get_double("shear_min_deg", c.shear_min_deg);
  c.shear_max_deg = kv.get_double("shear_max_deg", c.shear_max_deg);
  c.shear_exclude_deg = kv.get_double("shear_exclude_deg", c.shear_exclude_deg);
  c.seed = kv.get_u64("seed", c.seed);
  c.validate();
  return c;
}

Image shear(const Image& img, double angle_deg, double fill) {
  if (!(std::abs(angle_deg) < 45.0)) {
    throw Error(Errc::angle_out_of_range, "shear angle must satisfy |angle| < 45 degrees");
  }
  if (angle_deg == 0.0) return img;
  const double slope = std::tan(angle_deg * std::numbers::pi / 180.0);
  const int w = img.width();
  const int h = img.height();
  const double mid = h / 2.0;
  Image out(w, h, fill);
  for (int y = 0; y < h; ++y) {
    const double shift = slope * (y - mid);
    for (int x = 0; x < w; ++x) {
      // Rows move rigidly, so the bilinear weights collapse to a 1-D lerp.
      const double sx = x - shift;
      const double fx = std::floor(sx);
      const double t = sx - fx;
      const int x0 = static_cast<int>(fx);
      const double a = (x0 >= 0 && x0 < w) ? img.at(x0, y) : fill;
      const double b = (x0 + 1 >= 0 && x0 + 1 < w) ? img.at(x0 + 1, y) : fill;
      out.at(x, y) = (1.0 - t) * a + t * b;
    }
  }
  return out;
}

Image hflip(const Image& img) {
  Image out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) out.at(img.width() - 1 - x, y) = img.at(x, y);
  }
  return out;
}

double draw_shear_angle(const AugmentConfig& cfg, std::size_t index) {
  Rng rng(cfg.seed, index);
  for (;;) {
    const double a = rng.uniform(cfg.shear_min_deg, cfg.shear_max_deg);
    if (std::abs(a) >= cfg.shear_exclude_deg) return a;
  }
}

std::vector<AugmentedItem> augment_dataset(const std::vector<AugmentInput>& items, const AugmentConfig& cfg) {
  cfg.validate();
  std::vector<AugmentedItem> out;
  out.reserve(items.size() * 3);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& src = items[i];
    const double angle = draw_shear_angle(cfg, i);
    out.push_back({src.image, src.label, i, {Transform::original, 0.0}});
    out.push_back({shear(src.image, angle, 1.0), src.label, i, {Transform::shear, angle}});
    out.push_back({hflip(src.image), src.label, i, {Transform::hflip, 0.0}});
  }
  return out;
}

}  // namespace scz
