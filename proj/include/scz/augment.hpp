#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scz/image.hpp"
#include "scz/kv_config.hpp"
#include "scz/label.hpp"

namespace scz {

enum class Transform { original, shear, hflip };

// Which transform produced an item. `angle_deg` is meaningful for shear only.
struct Provenance {
  Transform transform = Transform::original;
  double angle_deg = 0.0;

  bool operator==(const Provenance&) const = default;
};

// "original", "shear(-7.25...)", "hflip"; parse() inverts str() exactly.
std::string to_string(const Provenance& p);
Provenance parse_provenance(std::string_view text);

struct AugmentConfig {
  double shear_min_deg = -15.0;
  double shear_max_deg = 15.0;
  // Draws closer to zero than this are rejected so the sheared copy differs.
  double shear_exclude_deg = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  KeyValues to_kv() const;
  static AugmentConfig from_kv(const KeyValues& kv);
};

// Horizontal shear about the vertical midline: x' = x + tan(angle) (y - h/2).
// Inverse-mapped with bilinear sampling; samples off the raster take `fill`.
// Errc::angle_out_of_range unless |angle| < 45.
Image shear(const Image& img, double angle_deg, double fill = 1.0);

Image hflip(const Image& img);

struct AugmentInput {
  Image image;
  Label label;
};

struct AugmentedItem {
  Image image;
  Label label;
  std::size_t source_index;
  Provenance provenance;
};

// Draws the shear angle for input `index` from the (seed, index) stream.
double draw_shear_angle(const AugmentConfig& cfg, std::size_t index);

// Emits original, sheared, and flipped copies of every input, in that order.
std::vector<AugmentedItem> augment_dataset(const std::vector<AugmentInput>& items, const AugmentConfig& cfg);

}  // namespace scz
