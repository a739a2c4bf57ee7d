#include "scz/error.hpp"

namespace scz {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::unreadable_file: return "unreadable_file";
    case Errc::unsupported_format: return "unsupported_format";
    case Errc::no_ink: return "no_ink";
    case Errc::target_too_small: return "target_too_small";
    case Errc::invalid_sigma: return "invalid_sigma";
    case Errc::empty_image: return "empty_image";
    case Errc::angle_out_of_range: return "angle_out_of_range";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::no_cached_forward: return "no_cached_forward";
    case Errc::odd_spatial_dim: return "odd_spatial_dim";
    case Errc::bad_label: return "bad_label";
    case Errc::bad_magic: return "bad_magic";
    case Errc::crc_mismatch: return "crc_mismatch";
    case Errc::schema_mismatch: return "schema_mismatch";
    case Errc::unsupported_version: return "unsupported_version";
    case Errc::missing_class_dir: return "missing_class_dir";
    case Errc::empty_class: return "empty_class";
    case Errc::bad_config: return "bad_config";
    case Errc::too_few_items: return "too_few_items";
    case Errc::empty_split: return "empty_split";
    case Errc::diverged_loss: return "diverged_loss";
    case Errc::empty_eval: return "empty_eval";
    case Errc::io_error: return "io_error";
    case Errc::non_finite: return "non_finite";
  }
  return "unknown";
}

}  // namespace scz
