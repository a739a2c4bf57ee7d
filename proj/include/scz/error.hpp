#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scz {

// Closed set of failure kinds. The snake_case names returned by to_string()
// are part of the CLI and HTTP error surface; do not rename them.
enum class Errc {
  unreadable_file,
  unsupported_format,
  no_ink,
  target_too_small,
  invalid_sigma,
  empty_image,
  angle_out_of_range,
  shape_mismatch,
  no_cached_forward,
  odd_spatial_dim,
  bad_label,
  bad_magic,
  crc_mismatch,
  schema_mismatch,
  unsupported_version,
  missing_class_dir,
  empty_class,
  bad_config,
  too_few_items,
  empty_split,
  diverged_loss,
  empty_eval,
  io_error,
  non_finite,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace scz
