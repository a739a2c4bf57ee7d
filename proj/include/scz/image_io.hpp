#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "scz/image.hpp"

namespace scz {

// Decodes binary PGM (P5, maxval <= 255) or 8-bit PNG (gray, RGB, palette;
// alpha is composited onto white). Color is reduced to Rec. 709 luma.
// Errors: Errc::unsupported_format for unknown signatures or bit depths,
// Errc::unreadable_file for truncated or corrupt streams.
Image decode_image(std::span<const std::uint8_t> bytes);
Image load_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_pgm(const Image& img);
std::vector<std::uint8_t> encode_png(const Image& img);

// Format picked from the extension (.pgm or .png).
void save_image(const Image& img, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

bool is_image_path(const std::filesystem::path& path);

}  // namespace scz
