#include "scz/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "scz/error.hpp"

namespace scz {
namespace {

constexpr double kLumaR = 0.2126;
constexpr double kLumaG = 0.7152;
constexpr double kLumaB = 0.0722;

std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

bool has_png_signature(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), sig, 8) == 0;
}

// Minimal P5 header tokenizer; '#' comments run to end of line.
class PgmHeader {
 public:
  explicit PgmHeader(std::span<const std::uint8_t> bytes) : bytes_(bytes), pos_(2) {}

  long next_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw Error(Errc::unreadable_file, "malformed PGM header");
    }
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000) throw Error(Errc::unreadable_file, "PGM header value too large");
      ++pos_;
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw Error(Errc::unreadable_file, "malformed PGM header");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

Image decode_pgm(std::span<const std::uint8_t> bytes) {
  PgmHeader header(bytes);
  const long width = header.next_int();
  const long height = header.next_int();
  const long maxval = header.next_int();
  if (width <= 0 || height <= 0) throw Error(Errc::unreadable_file, "PGM has empty dimensions");
  if (maxval <= 0 || maxval > 255) throw Error(Errc::unsupported_format, "PGM maxval must be in 1..255");
  const std::size_t offset = header.raster_offset();
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() < offset + count) throw Error(Errc::unreadable_file, "truncated PGM raster");
  std::vector<double> px(count);
  for (std::size_t i = 0; i < count; ++i) {
    px[i] = std::min(1.0, static_cast<double>(bytes[offset + i]) / static_cast<double>(maxval));
  }
  return Image(static_cast<int>(width), static_cast<int>(height), std::move(px));
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw Error(Errc::unreadable_file, std::string("cannot read PNG header: ") + png.message);
  }
  if (png.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&png);
    throw Error(Errc::unsupported_format, "only 8-bit PNG is supported");
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  png_color white{255, 255, 255};
  if (!png_image_finish_read(&png, &white, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(Errc::unreadable_file, "cannot decode PNG: " + msg);
  }
  const int w = static_cast<int>(png.width);
  const int h = static_cast<int>(png.height);
  std::vector<double> px(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (channels == 1) {
      px[i] = buffer[i] / 255.0;
    } else {
      const double r = buffer[3 * i], g = buffer[3 * i + 1], b = buffer[3 * i + 2];
      px[i] = std::clamp((kLumaR * r + kLumaG * g + kLumaB * b) / 255.0, 0.0, 1.0);
    }
  }
  return Image(w, h, std::move(px));
}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (has_png_signature(bytes)) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes);
  throw Error(Errc::unsupported_format, "not a binary PGM or PNG stream");
}

Image load_image(const std::filesystem::path& path) { return decode_image(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_pgm(const Image& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.size());
  for (double v : img.values()) out.push_back(quantize(v));
  return out;
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.empty()) throw Error(Errc::empty_image, "cannot encode an empty image");
  std::vector<png_byte> px(img.size());
  std::transform(img.values().begin(), img.values().end(), px.begin(), quantize);

  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = PNG_FORMAT_GRAY;

  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(png, size, 0, px.data(), 0, nullptr)) {
    throw Error(Errc::io_error, std::string("PNG size query failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, px.data(), 0, nullptr)) {
    throw Error(Errc::io_error, std::string("PNG encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

void save_image(const Image& img, const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") {
    write_file_bytes(path, encode_png(img));
  } else if (ext == ".pgm") {
    write_file_bytes(path, encode_pgm(img));
  } else {
    throw Error(Errc::unsupported_format, "cannot infer image format from " + path.string());
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::unreadable_file, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(Errc::unreadable_file, "read failed for " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

bool is_image_path(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  return ext == ".png" || ext == ".pgm";
}

}  // namespace scz
