#include "scz/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "scz/error.hpp"

namespace scz {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw Error(Errc::shape_mismatch, "tensor data length " + std::to_string(data_.size()) +
                                          " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw Error(Errc::shape_mismatch, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_shape(other, shape_, "tensor add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

void require_shape(const Tensor& t, const Shape& expected, std::string_view where) {
  if (t.shape() != expected) {
    throw Error(Errc::shape_mismatch, std::string(where) + ": expected shape " + shape_str(expected) + ", got " +
                                          shape_str(t.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view where) {
  if (t.rank() != rank) {
    throw Error(Errc::shape_mismatch, std::string(where) + ": expected rank " + std::to_string(rank) + ", got " +
                                          shape_str(t.shape()));
  }
}

void require_finite(const Tensor& t, std::string_view where) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw Error(Errc::non_finite, std::string(where) + ": non-finite value");
  }
}

void write_tensor_dump(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << "tensor " << t.rank();
  for (auto d : t.shape()) out << ' ' << d;
  out << '\n';
  for (double v : t.data()) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

Tensor read_tensor_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::unreadable_file, "cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string tag;
  std::size_t rank = 0;
  if (!(hs >> tag >> rank) || tag != "tensor") throw Error(Errc::bad_magic, "not a tensor dump");
  Shape shape(rank);
  for (auto& d : shape) {
    if (!(hs >> d)) throw Error(Errc::unreadable_file, "truncated tensor dump header");
  }
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(Errc::unreadable_file, "truncated tensor dump");
    const std::uint32_t bits = std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 |
                               std::uint32_t{b[3]} << 24;
    v = std::bit_cast<float>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace scz
