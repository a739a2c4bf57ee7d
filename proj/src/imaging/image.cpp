#include "scz/image.hpp"

#include <cmath>
#include <numeric>

#include "scz/error.hpp"

namespace scz {

void validate_intensities(const Image& img) {
  for (double v : img.values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw Error(Errc::unsupported_format, "image intensity outside [0,1]");
    }
  }
}

Kernel::Kernel(int radius, std::vector<double> weights) : radius_(radius), weights_(std::move(weights)) {
  if (radius < 0) throw std::invalid_argument("negative kernel radius");
  const auto side = static_cast<std::size_t>(2 * radius + 1);
  if (weights_.size() != side * side) throw std::invalid_argument("kernel weight count must be side^2");
  for (double w : weights_) {
    if (!std::isfinite(w)) throw std::invalid_argument("non-finite kernel weight");
  }
}

double Kernel::sum() const { return std::accumulate(weights_.begin(), weights_.end(), 0.0); }

std::string_view to_string(BorderPolicy policy) {
  switch (policy) {
    case BorderPolicy::replicate: return "replicate";
    case BorderPolicy::reflect: return "reflect";
    case BorderPolicy::zero: return "zero";
  }
  return "replicate";
}

BorderPolicy parse_border_policy(std::string_view name) {
  if (name == "replicate") return BorderPolicy::replicate;
  if (name == "reflect") return BorderPolicy::reflect;
  if (name == "zero") return BorderPolicy::zero;
  throw Error(Errc::bad_config, "unknown border policy '" + std::string(name) + "'");
}

}  // namespace scz
