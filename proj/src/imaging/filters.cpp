#include "scz/filters.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <span>
#include <vector>

#include "scz/error.hpp"

namespace scz {
namespace {

void check_kernel_args(double sigma, int radius) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw Error(Errc::invalid_sigma, "sigma must be a positive finite number");
  }
  if (radius < 1) throw Error(Errc::bad_config, "kernel radius must be >= 1");
  if (radius < static_cast<int>(std::ceil(2.0 * sigma))) {
    std::clog << "warning: kernel radius " << radius << " truncates sigma " << sigma
              << " below 2 sigma\n";
  }
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

double sample(std::span<const double> v, int w, int h, int x, int y, BorderPolicy border) {
  if (x >= 0 && x < w && y >= 0 && y < h) return v[static_cast<std::size_t>(y) * w + x];
  switch (border) {
    case BorderPolicy::zero:
      return 0.0;
    case BorderPolicy::replicate:
      x = std::clamp(x, 0, w - 1);
      y = std::clamp(y, 0, h - 1);
      break;
    case BorderPolicy::reflect:
      x = reflect_index(x, w);
      y = reflect_index(y, h);
      break;
  }
  return v[static_cast<std::size_t>(y) * w + x];
}

FilterMap convolve_values(std::span<const double> in, int w, int h, const Kernel& k, BorderPolicy border) {
  if (in.empty() || w <= 0 || h <= 0) throw Error(Errc::empty_image, "cannot convolve an empty image");
  const int r = k.radius();
  FilterMap out(w, h);
  for (int y = 0; y < h; ++y) {
    const bool y_inside = y - r >= 0 && y + r < h;
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      if (y_inside && x - r >= 0 && x + r < w) {
        for (int dy = -r; dy <= r; ++dy) {
          const double* row = in.data() + static_cast<std::size_t>(y - dy) * w + x;
          for (int dx = -r; dx <= r; ++dx) acc += k.at(dx, dy) * row[-dx];
        }
      } else {
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) acc += k.at(dx, dy) * sample(in, w, h, x - dx, y - dy, border);
        }
      }
      out.at(x, y) = acc;
    }
  }
  return out;
}

const Kernel& five_point_laplacian() {
  static const Kernel k(1, {0, 1, 0, 1, -4, 1, 0, 1, 0});
  return k;
}

}  // namespace

Kernel gaussian_kernel(double sigma, int radius) {
  check_kernel_args(sigma, radius);
  const int side = 2 * radius + 1;
  std::vector<double> w(static_cast<std::size_t>(side) * side);
  const double denom = 2.0 * sigma * sigma;
  double total = 0.0;
  for (int y = -radius; y <= radius; ++y) {
    for (int x = -radius; x <= radius; ++x) {
      const double v = std::exp(-static_cast<double>(x * x + y * y) / denom);
      w[static_cast<std::size_t>(y + radius) * side + (x + radius)] = v;
      total += v;
    }
  }
  for (double& v : w) v /= total;
  return Kernel(radius, std::move(w));
}

Kernel log_kernel(double sigma, int radius) {
  check_kernel_args(sigma, radius);
  const int side = 2 * radius + 1;
  std::vector<double> w(static_cast<std::size_t>(side) * side);
  const double s2 = sigma * sigma;
  const double s4 = s2 * s2;
  double gauss_total = 0.0;
  for (int y = -radius; y <= radius; ++y) {
    for (int x = -radius; x <= radius; ++x) {
      const double r2 = static_cast<double>(x * x + y * y);
      const double g = std::exp(-r2 / (2.0 * s2));
      w[static_cast<std::size_t>(y + radius) * side + (x + radius)] = ((r2 - 2.0 * s2) / s4) * g;
      gauss_total += g;
    }
  }
  // Same normalizer as gaussian_kernel, so this is the Laplacian of that
  // kernel and both LoG paths agree in scale.
  double total = 0.0;
  for (double& v : w) {
    v /= gauss_total;
    total += v;
  }
  const double mean = total / static_cast<double>(w.size());
  for (double& v : w) v -= mean;
  return Kernel(radius, std::move(w));
}

FilterMap convolve(const Image& img, const Kernel& kernel, BorderPolicy border) {
  return convolve_values(img.values(), img.width(), img.height(), kernel, border);
}

FilterMap convolve(const FilterMap& map, const Kernel& kernel, BorderPolicy border) {
  return convolve_values(map.values(), map.width(), map.height(), kernel, border);
}

FilterMap laplacian_of_gaussian(const Image& img, double sigma, int radius, BorderPolicy border, LogPath path) {
  if (path == LogPath::analytic) return convolve(img, log_kernel(sigma, radius), border);
  const FilterMap smoothed = convolve(img, gaussian_kernel(sigma, radius), border);
  return convolve(smoothed, five_point_laplacian(), border);
}

Image normalize_filtermap(const FilterMap& map) {
  if (map.empty()) return Image(map.width(), map.height());
  const auto [lo_it, hi_it] = std::minmax_element(map.values().begin(), map.values().end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  Image out(map.width(), map.height(), 0.5);
  if (hi == lo) return out;
  const double range = hi - lo;
  auto src = map.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::clamp((src[i] - lo) / range, 0.0, 1.0);
  return out;
}

}  // namespace scz
