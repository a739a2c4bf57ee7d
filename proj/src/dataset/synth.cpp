#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "scz/dataset.hpp"
#include "scz/error.hpp"
#include "scz/rng.hpp"

namespace scz {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Nominal loop geometry; every sample jitters these independently of class.
constexpr double kAdvance = 84.0;     // horizontal travel over the trace, px
constexpr double kLoopRadius = 9.0;   // horizontal loop radius, px
constexpr double kHalfHeight = 20.0;  // vertical loop radius, px
constexpr int kSamples = 6000;

void check_style(const ClassStyle& s, const char* which) {
  if (!(s.tremor_amplitude >= 0.0) || !(s.baseline_drift_deg >= 0.0) || s.baseline_drift_deg >= 45.0) {
    throw Error(Errc::bad_config, std::string(which) + ": amplitudes must be >= 0 and drift < 45 degrees");
  }
  if (!(s.height_shrink > 0.0 && s.height_shrink <= 1.0)) {
    throw Error(Errc::bad_config, std::string(which) + ": height_shrink must lie in (0,1]");
  }
}

void stamp(Image& img, double cx, double cy, double radius) {
  const int x0 = static_cast<int>(std::floor(cx - radius - 1.0));
  const int x1 = static_cast<int>(std::ceil(cx + radius + 1.0));
  const int y0 = static_cast<int>(std::floor(cy - radius - 1.0));
  const int y1 = static_cast<int>(std::ceil(cy + radius + 1.0));
  for (int y = std::max(0, y0); y <= std::min(img.height() - 1, y1); ++y) {
    for (int x = std::max(0, x0); x <= std::min(img.width() - 1, x1); ++x) {
      const double d = std::hypot(x - cx, y - cy);
      const double coverage = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      img.at(x, y) = std::min(img.at(x, y), 1.0 - coverage);
    }
  }
}

Image render(const SynthConfig& cfg, const ClassStyle& style, Rng& rng) {
  const double advance = kAdvance * rng.uniform(0.96, 1.04);
  const double radius = kLoopRadius * rng.uniform(0.92, 1.08);
  const double half_height = kHalfHeight * rng.uniform(0.96, 1.04) * style.height_shrink;
  const double phase = rng.uniform(-0.3, 0.3);
  const double drift_sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double drift_slope =
      drift_sign * std::tan(style.baseline_drift_deg * rng.uniform(0.8, 1.2) * std::numbers::pi / 180.0);

  double freq[3], tremor_phase[3];
  for (int j = 0; j < 3; ++j) {
    freq[j] = rng.uniform(35.0, 70.0);
    tremor_phase[j] = rng.uniform(0.0, kTwoPi);
  }
  const double tremor_scale = style.tremor_amplitude / std::sqrt(3.0);

  const double x0 = cfg.canvas_w / 2.0 - advance / 2.0 + rng.uniform(-8.0, 8.0);
  const double y0 = cfg.canvas_h / 2.0 + rng.uniform(-8.0, 8.0);

  Image img(cfg.canvas_w, cfg.canvas_h, 1.0);
  const double pen = cfg.stroke_width / 2.0;
  for (int i = 0; i <= kSamples; ++i) {
    const double t = static_cast<double>(i) / kSamples;
    double tremor = 0.0;
    for (int j = 0; j < 3; ++j) tremor += std::sin(kTwoPi * freq[j] * t + tremor_phase[j]);
    const double angle = kTwoPi * cfg.loops * t;
    const double x = x0 + advance * t + radius * std::cos(angle + phase);
    const double y = y0 + half_height * std::sin(angle) + drift_slope * advance * (t - 0.5) + tremor_scale * tremor;
    stamp(img, x, y, pen);
  }
  return img;
}

}  // namespace

void SynthConfig::validate() const {
  if (count_per_class < 1) throw Error(Errc::bad_config, "count_per_class must be >= 1");
  if (loops < 1) throw Error(Errc::bad_config, "loops must be >= 1");
  if (!(stroke_width > 0.0)) throw Error(Errc::bad_config, "stroke_width must be positive");
  if (canvas_w < 64 || canvas_h < 64) throw Error(Errc::bad_config, "synthetic canvas must be at least 64x64");
  check_style(control, "control");
  check_style(patient, "patient");
}

KeyValues SynthConfig::to_kv() const {
  KeyValues kv;
  kv.set("count_per_class", static_cast<long long>(count_per_class));
  kv.set("loops", static_cast<long long>(loops));
  kv.set("control.tremor_amplitude", control.tremor_amplitude);
  kv.set("control.height_shrink", control.height_shrink);
  kv.set("control.baseline_drift_deg", control.baseline_drift_deg);
  kv.set("patient.tremor_amplitude", patient.tremor_amplitude);
  kv.set("patient.height_shrink", patient.height_shrink);
  kv.set("patient.baseline_drift_deg", patient.baseline_drift_deg);
  kv.set("stroke_width", stroke_width);
  kv.set("canvas_w", static_cast<long long>(canvas_w));
  kv.set("canvas_h", static_cast<long long>(canvas_h));
  kv.set("seed", std::to_string(seed));
  return kv;
}

SynthConfig SynthConfig::from_kv(const KeyValues& kv) {
  SynthConfig c;
  c.count_per_class = static_cast<int>(kv.get_int("count_per_class", c.count_per_class));
  c.loops = static_cast<int>(kv.get_int("loops", c.loops));
  auto style = [&](const std::string& prefix, ClassStyle& s) {
    s.tremor_amplitude = kv.get_double(prefix + ".tremor_amplitude", s.tremor_amplitude);
    s.height_shrink = kv.get_double(prefix + ".height_shrink", s.height_shrink);
    s.baseline_drift_deg = kv.get_double(prefix + ".baseline_drift_deg", s.baseline_drift_deg);
  };
  style("control", c.control);
  style("patient", c.patient);
  c.stroke_width = kv.get_double("stroke_width", c.stroke_width);
  c.canvas_w = static_cast<int>(kv.get_int("canvas_w", c.canvas_w));
  c.canvas_h = static_cast<int>(kv.get_int("canvas_h", c.canvas_h));
  c.seed = kv.get_u64("seed", c.seed);
  c.validate();
  return c;
}

std::vector<LabeledItem> synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<LabeledItem> items;
  items.reserve(static_cast<std::size_t>(cfg.count_per_class) * 2);
  for (Label label : {Label::control, Label::patient}) {
    const ClassStyle& style = label == Label::patient ? cfg.patient : cfg.control;
    for (int i = 0; i < cfg.count_per_class; ++i) {
      Rng rng(cfg.seed, static_cast<std::uint64_t>(i) * 2 + static_cast<std::uint64_t>(label));
      char id[64];
      std::snprintf(id, sizeof id, "%s/%04d.png", std::string(to_string(label)).c_str(), i);
      items.push_back({render(cfg, style, rng), label, id, {}});
    }
  }
  return items;
}

}  // namespace scz
