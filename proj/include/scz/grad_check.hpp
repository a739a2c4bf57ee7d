#pragma once

#include <cstdint>
#include <string>

#include "scz/layers.hpp"

namespace scz {

struct GradCheckOptions {
  double epsilon = 1e-4;
  Mode mode = Mode::eval;
  // Inputs are drawn from [-1,1]; with min_abs > 0 they avoid (-min_abs, min_abs)
  // so ReLU kinks stay out of reach of the perturbation.
  double min_abs = 0.0;
  // Draw inputs as a shuffled lattice with this spacing instead, so no two
  // entries tie (max-pooling needs a gap larger than epsilon).
  double distinct_spacing = 0.0;
  // Entries checked per tensor; larger tensors are sampled.
  std::size_t max_entries = 64;
  // Denominator floor of the relative error.
  double floor = 1e-6;
  // Overwrite the layer's parameters with uniform [-1,1] draws first.
  bool randomize_params = true;
  // For blocks with ReLUs inside, where inputs cannot keep every hidden
  // pre-activation away from zero: also difference with epsilon / 2 and skip
  // entries whose two estimates disagree by more than kink_tolerance
  // (relative). A smooth function agrees to O(epsilon^2); a kink inside the
  // stencil does not.
  bool skip_kinks = false;
  double kink_tolerance = 1e-3;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_entry;  // "input[17]" or "<param>[i]"
  std::size_t checked = 0;
  std::size_t skipped = 0;  // kink crossings, only with skip_kinks
};

// Compares analytic input and parameter gradients of the probe loss
// L = sum(c * layer(x)), with fixed random c, against central differences.
// Relative error per entry is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(Layer& layer, const Shape& input_shape, const GradCheckOptions& options = {});

}  // namespace scz
