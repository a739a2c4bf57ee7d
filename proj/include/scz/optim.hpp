#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "scz/layers.hpp"
#include "scz/tensor.hpp"

namespace scz {

struct LossValue {
  double value = 0.0;
  Tensor gradient;  // d(loss)/d(logits), same shape as the logits
};

// Mean over the batch of -log softmax(logits)[label], computed through
// log-sum-exp. logits [B,K], labels.size() == B, labels in [0,K).
// Errc::bad_label on out-of-range labels.
LossValue softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moments are created lazily on the first step and must keep matching the
// parameter shapes afterwards.
struct AdamState {
  AdamConfig config;
  std::uint64_t step_count = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

// One bias-corrected Adam update of every parameter from its gradient.
// Errc::shape_mismatch when a gradient or stored moment disagrees in shape.
void adam_step(std::span<const ParamRef> params, AdamState& state);

}  // namespace scz
