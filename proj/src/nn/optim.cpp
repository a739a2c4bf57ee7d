#include "scz/optim.hpp"

#include <algorithm>
#include <cmath>

#include "scz/error.hpp"

namespace scz {

LossValue softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (B == 0 || labels.size() != B) {
    throw Error(Errc::shape_mismatch, "softmax_cross_entropy: need one label per logit row");
  }
  LossValue out{0.0, Tensor(logits.shape())};
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= K) {
      throw Error(Errc::bad_label, "label " + std::to_string(label) + " out of range");
    }
    const double* z = logits.ptr() + b * K;
    const double m = *std::max_element(z, z + K);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += std::exp(z[k] - m);
    const double log_total = std::log(total);
    out.value += (log_total - (z[label] - m)) * inv_b;
    for (std::size_t k = 0; k < K; ++k) {
      const double p = std::exp(z[k] - m - log_total);
      out.gradient[b * K + k] = (p - (static_cast<std::size_t>(label) == k ? 1.0 : 0.0)) * inv_b;
    }
  }
  return out;
}

void adam_step(std::span<const ParamRef> params, AdamState& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value->shape());
      state.second_moment.emplace_back(p.value->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw Error(Errc::shape_mismatch, "adam: parameter count changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(*params[i].grad, params[i].value->shape(), "adam gradient " + params[i].name);
    require_shape(state.first_moment[i], params[i].value->shape(), "adam moment " + params[i].name);
  }

  const AdamConfig& c = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].value->data();
    auto grad = params[i].grad->data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * grad[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * grad[j] * grad[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      value[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace scz
