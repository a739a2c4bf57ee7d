#include "scz/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scz/rng.hpp"

namespace scz {
namespace {

Tensor draw_input(const Shape& shape, const GradCheckOptions& o, Rng& rng) {
  Tensor x(shape);
  if (o.distinct_spacing > 0.0) {
    std::vector<double> lattice(x.size());
    for (std::size_t i = 0; i < lattice.size(); ++i) {
      lattice[i] = (static_cast<double>(i) - static_cast<double>(lattice.size()) / 2.0) * o.distinct_spacing;
    }
    rng.shuffle(std::span<double>(lattice));
    std::copy(lattice.begin(), lattice.end(), x.data().begin());
    return x;
  }
  for (auto& v : x.data()) {
    const double mag = o.min_abs + (1.0 - o.min_abs) * rng.uniform();
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return x;
}

std::vector<std::size_t> pick_entries(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n > limit) {
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(limit);
  }
  return idx;
}

double probe(Layer& layer, const Tensor& x, const Tensor& coeff, Mode mode) {
  const Tensor y = layer.forward(x, mode);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += coeff[i] * y[i];
  return s;
}

double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace

GradCheckResult grad_check(Layer& layer, const Shape& input_shape, const GradCheckOptions& o) {
  Rng rng(o.seed);
  Tensor x = draw_input(input_shape, o, rng);
  Tensor coeff(layer.output_shape(input_shape));
  for (auto& c : coeff.data()) c = rng.uniform(-1.0, 1.0);

  if (o.randomize_params) {
    for (auto& p : layer.params()) {
      for (auto& v : p.value->data()) v = rng.uniform(-1.0, 1.0);
    }
  }

  layer.freeze_randomness(true);
  layer.zero_grad();
  layer.forward(x, o.mode);
  const Tensor dx = layer.backward(coeff);

  GradCheckResult result;
  auto record = [&](double analytic, double numeric, const std::string& where) {
    const double e = rel_error(analytic, numeric, o.floor);
    ++result.checked;
    if (result.checked == 1 || e > result.max_rel_error) {
      result.max_rel_error = e;
      result.worst_entry = where;
    }
  };

  // Central difference in the scalar `v`, which the probe reads.
  auto difference = [&](double& v, double eps) {
    const double saved = v;
    v = saved + eps;
    const double up = probe(layer, x, coeff, o.mode);
    v = saved - eps;
    const double down = probe(layer, x, coeff, o.mode);
    v = saved;
    return (up - down) / (2.0 * eps);
  };
  auto check = [&](double& v, double analytic, const std::string& where) {
    const double numeric = difference(v, o.epsilon);
    if (o.skip_kinks && rel_error(numeric, difference(v, o.epsilon / 2), o.floor) > o.kink_tolerance) {
      ++result.skipped;
      return;
    }
    record(analytic, numeric, where);
  };

  for (std::size_t i : pick_entries(x.size(), o.max_entries, rng)) {
    check(x[i], dx[i], "input[" + std::to_string(i) + "]");
  }
  for (auto& p : layer.params()) {
    const Tensor analytic = *p.grad;
    for (std::size_t i : pick_entries(p.value->size(), o.max_entries, rng)) {
      check((*p.value)[i], analytic[i], p.name + "[" + std::to_string(i) + "]");
    }
  }
  layer.freeze_randomness(false);
  return result;
}

}  // namespace scz
