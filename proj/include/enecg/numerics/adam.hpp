#pragma once

#include <cmath>
#include <utility>
#include <span>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/numerics/tensor.hpp"

namespace enecg::numerics {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for one fixed, ordered parameter list.
struct AdamState {
  explicit AdamState(AdamOptions opts = {}) : options(opts) {}

  AdamOptions options;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::size_t step = 0;
};

/// Bias-corrected Adam update in place. Gradients are left untouched.
inline void adam_step(std::span<Tensor* const> params, AdamState& state) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->has_grad()) {
      throw UsageError("adam_step: parameter " + std::to_string(i) + " " +
                       shape_str(params[i]->shape()) + " has no gradient");
    }
  }
  if (state.first_moment.empty()) {
    for (Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw UsageError("adam_step: parameter list changed size between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].shape() != params[i]->shape()) {
      throw DimensionError("adam_step: moment shape " +
                           shape_str(state.first_moment[i].shape()) + " vs parameter " +
                           shape_str(params[i]->shape()));
    }
  }

  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->data();
    auto g = std::as_const(*params[i]).grad();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
    }
  }
}

}  // namespace enecg::numerics
