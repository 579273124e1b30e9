#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "enecg/numerics/finite_diff.hpp"
#include "enecg/numerics/tape.hpp"

namespace enecg::test_support {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

using MultiFn = std::function<Var(Tape&, std::vector<Var>&)>;

/// Worst relative error between tape gradients and central differences over
/// every input of a scalar-valued function. Outputs with more than one
/// element are reduced with a fixed random projection.
inline double grad_check(const MultiFn& f, std::vector<Tensor> inputs, std::uint64_t seed = 7,
                         double h = 1e-6) {
  std::mt19937_64 rng(seed);
  Tensor proj;
  bool have_proj = false;
  auto scalar = [&](Tape& tape, Var out) {
    if (out.value().size() == 1) return out;
    if (!have_proj) {
      proj = random_tensor(out.shape(), rng);
      have_proj = true;
    }
    return numerics::sum(numerics::mul(out, tape.constant(proj)));
  };
  auto eval = [&](std::vector<Tensor>& in) {
    Tape tape;
    std::vector<Var> vars;
    for (auto& t : in) vars.push_back(tape.leaf(static_cast<const Tensor&>(t)));
    return scalar(tape, f(tape, vars)).value().item();
  };

  for (auto& t : inputs) t.set_requires_grad(true);
  {
    Tape tape;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(tape.leaf(t));
    tape.backward(scalar(tape, f(tape, vars)));
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<Tensor> probe = inputs;
    Tensor fd(inputs[k].shape());
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double x0 = probe[k][i];
      probe[k][i] = x0 + h;
      const double up = eval(probe);
      probe[k][i] = x0 - h;
      const double down = eval(probe);
      probe[k][i] = x0;
      fd[i] = (up - down) / (2.0 * h);
    }
    std::vector<double> analytic(fd.size(), 0.0);
    if (inputs[k].has_grad()) {
      const auto g = inputs[k].grad();
      analytic.assign(g.begin(), g.end());
    }
    worst = std::max(worst, numerics::relative_error(analytic, fd.data()));
  }
  return worst;
}

}  // namespace enecg::test_support
