#pragma once

// Shared helpers: finite-difference gradient harness and small fixtures.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cssloc/dataset.hpp"
#include "cssloc/rng.hpp"
#include "cssloc/tape.hpp"

namespace cssloc::testing {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

inline Tensor<double> random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  auto t = random_tensor({n, d}, rng);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += t[i * d + j] * t[i * d + j];
    s = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) t[i * d + j] /= s;
  }
  return t;
}

using Graph = std::function<Tape<double>::Var(Tape<double>&, const std::vector<Tape<double>::Var>&)>;

// Relative error ||a - n|| / max(||a||, ||n||) between the tape gradient and a
// central difference (step h) for every input. `probe` > 0 checks that many
// randomly chosen coordinates per input instead of all of them.
struct GradCheck {
  double worst = 0.0;
  std::size_t coordinates = 0;
};

inline double eval_graph(const Graph& g, const std::vector<Tensor<double>>& inputs, kernels::Backend be) {
  Tape<double> tape(be);
  std::vector<Tape<double>::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return tape.value(g(tape, vars))[0];
}

inline GradCheck check_gradients(const Graph& g, std::vector<Tensor<double>> inputs, Rng& rng,
                                 std::size_t probe = 0, double h = 1e-6,
                                 kernels::Backend be = kernels::Backend::serial) {
  Tape<double> tape(be);
  std::vector<Tape<double>::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.parameter(t));
  const auto loss = g(tape, vars);
  tape.backward(loss);

  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& analytic = tape.grad(vars[k]);
    std::vector<std::size_t> idx;
    if (probe == 0 || probe >= inputs[k].size()) {
      for (std::size_t i = 0; i < inputs[k].size(); ++i) idx.push_back(i);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, inputs[k].size() - 1);
      for (std::size_t i = 0; i < probe; ++i) idx.push_back(pick(rng));
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (auto i : idx) {
      const double x0 = inputs[k][i];
      inputs[k][i] = x0 + h;
      const double fp = eval_graph(g, inputs, be);
      inputs[k][i] = x0 - h;
      const double fm = eval_graph(g, inputs, be);
      inputs[k][i] = x0;
      const double num = (fp - fm) / (2 * h);
      diff2 += (analytic[i] - num) * (analytic[i] - num);
      a2 += analytic[i] * analytic[i];
      n2 += num * num;
    }
    out.coordinates += idx.size();
    const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
    const double rel = scale < 1e-10 ? std::sqrt(diff2) : std::sqrt(diff2) / scale;
    out.worst = std::max(out.worst, rel);
  }
  return out;
}

// Projects any tensor output onto a scalar with fixed random weights.
inline Tape<double>::Var project(Tape<double>& tape, Tape<double>::Var y, std::uint64_t seed) {
  Rng rng(seed);
  return tape.weighted_sum(y, random_tensor(tape.value(y).shape(), rng));
}

// Small noiseless corridor map, cheap enough for unit tests.
inline sim::Scenario small_corridor(std::uint64_t seed = 7) {
  return sim::build_scenario("corridor", sim::Preset::corridor, seed);
}

}  // namespace cssloc::testing
