#pragma once

// Helpers shared by the test suites. The oracles here deliberately avoid the
// library: std::mt19937_64 instead of the Philox streams, plain loops instead
// of the graph.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "robustaug/graph.hpp"
#include "robustaug/tensor.hpp"

namespace testing {

inline robustaug::Tensor random_tensor(robustaug::Shape shape, std::mt19937_64& gen, double lo = -1.0,
                                       double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  robustaug::Tensor t(std::move(shape));
  for (auto& v : t.data) v = d(gen);
  return t;
}

// Central differences of f with respect to every entry of `x`.
inline std::vector<double> central_difference(const std::function<double()>& f, std::vector<double>& x,
                                              double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double s = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / s);
  }
  return worst;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Builds op(inputs), reduces it to a scalar with fixed random weights and
// compares the graph gradient of every input with central differences.
using OpBuilder = std::function<robustaug::Var(robustaug::Graph&, const std::vector<robustaug::Var>&)>;

inline double op_gradient_error(std::vector<robustaug::Tensor> inputs, const OpBuilder& op, std::uint64_t seed,
                                double floor = 1e-6) {
  using namespace robustaug;
  std::mt19937_64 gen(seed);
  std::vector<double> weights;
  auto scalar = [&](Graph& g, const std::vector<Var>& vars) {
    const Var out = op(g, vars);
    const std::size_t n = g.value(out).size();
    if (weights.empty()) {
      std::normal_distribution<double> d;
      for (std::size_t i = 0; i < n; ++i) weights.push_back(d(gen));
    }
    return g.sum(g.mul(out, g.constant(Tensor(g.shape(out), weights))));
  };
  Graph g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.input(t, true));
  const Var root = scalar(g, vars);
  g.backward(root);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto analytic = std::vector<double>(g.grad(vars[k]).begin(), g.grad(vars[k]).end());
    auto f = [&] {
      Graph h;
      std::vector<Var> cv;
      for (const auto& t : inputs) cv.push_back(h.constant(t));
      return h.value(scalar(h, cv)).item();
    };
    const auto numeric = central_difference(f, inputs[k].data);
    worst = std::max(worst, rel_error(analytic, numeric, floor));
  }
  return worst;
}

}  // namespace testing
