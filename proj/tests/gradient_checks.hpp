#pragma once

// Gradient checks shared by the unit tests and the acceptance binary.

#include <random>
#include <string>
#include <vector>

#include "robustaug/graph.hpp"
#include "robustaug/trainer.hpp"
#include "support.hpp"

namespace testing {

struct OpCase {
  std::string name;
  std::vector<robustaug::Tensor> inputs;
  OpBuilder op;
};

// Every differentiable graph op on random inputs drawn from `seed`. Clamp and
// the margin use fixed inputs away from their kinks.
inline std::vector<OpCase> op_cases(std::uint64_t seed) {
  using namespace robustaug;
  std::mt19937_64 gen(seed);
  auto rt = [&](Shape s, double lo = -1, double hi = 1) { return random_tensor(std::move(s), gen, lo, hi); };
  static const std::vector<int> labels{0, 2, 1};
  Tensor soft({3, 4}, 0.0);
  for (std::size_t b = 0; b < 3; ++b) {
    soft.data[b * 4 + 0] = 0.6;
    soft.data[b * 4 + b + 1] = 0.4;
  }
  return {
      {"add", {rt({3, 4}), rt({3, 4})}, [](Graph& g, auto& v) { return g.add(v[0], v[1]); }},
      {"sub", {rt({3, 4}), rt({3, 4})}, [](Graph& g, auto& v) { return g.sub(v[0], v[1]); }},
      {"mul", {rt({3, 4}), rt({3, 4})}, [](Graph& g, auto& v) { return g.mul(v[0], v[1]); }},
      {"mul scalar", {rt({3, 4}), rt({1})}, [](Graph& g, auto& v) { return g.mul(v[0], v[1]); }},
      {"scale", {rt({5})}, [](Graph& g, auto& v) { return g.scale(v[0], -1.7); }},
      {"add_scalar", {rt({5})}, [](Graph& g, auto& v) { return g.add_scalar(v[0], 0.3); }},
      {"clamp", {Tensor::from({-0.9, -0.3, 0.1, 0.45, 0.8})}, [](Graph& g, auto& v) { return g.clamp(v[0], -0.5, 0.5); }},
      {"exp", {rt({6})}, [](Graph& g, auto& v) { return g.exp(v[0]); }},
      {"log", {rt({6}, 0.2, 2.0)}, [](Graph& g, auto& v) { return g.log(v[0]); }},
      {"silu", {rt({6}, -3, 3)}, [](Graph& g, auto& v) { return g.silu(v[0]); }},
      {"sum", {rt({2, 3})}, [](Graph& g, auto& v) { return g.sum(v[0]); }},
      {"mean", {rt({2, 3})}, [](Graph& g, auto& v) { return g.mean(v[0]); }},
      {"sum_rows", {rt({3, 2, 2})}, [](Graph& g, auto& v) { return g.sum_rows(v[0]); }},
      {"reshape", {rt({2, 6})}, [](Graph& g, auto& v) { return g.reshape(v[0], {3, 4}); }},
      {"affine", {rt({3, 4}), rt({4, 2}), rt({2})}, [](Graph& g, auto& v) { return g.affine(v[0], v[1], v[2]); }},
      {"conv2d", {rt({2, 2, 5, 5}), rt({3, 2, 3, 3}), rt({3})},
       [](Graph& g, auto& v) { return g.conv2d(v[0], v[1], v[2], 1, 1); }},
      {"conv2d stride", {rt({2, 2, 6, 6}), rt({3, 2, 4, 4})},
       [](Graph& g, auto& v) { return g.conv2d(v[0], v[1], std::nullopt, 2, 1); }},
      {"log_softmax", {rt({3, 4}, -2, 2)}, [](Graph& g, auto& v) { return g.log_softmax(v[0]); }},
      {"softmax_cross_entropy", {rt({3, 4}, -2, 2)},
       [soft](Graph& g, auto& v) { return g.softmax_cross_entropy_rows(v[0], soft); }},
      {"kl_divergence", {rt({3, 4}, -2, 2), rt({3, 4}, -2, 2)},
       [](Graph& g, auto& v) { return g.kl_divergence_rows(v[0], v[1]); }},
      {"margin_loss", {Tensor({3, 4}, {3, 1, 0, -1, 0, 2, 1, 5, 1, 4, 2, 0})},
       [](Graph& g, auto& v) { return g.margin_loss(v[0], labels); }},
      {"pick", {rt({3, 4})}, [](Graph& g, auto& v) { return g.pick(v[0], labels); }},
  };
}

inline robustaug::ArchSpec tiny_cnn() {
  robustaug::ArchSpec s;
  s.kind = robustaug::ArchKind::SmallCnn;
  s.channels = 1;
  s.height = s.width = 4;
  s.classes = 3;
  s.widths = {2, 2, 3};
  return s;
}

inline robustaug::ImageBatch tiny_batch(std::mt19937_64& gen) {
  robustaug::ImageBatch b;
  b.images = random_tensor({2, 1, 4, 4}, gen, 0.2, 0.8);
  b.labels = {0, 2};
  b.ids = {0, 1};
  b.soft_labels = robustaug::Tensor({2, 3}, {0.7, 0.3, 0.0, 0.0, 0.0, 1.0});
  return b;
}

// Largest relative error of the trades loss parameter gradient on a random
// small CNN (random biases too) against central differences.
inline double trades_gradient_error(std::uint64_t seed) {
  using namespace robustaug;
  std::mt19937_64 gen(10 + seed);
  const ArchSpec s = tiny_cnn();
  auto p = init_model(s, seed);
  for (auto& e : p.entries) {
    if (e.name.ends_with(".bias")) e.tensor = random_tensor(e.tensor.shape, gen, -0.3, 0.3);
  }
  const ImageBatch b = tiny_batch(gen);
  const Tensor delta = random_tensor(b.images.shape, gen, -0.05, 0.05);
  p.set_requires_grad(true);
  p.zero_grad();
  {
    Graph g;
    g.backward(trades_loss(g, s, p, b, delta, 6.0).total);
  }
  auto value = [&] {
    Graph g;
    return g.value(trades_loss(g, s, p, b, delta, 6.0).total).item();
  };
  double worst = 0.0;
  for (auto& e : p.entries) {
    const std::vector<double> analytic = e.tensor.grad;
    worst = std::max(worst, rel_error(analytic, central_difference(value, e.tensor.data)));
  }
  return worst;
}

}  // namespace testing
