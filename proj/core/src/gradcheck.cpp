#include "robustaug/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "robustaug/errors.hpp"

namespace robustaug {

std::vector<std::vector<double>> finite_difference_gradient(const std::function<double()>& f,
                                                            std::span<Tensor* const> params, double h) {
  if (!(h > 0)) throw ValidationError("finite difference step must be positive");
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (Tensor* t : params) {
    std::vector<double> g(t->size(), 0.0);
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double saved = t->data[i];
      t->data[i] = saved + h;
      const double up = f();
      t->data[i] = saved - h;
      const double down = f();
      t->data[i] = saved;
      g[i] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw DimensionError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace robustaug
