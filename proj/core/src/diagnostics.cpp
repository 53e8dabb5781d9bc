#include "robustaug/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "robustaug/errors.hpp"
#include "robustaug/rng.hpp"

namespace robustaug {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double row_margin(const double* z, std::size_t k, int label) {
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    if (static_cast<int>(i) != label) other = std::max(other, z[i]);
  }
  return z[label] - other;
}

AttackConfig sweep_attack(const PerturbationBall& ball, std::size_t steps, std::uint64_t seed) {
  AttackConfig cfg = named_attack("apgd_ce", ball);
  cfg.steps = steps;
  cfg.restarts = 1;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

CascadeResult robust_accuracy(const Classifier& model, const Dataset& ds, std::span<const std::size_t> indices,
                              std::span<const CascadeStage> stages, std::size_t threads) {
  if (indices.empty()) throw ValidationError("robust accuracy needs a nonempty dataset");
  return cascade(model, ds, indices, stages, threads);
}

std::vector<SweepPoint> eps_sweep(const Classifier& model, const Dataset& ds, std::span<const std::size_t> indices,
                                  std::span<const double> radii, NormKind norm, std::uint64_t seed, std::size_t steps,
                                  std::size_t threads) {
  if (!std::is_sorted(radii.begin(), radii.end())) throw ValidationError("radii must be sorted ascending");
  std::vector<SweepPoint> out;
  std::vector<double> warm;
  for (const double r : radii) {
    if (r < 0.0) throw ValidationError("radii must be non-negative");
    const auto cfg = sweep_attack(PerturbationBall{norm, r}, steps, seed);
    auto res = attack_dataset(model, ds, indices, cfg, threads, warm.empty() ? nullptr : &warm);
    out.push_back({r, res.clean_accuracy, res.robust_accuracy});
    warm = std::move(res.delta);
  }
  return out;
}

std::vector<SweepPoint> steps_sweep(const Classifier& model, const Dataset& ds, std::span<const std::size_t> indices,
                                    std::span<const std::size_t> step_counts, const PerturbationBall& ball,
                                    std::uint64_t seed, std::size_t threads) {
  std::vector<SweepPoint> out;
  for (const std::size_t k : step_counts) {
    if (k == 0) throw ValidationError("step counts must be at least 1");
    const auto res = attack_dataset(model, ds, indices, sweep_attack(ball, k, seed), threads);
    out.push_back({static_cast<double>(k), res.clean_accuracy, res.robust_accuracy});
  }
  return out;
}

double margin_of(const Classifier& model, std::span<const double> image, int label) {
  Shape shape{1};
  for (const auto e : model.image_shape()) shape.push_back(e);
  const Tensor z = model_logits(model, Tensor(shape, std::vector<double>(image.begin(), image.end())));
  return row_margin(z.data.data(), model.num_classes(), label);
}

LandscapeGrid landscape(const Classifier& model, std::span<const double> image, int label, const PerturbationBall& ball,
                        const LandscapeSpec& spec) {
  if (spec.nu % 2 == 0 || spec.nv % 2 == 0) throw ValidationError("landscape extents must be odd");
  if (label < 0 || static_cast<std::size_t>(label) >= model.num_classes()) throw ValidationError("label out of range");
  const Shape img_shape = model.image_shape();
  const std::size_t dim = image.size();
  if (dim != numel(img_shape)) throw DimensionError("image does not match the model input");

  LandscapeGrid g;
  g.nu = spec.nu;
  g.nv = spec.nv;
  g.eps = ball.eps;
  g.norm = ball.norm;

  // Coordinates are extent * (i - c) / c so that the points at +-1 are exact.
  auto axis = [&](std::size_t n) {
    std::vector<double> c(n);
    const double half = static_cast<double>((n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
      c[i] = half == 0.0 ? 0.0 : spec.extent * (static_cast<double>(i) - half) / half;
    }
    return c;
  };
  g.a = axis(spec.nu);
  g.b = axis(spec.nv);

  ImageBatch batch;
  Shape bshape{1};
  for (const auto e : img_shape) bshape.push_back(e);
  batch.images = Tensor(bshape, std::vector<double>(image.begin(), image.end()));
  const std::vector<int> lbl{label};
  batch.labels = lbl;
  batch.soft_labels = one_hot(lbl, model.num_classes());
  batch.ids = {0};
  AttackConfig cfg;
  cfg.ball = ball;
  cfg.optimizer = Optimizer::SignGd;
  cfg.objective = Objective::CrossEntropy;
  cfg.steps = spec.pgd_steps;
  cfg.seed = spec.seed;
  g.u = run_attack(model, batch, cfg).delta.data;

  RngStream rng(spec.seed, "diagnostics/landscape/v");
  g.v.resize(dim);
  for (auto& x : g.v) x = (rng.next_u64() & 1U) ? 1.0 : -1.0;
  const double scale = ball.norm == NormKind::Linf ? ball.eps : ball.eps / std::sqrt(static_cast<double>(dim));
  for (auto& x : g.v) x *= scale;

  constexpr std::size_t kChunk = 64;
  const std::size_t total = g.nu * g.nv, k = model.num_classes();
  g.margin.resize(total);
  for (std::size_t lo = 0; lo < total; lo += kChunk) {
    const std::size_t hi = std::min(total, lo + kChunk);
    Shape cshape{hi - lo};
    for (const auto e : img_shape) cshape.push_back(e);
    Tensor pts(cshape);
    for (std::size_t p = lo; p < hi; ++p) {
      const double a = g.a[p / g.nv], b = g.b[p % g.nv];
      double* dst = pts.data.data() + (p - lo) * dim;
      for (std::size_t i = 0; i < dim; ++i) dst[i] = std::clamp(image[i] + a * g.u[i] + b * g.v[i], 0.0, 1.0);
    }
    const Tensor z = model_logits(model, pts);
    for (std::size_t p = lo; p < hi; ++p) g.margin[p] = row_margin(z.data.data() + (p - lo) * k, k, label);
  }
  g.clean_margin = margin_of(model, image, label);
  std::vector<double> end(dim);
  for (std::size_t i = 0; i < dim; ++i) end[i] = std::clamp(image[i] + g.u[i], 0.0, 1.0);
  g.endpoint_margin = margin_of(model, end, label);
  return g;
}

std::vector<int> ensemble_predict(std::span<const Classifier* const> models, const Tensor& images) {
  if (models.empty()) throw ValidationError("ensemble needs at least one model");
  const std::size_t k = models.front()->num_classes();
  for (const auto* m : models) {
    if (m->num_classes() != k) throw ValidationError("ensemble members disagree on the class count");
  }
  const std::size_t n = images.shape.at(0);
  std::vector<double> mean(n * k, 0.0);
  for (const auto* m : models) {
    const Tensor z = model_logits(*m, images);
    for (std::size_t r = 0; r < n; ++r) {
      const double* zr = z.data.data() + r * k;
      const double mx = *std::max_element(zr, zr + k);
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += std::exp(zr[c] - mx);
      for (std::size_t c = 0; c < k; ++c) mean[r * k + c] += std::exp(zr[c] - mx) / s;
    }
  }
  const double count = static_cast<double>(models.size());
  for (auto& p : mean) p /= count;
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* p = mean.data() + r * k;
    out[r] = static_cast<int>(std::max_element(p, p + k) - p);
  }
  return out;
}

DiversityReport prediction_diff(std::span<const std::vector<std::uint8_t>> correct) {
  if (correct.empty()) throw ValidationError("prediction diff needs at least one vector");
  const std::size_t s = correct.size(), n = correct.front().size();
  for (const auto& v : correct) {
    if (v.size() != n) throw ValidationError("prediction vectors differ in length");
  }
  DiversityReport r;
  r.total_errors.assign(s, 0);
  r.unique_errors.assign(s, 0);
  r.agreement.assign(s, std::vector<double>(s, 0.0));
  for (std::size_t e = 0; e < n; ++e) {
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < s; ++i) wrong += correct[i][e] ? 0 : 1;
    for (std::size_t i = 0; i < s; ++i) {
      if (correct[i][e]) continue;
      ++r.total_errors[i];
      if (wrong == 1 && s > 1) ++r.unique_errors[i];
    }
  }
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      std::size_t same = 0;
      for (std::size_t e = 0; e < n; ++e) same += (correct[i][e] != 0) == (correct[j][e] != 0) ? 1 : 0;
      r.agreement[i][j] = n == 0 ? 1.0 : static_cast<double>(same) / static_cast<double>(n);
    }
  }
  r.order.resize(n);
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  // Error patterns compared lexicographically with "wrong" before "right".
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t x, std::size_t y) {
    for (std::size_t i = 0; i < s; ++i) {
      const bool wx = !correct[i][x], wy = !correct[i][y];
      if (wx != wy) return wx;
    }
    return false;
  });
  return r;
}

std::string augment_label(std::span<const AugmentSpec> specs) {
  if (specs.empty()) return "none";
  std::string out;
  for (const auto& s : specs) {
    if (!out.empty()) out += "+";
    out += s.name();
  }
  return out;
}

std::vector<WaSweepRow> wa_decay_sweep(const TrainConfig& base, const ArchSpec& spec, const Dataset& ds,
                                       const Split& split, std::span<const double> taus,
                                       std::span<const std::vector<AugmentSpec>> augments) {
  for (const double t : taus) {
    if (!(t >= 0.0 && t < 1.0)) throw ValidationError("decay rates must lie in [0, 1)");
  }
  std::vector<WaSweepRow> rows;
  for (const double t : taus) {
    for (const auto& aug : augments) {
      TrainConfig cfg = base;
      cfg.ema_decay = t;
      cfg.augment = aug;
      cfg.run_dir.clear();
      const auto res = train(cfg, spec, ds, split);
      if (res.log.records.empty()) throw ValidationError("training produced no evaluation");
      const auto& last = res.log.records.back();
      rows.push_back({t, augment_label(aug), last.robust_val, last.robust_val_ema});
    }
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepPoint> points, const std::string& kind, const std::string& x_name) {
  std::ostringstream os;
  os << "# robustaug " << kind << " v1\n" << x_name << ",clean_accuracy,robust_accuracy\n";
  for (const auto& p : points) os << num(p.x) << ',' << num(p.clean_accuracy) << ',' << num(p.robust_accuracy) << '\n';
  return os.str();
}

std::string landscape_csv(const LandscapeGrid& g) {
  std::ostringstream os;
  os << "# robustaug landscape v1 eps=" << num(g.eps) << " norm=" << to_string(g.norm) << '\n'
     << "a,b,margin\n";
  for (std::size_t i = 0; i < g.nu; ++i) {
    for (std::size_t j = 0; j < g.nv; ++j) os << num(g.a[i]) << ',' << num(g.b[j]) << ',' << num(g.at(i, j)) << '\n';
  }
  return os.str();
}

std::string diversity_csv(const DiversityReport& r) {
  std::ostringstream os;
  os << "# robustaug diversity v1\nsnapshot,total_errors,unique_errors\n";
  for (std::size_t i = 0; i < r.total_errors.size(); ++i) {
    os << i << ',' << r.total_errors[i] << ',' << r.unique_errors[i] << '\n';
  }
  return os.str();
}

std::string agreement_csv(const DiversityReport& r) {
  std::ostringstream os;
  os << "# robustaug agreement v1\nsnapshot_i,snapshot_j,agreement\n";
  for (std::size_t i = 0; i < r.agreement.size(); ++i) {
    for (std::size_t j = 0; j < r.agreement.size(); ++j) os << i << ',' << j << ',' << num(r.agreement[i][j]) << '\n';
  }
  return os.str();
}

std::string prediction_csv(std::span<const std::size_t> indices, const CascadeResult& res) {
  std::ostringstream os;
  os << "# robustaug predictions v1\nindex,clean_correct,robust_correct\n";
  for (std::size_t i = 0; i < indices.size(); ++i) {
    os << indices[i] << ',' << int(res.clean_correct[i]) << ',' << int(res.robust_correct[i]) << '\n';
  }
  return os.str();
}

std::string wa_sweep_csv(std::span<const WaSweepRow> rows) {
  std::ostringstream os;
  os << "# robustaug wa_sweep v1\ntau,augment,final_robust,final_robust_ema\n";
  for (const auto& r : rows) {
    os << num(r.tau) << ',' << r.augment << ',' << num(r.final_robust) << ',' << num(r.final_robust_ema) << '\n';
  }
  return os.str();
}

}  // namespace robustaug
