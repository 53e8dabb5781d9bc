#include "robustaug/attack.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "robustaug/errors.hpp"
#include "robustaug/graph.hpp"
#include "robustaug/rng.hpp"

namespace robustaug {

// ---------------------------------------------------------------- names

std::string to_string(NormKind n) { return n == NormKind::Linf ? "linf" : "l2"; }

NormKind parse_norm(const std::string& name) {
  if (name == "linf") return NormKind::Linf;
  if (name == "l2") return NormKind::L2;
  throw ValidationError("unknown norm '" + name + "' (expected linf or l2)");
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::CrossEntropy: return "ce";
    case Objective::KlLabel: return "kl_label";
    case Objective::KlClean: return "kl_clean";
    case Objective::Margin: return "margin";
    case Objective::TargetedMargin: return "targeted_margin";
  }
  return "?";
}

std::string to_string(Optimizer o) {
  switch (o) {
    case Optimizer::SignGd: return "sign_gd";
    case Optimizer::Adam: return "adam";
    case Optimizer::Adaptive: return "adaptive";
    case Optimizer::MultiTargeted: return "multitargeted";
  }
  return "?";
}

std::string to_string(InitKind i) { return i == InitKind::Zero ? "zero" : "uniform_random"; }

Objective parse_objective(const std::string& name) {
  for (auto o : {Objective::CrossEntropy, Objective::KlLabel, Objective::KlClean, Objective::Margin,
                 Objective::TargetedMargin}) {
    if (to_string(o) == name) return o;
  }
  throw ValidationError("unknown attack objective '" + name + "'");
}

Optimizer parse_optimizer(const std::string& name) {
  for (auto o : {Optimizer::SignGd, Optimizer::Adam, Optimizer::Adaptive, Optimizer::MultiTargeted}) {
    if (to_string(o) == name) return o;
  }
  throw ValidationError("unknown attack optimizer '" + name + "'");
}

InitKind parse_init(const std::string& name) {
  if (name == "zero") return InitKind::Zero;
  if (name == "uniform_random") return InitKind::UniformRandom;
  throw ValidationError("unknown attack init '" + name + "'");
}

// ---------------------------------------------------------------- ball

double norm(std::span<const double> v, NormKind kind) {
  double r = 0.0;
  if (kind == NormKind::Linf) {
    for (double x : v) r = std::max(r, std::abs(x));
    return r;
  }
  for (double x : v) r += x * x;
  return std::sqrt(r);
}

bool PerturbationBall::contains(std::span<const double> delta, double slack) const {
  return robustaug::norm(delta, norm) <= eps + slack;
}

void project_ball(std::span<double> delta, const PerturbationBall& ball) {
  if (ball.norm == NormKind::Linf) {
    for (auto& d : delta) d = std::clamp(d, -ball.eps, ball.eps);
    return;
  }
  const double n = norm(delta, NormKind::L2);
  if (n > ball.eps) {
    const double s = ball.eps / n;
    for (auto& d : delta) d *= s;
  }
}

void project(std::span<double> delta, std::span<const double> x, const PerturbationBall& ball) {
  if (delta.size() != x.size()) throw DimensionError("project: perturbation and image sizes differ");
  project_ball(delta, ball);
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = std::clamp(x[i] + delta[i], 0.0, 1.0) - x[i];
}

// ---------------------------------------------------------------- config

void AttackConfig::validate(std::size_t classes) const {
  if (!(ball.eps >= 0.0) || !std::isfinite(ball.eps)) throw ValidationError("attack radius must be finite and >= 0");
  if (steps < 1) throw ValidationError("attack needs at least one step");
  if (restarts < 1) throw ValidationError("attack needs at least one restart");
  if (!(step_size >= 0.0)) throw ValidationError("attack step size must be >= 0");
  if (!(adam_lr > 0.0)) throw ValidationError("adam step size must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ValidationError("attack momentum must lie in [0,1]");
  if (classes < 2) throw ValidationError("attacks need at least two classes");
  if (objective == Objective::TargetedMargin && optimizer != Optimizer::MultiTargeted &&
      (target < 0 || static_cast<std::size_t>(target) >= classes)) {
    throw ValidationError("targeted margin objective needs a target class in [0," + std::to_string(classes) + ")");
  }
}

double AttackConfig::resolved_step_size() const {
  return step_size > 0.0 ? step_size : 2.5 * ball.eps / static_cast<double>(steps);
}

AttackConfig named_attack(const std::string& name, const PerturbationBall& ball) {
  AttackConfig c;
  c.ball = ball;
  if (name == "pgd") {
    c.optimizer = Optimizer::SignGd;
    c.steps = 10;
  } else if (name == "pgd_adam") {
    c.optimizer = Optimizer::Adam;
    c.steps = 40;
  } else if (name == "apgd_ce") {
    c.optimizer = Optimizer::Adaptive;
    c.steps = 100;
  } else if (name == "apgd_margin") {
    c.optimizer = Optimizer::Adaptive;
    c.objective = Objective::Margin;
    c.steps = 100;
  } else if (name == "mt") {
    c.optimizer = Optimizer::MultiTargeted;
    c.objective = Objective::Margin;
    c.steps = 200;
    c.restarts = 10;
  } else {
    throw ValidationError("unknown attack '" + name + "' (expected pgd, pgd_adam, apgd_ce, apgd_margin or mt)");
  }
  return c;
}

std::string describe(const AttackConfig& c) {
  std::ostringstream os;
  os << to_string(c.optimizer) << "/" << to_string(c.objective) << " " << to_string(c.ball.norm)
     << " eps=" << c.ball.eps << " steps=" << c.steps << " restarts=" << c.restarts;
  return os.str();
}

std::vector<double> adam_step_sizes(std::size_t steps, double lr0, std::span<const std::size_t> breaks) {
  std::vector<std::size_t> b(breaks.begin(), breaks.end());
  if (b.empty()) {
    b.push_back(steps / 2);
    if (steps >= 20) b.push_back(3 * steps / 4);
  }
  std::vector<double> out(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    double lr = lr0;
    for (auto s : b) {
      if (k >= s) lr /= 10.0;
    }
    out[k] = lr;
  }
  return out;
}

std::vector<std::size_t> adaptive_checkpoints(std::size_t steps) {
  static constexpr double kFractions[] = {0.22, 0.4, 0.55, 0.67, 0.77, 0.85, 0.92};
  std::vector<std::size_t> out;
  for (double f : kFractions) {
    const auto w = static_cast<std::size_t>(std::ceil(f * static_cast<double>(steps)));
    if (w >= 1 && w < steps && (out.empty() || out.back() < w)) out.push_back(w);
  }
  return out;
}

// ---------------------------------------------------------------- helpers

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects [B,K] logits");
  const std::size_t b = logits.shape[0], k = logits.shape[1];
  std::vector<int> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = logits.data.data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

Tensor model_logits(const Classifier& model, const Tensor& images) {
  Graph g;
  Var x = g.constant_ref(images);
  return g.value(model.logits(g, x));
}

std::size_t thread_count() {
  const char* v = std::getenv("ROBUSTAUG_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("ROBUSTAUG_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

namespace {

struct Evaluation {
  std::vector<double> values;  // objective per example
  std::vector<double> margin;  // max_{i!=y} z_i - z_y per example
  std::vector<int> pred;
  std::vector<double> grad;  // d objective / d input, flat
};

class Evaluator {
 public:
  Evaluator(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg, const AttackTargets& extra)
      : model_(model), batch_(batch), objective_(cfg.objective), targets_(extra.targets) {
    const std::size_t n = batch.size();
    if (objective_ == Objective::KlClean) {
      clean_ = extra.clean_logits ? *extra.clean_logits : model_logits(model, batch.images);
      if (clean_.rank() != 2 || clean_.shape[0] != n) throw DimensionError("clean logits do not match the batch");
    }
    if (objective_ == Objective::KlLabel) {
      entropy_.assign(n, 0.0);
      const std::size_t k = batch.classes();
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
          const double y = batch.soft_labels.data[b * k + j];
          if (y > 0.0) entropy_[b] -= y * std::log(y);
        }
      }
    }
    if (objective_ == Objective::TargetedMargin && targets_.empty()) targets_.assign(n, cfg.target);
    if (objective_ == Objective::TargetedMargin && targets_.size() != n) {
      throw DimensionError("one target class per example required");
    }
  }

  void set_targets(std::vector<int> t) { targets_ = std::move(t); }

  Evaluation operator()(std::span<const double> delta, bool need_grad) const {
    const std::size_t n = batch_.size(), k = batch_.classes();
    Tensor adv(batch_.images.shape, 0.0);
    for (std::size_t i = 0; i < adv.data.size(); ++i) adv.data[i] = batch_.images.data[i] + delta[i];
    Graph g;
    Var x = g.input(std::move(adv), need_grad);
    Var z = model_.logits(g, x);
    Var rows{};
    switch (objective_) {
      case Objective::CrossEntropy:
      case Objective::KlLabel: rows = g.softmax_cross_entropy_rows(z, batch_.soft_labels); break;
      case Objective::KlClean: rows = g.kl_divergence_rows(g.constant_ref(clean_), z); break;
      case Objective::Margin: rows = g.scale(g.margin_loss(z, batch_.labels), -1.0); break;
      case Objective::TargetedMargin: rows = g.sub(g.pick(z, targets_), g.pick(z, batch_.labels)); break;
    }
    Evaluation e;
    e.values = g.value(rows).data;
    if (objective_ == Objective::KlLabel) {
      for (std::size_t b = 0; b < n; ++b) e.values[b] -= entropy_[b];
    }
    const Tensor& logits = g.value(z);
    e.pred = argmax_rows(logits);
    e.margin.resize(n);
    for (std::size_t b = 0; b < n; ++b) {
      const double* row = logits.data.data() + b * k;
      const auto y = static_cast<std::size_t>(batch_.labels[b]);
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        if (j != y) best = std::max(best, row[j]);
      }
      e.margin[b] = best - row[y];
    }
    if (need_grad) {
      g.backward(g.sum(rows));
      const auto gr = g.grad(x);
      e.grad.assign(gr.begin(), gr.end());
    }
    return e;
  }

 private:
  const Classifier& model_;
  const ImageBatch& batch_;
  Objective objective_;
  std::vector<int> targets_;
  Tensor clean_;
  std::vector<double> entropy_;
};

// Best-candidate bookkeeping for one restart (or merged over restarts).
struct Tracker {
  std::size_t dim;
  std::vector<double> best_value, best_delta, best_grad, witness;
  std::vector<std::uint8_t> success;

  Tracker(std::size_t n, std::size_t d)
      : dim(d),
        best_value(n, -std::numeric_limits<double>::infinity()),
        best_delta(n * d, 0.0),
        best_grad(n * d, 0.0),
        witness(n * d, 0.0),
        success(n, 0) {}

  void consider(std::span<const double> score, const Evaluation& e, std::span<const int> labels,
                std::span<const double> delta) {
    for (std::size_t b = 0; b < score.size(); ++b) {
      const auto row = delta.subspan(b * dim, dim);
      if (score[b] > best_value[b]) {
        best_value[b] = score[b];
        std::copy(row.begin(), row.end(), best_delta.begin() + static_cast<std::ptrdiff_t>(b * dim));
        if (!e.grad.empty()) {
          std::copy_n(e.grad.begin() + static_cast<std::ptrdiff_t>(b * dim), dim,
                      best_grad.begin() + static_cast<std::ptrdiff_t>(b * dim));
        }
      }
      if (!success[b] && e.pred[b] != labels[b]) {
        success[b] = 1;
        std::copy(row.begin(), row.end(), witness.begin() + static_cast<std::ptrdiff_t>(b * dim));
      }
    }
  }

  void merge(const Tracker& other) {
    for (std::size_t b = 0; b < best_value.size(); ++b) {
      const auto off = static_cast<std::ptrdiff_t>(b * dim);
      if (other.best_value[b] > best_value[b]) {
        best_value[b] = other.best_value[b];
        std::copy_n(other.best_delta.begin() + off, dim, best_delta.begin() + off);
      }
      if (!success[b] && other.success[b]) {
        success[b] = 1;
        std::copy_n(other.witness.begin() + off, dim, witness.begin() + off);
      }
    }
  }
};

struct Run {
  const ImageBatch& batch;
  const AttackConfig& cfg;
  std::size_t n, dim;
  AttackResult* out;

  std::span<const double> image(std::size_t b) const { return {batch.images.data.data() + b * dim, dim}; }

  void project_all(std::vector<double>& delta) const {
    for (std::size_t b = 0; b < n; ++b) project(std::span(delta).subspan(b * dim, dim), image(b), cfg.ball);
  }

  std::vector<double> initial(std::size_t restart, const AttackTargets& extra) const {
    std::vector<double> delta(n * dim, 0.0);
    if (restart == 0 && extra.warm_start) {
      if (extra.warm_start->size() != n * dim) throw DimensionError("warm start does not match the batch");
      delta = extra.warm_start->data;
    } else if (cfg.init == InitKind::UniformRandom && cfg.ball.eps > 0.0) {
      for (std::size_t b = 0; b < n; ++b) {
        RngStream rng(cfg.seed, "attack/init", batch.ids[b], static_cast<std::uint32_t>(restart));
        double* d = delta.data() + b * dim;
        if (cfg.ball.norm == NormKind::Linf) {
          for (std::size_t i = 0; i < dim; ++i) d[i] = rng.uniform(-cfg.ball.eps, cfg.ball.eps);
        } else {
          double s = 0.0;
          for (std::size_t i = 0; i < dim; ++i) {
            d[i] = rng.normal();
            s += d[i] * d[i];
          }
          const double radius = cfg.ball.eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(dim));
          const double f = s > 0.0 ? radius / std::sqrt(s) : 0.0;
          for (std::size_t i = 0; i < dim; ++i) d[i] *= f;
        }
      }
    }
    project_all(delta);
    return delta;
  }

  // Sign of the gradient (linf) or the l2-normalized gradient.
  void direction(std::span<const double> grad, std::span<double> dir) const {
    for (std::size_t b = 0; b < n; ++b) {
      const auto g = grad.subspan(b * dim, dim);
      auto d = dir.subspan(b * dim, dim);
      if (cfg.ball.norm == NormKind::Linf) {
        for (std::size_t i = 0; i < dim; ++i) d[i] = static_cast<double>((g[i] > 0.0) - (g[i] < 0.0));
      } else {
        const double nn = norm(g, NormKind::L2);
        for (std::size_t i = 0; i < dim; ++i) d[i] = nn > 0.0 ? g[i] / nn : 0.0;
      }
    }
  }

  void record(const std::vector<double>& score) const {
    if (cfg.record_trace) out->trace.push_back(score);
  }
  void record_steps(std::vector<double> alphas) const {
    if (cfg.record_trace) out->step_sizes.push_back(std::move(alphas));
  }
};

using ScoreFn = std::span<const double> (*)(const Evaluation&);
std::span<const double> objective_score(const Evaluation& e) { return e.values; }
std::span<const double> margin_score(const Evaluation& e) { return e.margin; }

Tracker sign_restart(const Run& run, const Evaluator& eval, std::vector<double> delta, ScoreFn score) {
  Tracker t(run.n, run.dim);
  const double alpha = run.cfg.resolved_step_size();
  std::vector<double> dir(delta.size());
  for (std::size_t k = 0; k < run.cfg.steps; ++k) {
    const Evaluation e = eval(delta, true);
    t.consider(score(e), e, run.batch.labels, delta);
    run.record(std::vector<double>(score(e).begin(), score(e).end()));
    run.direction(e.grad, dir);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += alpha * dir[i];
    run.project_all(delta);
    run.record_steps(std::vector<double>(run.n, alpha));
  }
  const Evaluation e = eval(delta, false);
  t.consider(score(e), e, run.batch.labels, delta);
  run.record(std::vector<double>(score(e).begin(), score(e).end()));
  return t;
}

Tracker adam_restart(const Run& run, const Evaluator& eval, std::vector<double> delta) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  Tracker t(run.n, run.dim);
  const auto lrs = adam_step_sizes(run.cfg.steps, run.cfg.adam_lr, run.cfg.adam_breaks);
  std::vector<double> m(delta.size(), 0.0), v(delta.size(), 0.0);
  double b1 = 1.0, b2 = 1.0;
  for (std::size_t k = 0; k < run.cfg.steps; ++k) {
    const Evaluation e = eval(delta, true);
    t.consider(e.values, e, run.batch.labels, delta);
    run.record(e.values);
    b1 *= kBeta1;
    b2 *= kBeta2;
    for (std::size_t i = 0; i < delta.size(); ++i) {
      const double g = e.grad[i];
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
      const double mhat = m[i] / (1.0 - b1), vhat = v[i] / (1.0 - b2);
      delta[i] += lrs[k] * mhat / (std::sqrt(vhat) + kEps);
    }
    run.project_all(delta);
    run.record_steps(std::vector<double>(run.n, lrs[k]));
  }
  const Evaluation e = eval(delta, false);
  t.consider(e.values, e, run.batch.labels, delta);
  run.record(e.values);
  return t;
}

Tracker adaptive_restart(const Run& run, const Evaluator& eval, std::vector<double> delta) {
  const std::size_t n = run.n, dim = run.dim, steps = run.cfg.steps;
  const double mu = run.cfg.momentum;
  Tracker t(n, dim);
  std::vector<double> alpha(n, 2.0 * run.cfg.ball.eps);
  const auto checkpoints = adaptive_checkpoints(steps);
  std::size_t next_cp = 0, last_cp = 0;
  std::vector<std::size_t> improved(n, 0);
  std::vector<double> prev = delta, dir(delta.size()), z(delta.size());
  std::vector<double> f_prev;
  std::vector<double> grad;

  for (std::size_t k = 0; k < steps; ++k) {
    const Evaluation e = eval(delta, true);
    t.consider(e.values, e, run.batch.labels, delta);
    run.record(e.values);
    grad = e.grad;
    if (k > 0) {
      for (std::size_t b = 0; b < n; ++b) improved[b] += e.values[b] > f_prev[b] ? 1 : 0;
    }
    f_prev = e.values;
    std::vector<std::uint8_t> reset(n, 0);
    if (next_cp < checkpoints.size() && k == checkpoints[next_cp]) {
      const double needed = run.cfg.improve_fraction * static_cast<double>(k - last_cp);
      for (std::size_t b = 0; b < n; ++b) {
        if (static_cast<double>(improved[b]) < needed) {
          alpha[b] /= 2.0;
          reset[b] = 1;
          const auto off = static_cast<std::ptrdiff_t>(b * dim);
          std::copy_n(t.best_delta.begin() + off, dim, delta.begin() + off);
          std::copy_n(t.best_grad.begin() + off, dim, grad.begin() + off);
          f_prev[b] = t.best_value[b];
        }
        improved[b] = 0;
      }
      last_cp = k;
      ++next_cp;
    }
    run.direction(grad, dir);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = b * dim; i < (b + 1) * dim; ++i) z[i] = delta[i] + alpha[b] * dir[i];
    }
    run.project_all(z);
    std::vector<double> next(delta.size());
    for (std::size_t b = 0; b < n; ++b) {
      // First step and steps right after a reset carry no momentum.
      const double m = (k == 0 || reset[b]) ? 1.0 : mu;
      for (std::size_t i = b * dim; i < (b + 1) * dim; ++i) {
        next[i] = delta[i] + m * (z[i] - delta[i]) + (1.0 - m) * (delta[i] - prev[i]);
      }
    }
    run.project_all(next);
    prev = delta;
    delta = std::move(next);
    run.record_steps(alpha);
  }
  const Evaluation e = eval(delta, false);
  t.consider(e.values, e, run.batch.labels, delta);
  run.record(e.values);
  return t;
}

AttackResult finish(const ImageBatch& batch, Tracker& t, AttackResult&& r) {
  r.delta = Tensor(batch.images.shape, std::move(t.best_delta));
  r.best_value = std::move(t.best_value);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (!t.success[b]) {
      std::copy_n(r.delta.data.begin() + static_cast<std::ptrdiff_t>(b * t.dim), t.dim,
                  t.witness.begin() + static_cast<std::ptrdiff_t>(b * t.dim));
    }
  }
  r.witness = Tensor(batch.images.shape, std::move(t.witness));
  r.success = std::move(t.success);
  return std::move(r);
}

}  // namespace

AttackResult run_attack(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg,
                        const AttackTargets& extra) {
  batch.validate();
  cfg.validate(model.num_classes());
  if (batch.classes() != model.num_classes()) throw DimensionError("label width does not match the model");
  AttackResult result;
  const Run run{batch, cfg, batch.size(), batch.image_size(), &result};

  if (cfg.optimizer == Optimizer::MultiTargeted) {
    AttackConfig inner = cfg;
    inner.objective = Objective::TargetedMargin;
    inner.optimizer = Optimizer::SignGd;
    const std::size_t k = model.num_classes();
    Evaluator eval(model, batch, inner, AttackTargets{std::nullopt, std::vector<int>(batch.size(), 0), std::nullopt});
    Tracker all(run.n, run.dim);
    const Run inner_run{batch, inner, run.n, run.dim, &result};
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
      // Restart r aims at the (r mod K-1)-th wrong class of each example.
      std::vector<int> targets(batch.size());
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const std::size_t slot = r % (k - 1);
        targets[b] = static_cast<int>(slot) + (static_cast<int>(slot) >= batch.labels[b] ? 1 : 0);
      }
      eval.set_targets(std::move(targets));
      all.merge(sign_restart(inner_run, eval, run.initial(r, extra), margin_score));
    }
    return finish(batch, all, std::move(result));
  }

  const Evaluator eval(model, batch, cfg, extra);
  Tracker all(run.n, run.dim);
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    auto start = run.initial(r, extra);
    switch (cfg.optimizer) {
      case Optimizer::SignGd: all.merge(sign_restart(run, eval, std::move(start), objective_score)); break;
      case Optimizer::Adam: all.merge(adam_restart(run, eval, std::move(start))); break;
      case Optimizer::Adaptive: all.merge(adaptive_restart(run, eval, std::move(start))); break;
      case Optimizer::MultiTargeted: break;
    }
  }
  return finish(batch, all, std::move(result));
}

AttackResult pgd(const Classifier& model, const ImageBatch& batch, AttackConfig cfg) {
  cfg.optimizer = Optimizer::SignGd;
  return run_attack(model, batch, cfg);
}

AttackResult pgd_adam(const Classifier& model, const ImageBatch& batch, AttackConfig cfg) {
  cfg.optimizer = Optimizer::Adam;
  return run_attack(model, batch, cfg);
}

AttackResult adaptive_pgd(const Classifier& model, const ImageBatch& batch, AttackConfig cfg) {
  cfg.optimizer = Optimizer::Adaptive;
  return run_attack(model, batch, cfg);
}

AttackResult multitargeted(const Classifier& model, const ImageBatch& batch, AttackConfig cfg) {
  cfg.optimizer = Optimizer::MultiTargeted;
  cfg.objective = Objective::Margin;
  return run_attack(model, batch, cfg);
}

std::vector<double> objective_values(const Classifier& model, const ImageBatch& batch, const Tensor& delta,
                                     const AttackConfig& cfg, const AttackTargets& extra) {
  if (!same_shape(delta, batch.images)) throw DimensionError("perturbation does not match the batch");
  const Evaluator eval(model, batch, cfg, extra);
  return eval(delta.data, false).values;
}

// ---------------------------------------------------------------- datasets

namespace {

constexpr std::size_t kChunk = 32;

// Runs job(c) for c in [0, jobs) on `threads` workers; rethrows the first
// failure.
template <typename Job>
void parallel_for(std::size_t jobs, std::size_t threads, Job job) {
  threads = std::max<std::size_t>(1, std::min(threads, jobs));
  if (threads == 1) {
    for (std::size_t c = 0; c < jobs; ++c) job(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t c = next++; c < jobs; c = next++) {
        try {
          job(c);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
          next = jobs;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

DatasetAttackResult attack_dataset(const Classifier& model, const Dataset& ds, std::span<const std::size_t> indices,
                                   const AttackConfig& cfg, std::size_t threads,
                                   const std::vector<double>* warm_start) {
  if (ds.classes != model.num_classes()) throw ValidationError("dataset and model class counts differ");
  const std::size_t n = indices.size(), dim = ds.image_size();
  if (warm_start && warm_start->size() != n * dim) throw DimensionError("warm start does not match the index list");
  DatasetAttackResult out;
  out.clean_correct.assign(n, 0);
  out.robust_correct.assign(n, 0);
  out.delta.assign(n * dim, 0.0);
  if (n == 0) return out;
  if (threads == 0) threads = thread_count();
  const std::size_t jobs = (n + kChunk - 1) / kChunk;
  parallel_for(jobs, threads, [&](std::size_t c) {
    const std::size_t lo = c * kChunk, hi = std::min(n, lo + kChunk);
    const auto idx = indices.subspan(lo, hi - lo);
    const ImageBatch batch = make_batch(ds, idx);
    const auto pred = argmax_rows(model_logits(model, batch.images));
    AttackTargets extra;
    if (warm_start) {
      extra.warm_start = Tensor(batch.images.shape,
                                std::vector<double>(warm_start->begin() + static_cast<std::ptrdiff_t>(lo * dim),
                                                    warm_start->begin() + static_cast<std::ptrdiff_t>(hi * dim)));
    }
    const AttackResult r = run_attack(model, batch, cfg, extra);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      out.clean_correct[lo + b] = pred[b] == batch.labels[b];
      out.robust_correct[lo + b] = out.clean_correct[lo + b] && !r.success[b];
    }
    std::copy(r.witness.data.begin(), r.witness.data.end(), out.delta.begin() + static_cast<std::ptrdiff_t>(lo * dim));
  });
  std::size_t clean = 0, robust = 0;
  for (std::size_t i = 0; i < n; ++i) {
    clean += out.clean_correct[i];
    robust += out.robust_correct[i];
  }
  out.clean_accuracy = static_cast<double>(clean) / static_cast<double>(n);
  out.robust_accuracy = static_cast<double>(robust) / static_cast<double>(n);
  return out;
}

CascadeResult cascade(const Classifier& model, const Dataset& ds, std::span<const std::size_t> indices,
                      std::span<const CascadeStage> stages, std::size_t threads) {
  if (stages.empty()) throw ValidationError("cascade needs at least one stage");
  if (indices.empty()) throw ValidationError("cascade needs a nonempty dataset");
  const std::size_t n = indices.size();
  CascadeResult out;
  out.clean_correct.assign(n, 0);
  for (std::size_t lo = 0; lo < n; lo += kChunk) {
    const auto idx = indices.subspan(lo, std::min(kChunk, n - lo));
    const auto pred = argmax_rows(model_logits(model, ds.gather(idx)));
    for (std::size_t b = 0; b < idx.size(); ++b) out.clean_correct[lo + b] = pred[b] == ds.labels[idx[b]];
  }
  out.robust_correct = out.clean_correct;
  for (const auto& stage : stages) {
    std::vector<std::size_t> standing, position;
    for (std::size_t i = 0; i < n; ++i) {
      if (out.robust_correct[i]) {
        standing.push_back(indices[i]);
        position.push_back(i);
      }
    }
    if (!standing.empty()) {
      const auto r = attack_dataset(model, ds, standing, stage.config, threads);
      for (std::size_t j = 0; j < standing.size(); ++j) out.robust_correct[position[j]] = r.robust_correct[j];
    }
    const auto robust = std::count(out.robust_correct.begin(), out.robust_correct.end(), 1);
    out.stage_accuracy.push_back(static_cast<double>(robust) / static_cast<double>(n));
  }
  const auto clean = std::count(out.clean_correct.begin(), out.clean_correct.end(), 1);
  out.clean_accuracy = static_cast<double>(clean) / static_cast<double>(n);
  out.robust_accuracy = out.stage_accuracy.back();
  return out;
}

}  // namespace robustaug
