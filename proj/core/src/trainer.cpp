#include "robustaug/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include "robustaug/errors.hpp"
#include "robustaug/rng.hpp"

namespace robustaug {

double effective_lr(double base_lr, std::size_t batch_size) {
  if (!(base_lr > 0.0) || batch_size == 0) throw ValidationError("learning rate and batch size must be positive");
  return std::max(base_lr * static_cast<double>(batch_size) / 256.0, base_lr);
}

double lr_at(std::size_t step, std::size_t total_steps, double lr0) {
  if (step >= total_steps) throw ValidationError("step " + std::to_string(step) + " outside the schedule");
  return step < (2 * total_steps) / 3 ? lr0 : lr0 / 10.0;
}

void sgd_nesterov_step(ModelParams& params, double lr, double momentum, double weight_decay, SgdState& state) {
  if (state.velocity.empty()) {
    for (const auto& e : params.entries) state.velocity.emplace_back(e.tensor.size(), 0.0);
  }
  if (state.velocity.size() != params.entries.size()) throw ValidationError("optimizer state layout mismatch");
  for (std::size_t p = 0; p < params.entries.size(); ++p) {
    Tensor& t = params.entries[p].tensor;
    auto& v = state.velocity[p];
    if (v.size() != t.size() || t.grad.size() != t.size()) throw ValidationError("optimizer state layout mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = t.grad[i] + weight_decay * t.data[i];
      v[i] = momentum * v[i] + g;
      t.data[i] -= lr * (g + momentum * v[i]);
    }
  }
}

EmaState ema_init(const ModelParams& params, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw ValidationError("EMA decay must lie in [0,1]");
  EmaState s;
  s.params = params;
  s.params.set_requires_grad(false);
  s.decay = decay;
  return s;
}

void ema_update(EmaState& ema, const ModelParams& params) {
  if (!ema.params.same_layout(params)) throw ValidationError("EMA layout does not match the parameters");
  const double tau = ema.decay;
  for (std::size_t p = 0; p < params.entries.size(); ++p) {
    auto& avg = ema.params.entries[p].tensor.data;
    const auto& cur = params.entries[p].tensor.data;
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = tau * avg[i] + (1.0 - tau) * cur[i];
  }
  ++ema.updates;
}

TradesTerms trades_loss(Graph& g, const ArchSpec& spec, ModelParams& params, const ImageBatch& batch,
                        const Tensor& delta, double beta) {
  batch.validate();
  if (!same_shape(delta, batch.images)) throw DimensionError("adversarial perturbation does not match the batch");
  Tensor adv = batch.images;
  for (std::size_t i = 0; i < adv.size(); ++i) adv.data[i] += delta.data[i];
  Var clean = forward(g, spec, params, g.constant_ref(batch.images), true);
  Var ce = g.softmax_cross_entropy(clean, batch.soft_labels);
  Var adv_logits = forward(g, spec, params, g.constant(std::move(adv)), true);
  Var kl = g.kl_divergence(clean, adv_logits);
  return {g.add(ce, g.scale(kl, beta)), ce, kl};
}

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("trainer.batch_size must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("trainer.lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("trainer.weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("trainer.momentum must lie in [0,1)");
  if (!trades_beta) throw ConfigError("trainer.trades_beta must be set explicitly");
  if (!(*trades_beta >= 0.0)) throw ConfigError("trainer.trades_beta must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("trainer.ema_decay must lie in [0,1]");
}

double TrainConfig::beta() const {
  if (!trades_beta) throw ConfigError("trainer.trades_beta must be set explicitly");
  return *trades_beta;
}

TrainConfig default_train_config() {
  TrainConfig c;
  const PerturbationBall ball{NormKind::Linf, 8.0 / 255.0};
  c.train_attack = named_attack("pgd_adam", ball);
  c.train_attack.steps = 10;
  c.train_attack.objective = Objective::KlLabel;
  c.eval_attack = named_attack("pgd_adam", ball);
  c.augment.push_back(AugmentSpec{PadCropParams{}});
  return c;
}

std::size_t steps_per_epoch(std::size_t train_size, std::size_t batch_size) {
  return batch_size == 0 ? 0 : (train_size + batch_size - 1) / batch_size;
}

// ---------------------------------------------------------------- training

namespace {

ImageBatch slice(const ImageBatch& b, std::size_t lo, std::size_t hi) {
  const std::size_t d = b.image_size(), k = b.classes();
  ImageBatch s;
  Shape shape = b.images.shape;
  shape[0] = hi - lo;
  s.images = Tensor(shape, std::vector<double>(b.images.data.begin() + static_cast<std::ptrdiff_t>(lo * d),
                                               b.images.data.begin() + static_cast<std::ptrdiff_t>(hi * d)));
  s.soft_labels = Tensor(Shape{hi - lo, k}, std::vector<double>(b.soft_labels.data.begin() + static_cast<std::ptrdiff_t>(lo * k),
                                                                b.soft_labels.data.begin() + static_cast<std::ptrdiff_t>(hi * k)));
  s.labels.assign(b.labels.begin() + static_cast<std::ptrdiff_t>(lo), b.labels.begin() + static_cast<std::ptrdiff_t>(hi));
  s.ids.assign(b.ids.begin() + static_cast<std::ptrdiff_t>(lo), b.ids.begin() + static_cast<std::ptrdiff_t>(hi));
  return s;
}

// Inner maximization, split across workers by example. Each example's
// perturbation depends only on its own data and random key.
Tensor inner_attack(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg, std::size_t threads) {
  const std::size_t n = batch.size(), d = batch.image_size();
  Tensor delta(batch.images.shape, 0.0);
  threads = std::max<std::size_t>(1, std::min(threads, n));
  const std::size_t per = (n + threads - 1) / threads;
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](std::size_t t) {
    const std::size_t lo = t * per, hi = std::min(n, lo + per);
    if (lo >= hi) return;
    try {
      const ImageBatch part = slice(batch, lo, hi);
      const auto r = run_attack(model, part, cfg);
      std::copy(r.delta.data.begin(), r.delta.data.end(), delta.data.begin() + static_cast<std::ptrdiff_t>(lo * d));
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return delta;
}

std::uint64_t attack_seed(std::uint64_t seed, std::size_t step) {
  return RngStream(seed, "trainer/attack", step).next_u64();
}

}  // namespace

TrainResult train(const TrainConfig& config, const ArchSpec& spec, const Dataset& ds, const Split& split) {
  config.validate();
  spec.validate();
  if (ds.classes != spec.classes || ds.channels != spec.channels || ds.height != spec.height ||
      ds.width != spec.width) {
    throw ValidationError("dataset " + ds.name + " does not match architecture " + spec.describe());
  }
  const std::size_t threads = config.threads ? config.threads : thread_count();
  const double beta = config.beta();
  const double lr0 = effective_lr(config.base_lr, config.batch_size);

  TrainResult out;
  out.params = init_model(spec, config.seed);
  out.params.set_requires_grad(true);
  out.ema = ema_init(out.params, config.ema_decay);

  const std::size_t per_epoch = steps_per_epoch(split.train.size(), config.batch_size);
  const std::size_t total = config.epochs * per_epoch;
  out.log.total_steps = total;
  if (total == 0) return out;

  const std::size_t eval_every = config.eval_every ? config.eval_every : std::max<std::size_t>(1, total / 60);
  std::vector<double> fill;
  {
    const Dataset train_part = ds.subset(split.train);
    fill = dataset_mean(train_part);
  }
  if (!config.run_dir.empty()) std::filesystem::create_directories(config.run_dir);

  const auto t0 = std::chrono::steady_clock::now();
  SgdState sgd;
  std::vector<std::size_t> order(split.train.begin(), split.train.end());
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  double best_robust = -1.0, best_robust_ema = -1.0;
  std::size_t step = 0;

  auto checkpoint = [&](std::size_t at) {
    if (config.run_dir.empty()) return;
    const auto live = config.run_dir / (std::to_string(at) + ".ckpt");
    const auto avg = config.run_dir / (std::to_string(at) + ".ema.ckpt");
    save_checkpoint(live, spec, out.params);
    save_checkpoint(avg, spec, out.ema.params);
    out.log.checkpoints.push_back(live);
    out.log.checkpoints.push_back(avg);
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    // Per-epoch shuffle without replacement.
    RngStream shuffle(config.seed, "trainer/shuffle", epoch);
    std::copy(split.train.begin(), split.train.end(), order.begin());
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t lo = b * config.batch_size, hi = std::min(order.size(), lo + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      ImageBatch batch = make_batch(ds, idx);
      if (!config.augment.empty()) {
        batch = pipeline(batch, config.augment, fill, AugmentContext{config.seed, static_cast<std::uint32_t>(step), 0});
      }

      Tensor delta(batch.images.shape, 0.0);
      if (beta > 0.0 && config.train_attack.ball.eps > 0.0) {
        AttackConfig ac = config.train_attack;
        ac.seed = attack_seed(config.seed, step);
        delta = inner_attack(ParamView(spec, out.params), batch, ac, threads);
      }

      const double lr = lr_at(step, total, lr0);
      out.params.zero_grad();
      double loss = 0.0;
      try {
        Graph g;
        const auto terms = trades_loss(g, spec, out.params, batch, delta, beta);
        loss = g.value(terms.total).item();
        if (!std::isfinite(loss)) throw NumericalError("loss is not finite");
        g.backward(terms.total);
      } catch (const NumericalError& e) {
        throw NumericalError("training aborted at step " + std::to_string(step) + ": " + e.what());
      }
      sgd_nesterov_step(out.params, lr, config.momentum, config.weight_decay, sgd);
      for (const auto& e : out.params.entries) {
        if (!e.tensor.all_finite()) {
          throw NumericalError("training aborted at step " + std::to_string(step) + ": parameter " + e.name +
                               " is not finite");
        }
      }
      ema_update(out.ema, out.params);
      loss_sum += loss;
      ++loss_count;

      const std::size_t done = step + 1;
      if (done % eval_every == 0 || done == total) {
        MetricsRecord rec;
        rec.step = done;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(loss_count);
        loss_sum = 0.0;
        loss_count = 0;
        if (!split.validation.empty()) {
          AttackConfig ec = config.eval_attack;
          ec.seed = RngStream(config.seed, "trainer/eval").next_u64();
          const auto live = attack_dataset(ParamView(spec, out.params), ds, split.validation, ec, threads);
          const auto avg = attack_dataset(ParamView(spec, out.ema.params), ds, split.validation, ec, threads);
          rec.clean_val = live.clean_accuracy;
          rec.robust_val = live.robust_accuracy;
          rec.clean_val_ema = avg.clean_accuracy;
          rec.robust_val_ema = avg.robust_accuracy;
          if (rec.robust_val > best_robust) {
            best_robust = rec.robust_val;
            out.log.best_index = out.log.records.size();
            out.best_params = out.params;
          }
          if (rec.robust_val_ema > best_robust_ema) {
            best_robust_ema = rec.robust_val_ema;
            out.log.best_index_ema = out.log.records.size();
            out.best_ema_params = out.ema.params;
          }
        }
        if (config.record_wallclock) {
          rec.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        out.log.records.push_back(rec);
      }
      if ((config.checkpoint_every && done % config.checkpoint_every == 0) || done == total) checkpoint(done);
    }
  }
  out.params.set_requires_grad(false);
  out.best_params.set_requires_grad(false);
  return out;
}

std::string train_log_csv(const TrainLog& log) {
  std::ostringstream os;
  os << "# robustaug train_log v1\n";
  os << "step,lr,train_loss,clean_val,robust_val_pgd40,clean_val_ema,robust_val_ema,wallclock_s\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : log.records) {
    os << r.step << "," << num(r.lr) << "," << num(r.train_loss) << "," << num(r.clean_val) << ","
       << num(r.robust_val) << "," << num(r.clean_val_ema) << "," << num(r.robust_val_ema) << ","
       << (r.wallclock_s ? num(*r.wallclock_s) : std::string()) << "\n";
  }
  return os.str();
}

}  // namespace robustaug
