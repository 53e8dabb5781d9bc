#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "robustaug/attack.hpp"
#include "robustaug/augment.hpp"
#include "robustaug/data.hpp"
#include "robustaug/graph.hpp"
#include "robustaug/model.hpp"

namespace robustaug {

// Linear scaling rule: max(lr * batch / 256, lr).
double effective_lr(double base_lr, std::size_t batch_size);
// lr0 before step floor(2 * total / 3), lr0 / 10 from there on.
double lr_at(std::size_t step, std::size_t total_steps, double lr0);

struct SgdState {
  std::vector<std::vector<double>> velocity;
};

// g = grad + wd * theta; v = m * v + g; theta -= lr * (g + m * v).
// Applies to every parameter, biases included.
void sgd_nesterov_step(ModelParams& params, double lr, double momentum, double weight_decay, SgdState& state);

struct EmaState {
  ModelParams params;
  double decay = 0.999;
  std::size_t updates = 0;
};

EmaState ema_init(const ModelParams& params, double decay);
// theta' = tau * theta' + (1 - tau) * theta
void ema_update(EmaState& ema, const ModelParams& params);

struct TradesTerms {
  Var total;
  Var cross_entropy;
  Var kl;
};

// CE(f(x'), y') + beta * KL(f(x') || f(x' + delta)), batch means. Both
// branches are differentiable in the parameters, which enter as leaves.
TradesTerms trades_loss(Graph& g, const ArchSpec& spec, ModelParams& params, const ImageBatch& batch,
                        const Tensor& delta, double beta);

// Classifier over borrowed parameters.
class ParamView final : public Classifier {
 public:
  ParamView(const ArchSpec& spec, const ModelParams& params) : spec_(spec), params_(params) {}
  std::size_t num_classes() const override { return spec_.classes; }
  Shape image_shape() const override { return spec_.image_shape(); }
  Var logits(Graph& g, Var images) const override { return forward(g, spec_, params_, images); }

 private:
  const ArchSpec& spec_;
  const ModelParams& params_;
};

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  double base_lr = 0.1;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  // Required: there is no universally agreed default.
  std::optional<double> trades_beta;
  double ema_decay = 0.999;
  std::vector<AugmentSpec> augment;
  AttackConfig train_attack;
  AttackConfig eval_attack;
  // Optimizer steps between evaluations; 0 selects max(1, total / 60).
  std::size_t eval_every = 0;
  // Optimizer steps between checkpoints; 0 writes only the final one.
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;
  bool record_wallclock = false;
  // Where checkpoints go; empty disables them.
  std::filesystem::path run_dir;
  // Workers for the per-step attack and evaluation (0: ROBUSTAUG_THREADS).
  std::size_t threads = 0;

  void validate() const;
  double beta() const;
};

// Defaults: 10-step Adam attack on KL to the augmented label for training,
// 40-step Adam attack on cross-entropy for evaluation, both linf 8/255.
TrainConfig default_train_config();

struct MetricsRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double clean_val = 0.0;
  double robust_val = 0.0;
  double clean_val_ema = 0.0;
  double robust_val_ema = 0.0;
  std::optional<double> wallclock_s;
};

struct TrainLog {
  std::vector<MetricsRecord> records;
  std::vector<std::filesystem::path> checkpoints;
  // Early-stopping bookmarks: first record with the highest robust accuracy.
  std::optional<std::size_t> best_index;
  std::optional<std::size_t> best_index_ema;
  std::size_t total_steps = 0;
};

struct TrainResult {
  TrainLog log;
  ModelParams params;
  EmaState ema;
  // Parameters at the bookmarks (empty if there was no evaluation).
  ModelParams best_params;
  ModelParams best_ema_params;
};

std::size_t steps_per_epoch(std::size_t train_size, std::size_t batch_size);

TrainResult train(const TrainConfig& config, const ArchSpec& spec, const Dataset& ds, const Split& split);

std::string train_log_csv(const TrainLog& log);

}  // namespace robustaug
