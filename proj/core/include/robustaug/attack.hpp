#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robustaug/augment.hpp"
#include "robustaug/data.hpp"
#include "robustaug/model.hpp"
#include "robustaug/tensor.hpp"

namespace robustaug {

enum class NormKind { Linf, L2 };

std::string to_string(NormKind norm);
NormKind parse_norm(const std::string& name);

double norm(std::span<const double> v, NormKind kind);

struct PerturbationBall {
  NormKind norm = NormKind::Linf;
  double eps = 8.0 / 255.0;

  bool contains(std::span<const double> delta, double slack = 1e-9) const;
};

// Projection onto the ball only.
void project_ball(std::span<double> delta, const PerturbationBall& ball);
// Ball projection followed by the image-domain clamp x + delta in [0,1].
void project(std::span<double> delta, std::span<const double> x, const PerturbationBall& ball);

// Quantity the attacker maximizes, summed per example.
enum class Objective {
  CrossEntropy,    // CE(z(x+d), y)
  KlLabel,         // KL(y || softmax z(x+d)), y the (soft) label
  KlClean,         // KL(softmax z(x) || softmax z(x+d))
  Margin,          // max_{i!=y} z_i - z_y
  TargetedMargin,  // z_t - z_y
};

enum class Optimizer { SignGd, Adam, Adaptive, MultiTargeted };
enum class InitKind { Zero, UniformRandom };

std::string to_string(Objective o);
std::string to_string(Optimizer o);
std::string to_string(InitKind i);
Objective parse_objective(const std::string& name);
Optimizer parse_optimizer(const std::string& name);
InitKind parse_init(const std::string& name);

struct AttackConfig {
  PerturbationBall ball;
  Optimizer optimizer = Optimizer::SignGd;
  Objective objective = Objective::CrossEntropy;
  std::size_t steps = 10;
  // Sign / normalized-gradient step; 0 selects 2.5 * eps / steps.
  double step_size = 0.0;
  // Adam: initial step size and the steps at which it drops by 10x. Empty
  // breaks select the default schedule (see adam_step_sizes).
  double adam_lr = 0.1;
  std::vector<std::size_t> adam_breaks;
  std::size_t restarts = 1;
  InitKind init = InitKind::UniformRandom;
  // Target class for TargetedMargin.
  int target = -1;
  std::uint64_t seed = 0;
  // Adaptive PGD.
  double momentum = 0.75;
  double improve_fraction = 0.75;
  // Records per-step objective values and step sizes.
  bool record_trace = false;

  void validate(std::size_t classes) const;
  double resolved_step_size() const;
};

// Canonical configs: pgd, pgd_adam, apgd_ce, apgd_margin, mt.
AttackConfig named_attack(const std::string& name, const PerturbationBall& ball);
std::string describe(const AttackConfig& cfg);

// Per-step Adam step sizes. Default breaks: {steps/2} below 20 steps,
// {steps/2, 3*steps/4} from 20 steps on (10 steps: 0.1 x5 then 0.01;
// 40 steps: 0.1 / 0.01 / 0.001 with drops at 20 and 30).
std::vector<double> adam_step_sizes(std::size_t steps, double lr0, std::span<const std::size_t> breaks = {});

// Adaptive PGD checkpoints (step indices) for a budget of `steps`.
std::vector<std::size_t> adaptive_checkpoints(std::size_t steps);

struct AttackResult {
  // [B,C,H,W]: perturbation with the highest objective over all candidates.
  Tensor delta;
  std::vector<double> best_value;
  // 1 iff some evaluated candidate was misclassified.
  std::vector<std::uint8_t> success;
  // A misclassified candidate where one exists, otherwise equal to delta.
  Tensor witness;
  // With record_trace: one row per evaluated candidate, one column per
  // example (restarts are concatenated), and the step size used per step.
  std::vector<std::vector<double>> trace;
  std::vector<std::vector<double>> step_sizes;
};

// Extra inputs some objectives need.
struct AttackTargets {
  // Clean-input logits for KlClean; computed if absent.
  std::optional<Tensor> clean_logits;
  // Per-example target classes overriding cfg.target for TargetedMargin.
  std::vector<int> targets;
  // Starting perturbation for the first restart (projected before use).
  std::optional<Tensor> warm_start;
};

AttackResult run_attack(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg,
                        const AttackTargets& extra = {});

AttackResult pgd(const Classifier& model, const ImageBatch& batch, AttackConfig cfg);
AttackResult pgd_adam(const Classifier& model, const ImageBatch& batch, AttackConfig cfg);
AttackResult adaptive_pgd(const Classifier& model, const ImageBatch& batch, AttackConfig cfg);
AttackResult multitargeted(const Classifier& model, const ImageBatch& batch, AttackConfig cfg);

// Per-example objective values at x + delta.
std::vector<double> objective_values(const Classifier& model, const ImageBatch& batch, const Tensor& delta,
                                     const AttackConfig& cfg, const AttackTargets& extra = {});

std::vector<int> argmax_rows(const Tensor& logits);
Tensor model_logits(const Classifier& model, const Tensor& images);

// Worker count from ROBUSTAUG_THREADS (default 1).
std::size_t thread_count();

struct DatasetAttackResult {
  std::vector<std::uint8_t> clean_correct;
  std::vector<std::uint8_t> robust_correct;
  // Flat [N, C*H*W] witness perturbations.
  std::vector<double> delta;
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
};

// Attacks `indices` of `ds` in fixed-size chunks spread across `threads`
// workers. Every random stream is keyed by dataset index, so the result does
// not depend on chunking or worker count. `warm_start` (flat, one row per
// index) replaces the initial point of the first restart.
DatasetAttackResult attack_dataset(const Classifier& model, const Dataset& ds, std::span<const std::size_t> indices,
                                   const AttackConfig& cfg, std::size_t threads = 0,
                                   const std::vector<double>* warm_start = nullptr);

struct CascadeStage {
  std::string label;
  AttackConfig config;
};

struct CascadeResult {
  std::vector<std::uint8_t> clean_correct;
  std::vector<std::uint8_t> robust_correct;
  // Robust accuracy after each stage.
  std::vector<double> stage_accuracy;
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
};

// An example is robust iff it is clean-correct and every stage fails on it.
// Stages only attack examples still standing.
CascadeResult cascade(const Classifier& model, const Dataset& ds, std::span<const std::size_t> indices,
                      std::span<const CascadeStage> stages, std::size_t threads = 0);

}  // namespace robustaug
