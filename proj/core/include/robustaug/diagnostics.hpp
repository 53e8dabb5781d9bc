#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "robustaug/attack.hpp"
#include "robustaug/data.hpp"
#include "robustaug/model.hpp"
#include "robustaug/trainer.hpp"

namespace robustaug {

// Clean and robust accuracy under a cascade (a single attack is a cascade of
// one stage). robust_correct is the per-example prediction vector.
CascadeResult robust_accuracy(const Classifier& model, const Dataset& ds, std::span<const std::size_t> indices,
                              std::span<const CascadeStage> stages, std::size_t threads = 0);

struct SweepPoint {
  double x = 0.0;  // radius or step count
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
};

// Adaptive PGD (default 100 steps, 1 restart) at each radius. Each radius
// starts from the previous radius's witness perturbations, so an example
// broken at a smaller radius stays broken and the curve is non-increasing.
std::vector<SweepPoint> eps_sweep(const Classifier& model, const Dataset& ds, std::span<const std::size_t> indices,
                                  std::span<const double> radii, NormKind norm, std::uint64_t seed,
                                  std::size_t steps = 100, std::size_t threads = 0);

// Adaptive PGD with a shared seed at each step count.
std::vector<SweepPoint> steps_sweep(const Classifier& model, const Dataset& ds, std::span<const std::size_t> indices,
                                    std::span<const std::size_t> step_counts, const PerturbationBall& ball,
                                    std::uint64_t seed, std::size_t threads = 0);

struct LandscapeSpec {
  // Odd extents so the origin is a grid point.
  std::size_t nu = 41;
  std::size_t nv = 41;
  // Coordinates span [-extent, extent] in units of u and v.
  double extent = 2.0;
  std::size_t pgd_steps = 40;
  std::uint64_t seed = 0;
};

struct LandscapeGrid {
  std::size_t nu = 0, nv = 0;
  std::vector<double> a, b;  // coordinates along u and v
  std::vector<double> u, v;  // directions (image-sized)
  // Margin z_y - max_{i!=y} z_i at x + a_i u + b_j v (clamped), row-major [nu, nv].
  std::vector<double> margin;
  double eps = 0.0;
  NormKind norm = NormKind::Linf;
  double clean_margin = 0.0;
  // Margin at the attack endpoint x + u.
  double endpoint_margin = 0.0;

  double at(std::size_t i, std::size_t j) const { return margin[i * nv + j]; }
};

// u: the PGD perturbation found with `pgd_steps` sign steps on cross-entropy;
// v: Rademacher signs scaled to magnitude eps.
LandscapeGrid landscape(const Classifier& model, std::span<const double> image, int label, const PerturbationBall& ball,
                        const LandscapeSpec& spec = {});

// z_y - max_{i!=y} z_i of one image.
double margin_of(const Classifier& model, std::span<const double> image, int label);

// Mean softmax over the models, then argmax (ties to the lowest class).
std::vector<int> ensemble_predict(std::span<const Classifier* const> models, const Tensor& images);

struct DiversityReport {
  std::vector<std::size_t> total_errors;
  // Errors made by this snapshot only. A lone snapshot has nothing to be
  // compared with and reports zero.
  std::vector<std::size_t> unique_errors;
  // Fraction of examples on which snapshots i and j are both right or both wrong.
  std::vector<std::vector<double>> agreement;
  // Example order that makes error blocks contiguous: sorted by the error
  // pattern, snapshot 0 most significant, errors first, stable by index.
  std::vector<std::size_t> order;
};

// Vectors hold 1 for a correct prediction.
DiversityReport prediction_diff(std::span<const std::vector<std::uint8_t>> correct);

struct WaSweepRow {
  double tau = 0.0;
  std::string augment;
  double final_robust = 0.0;
  double final_robust_ema = 0.0;
};

// One training run per (tau, augmentation); rows ordered tau-major.
std::vector<WaSweepRow> wa_decay_sweep(const TrainConfig& base, const ArchSpec& spec, const Dataset& ds,
                                       const Split& split, std::span<const double> taus,
                                       std::span<const std::vector<AugmentSpec>> augments);

std::string augment_label(std::span<const AugmentSpec> specs);

// CSV renderings. Each starts with a "# robustaug <kind> v1" line, then a
// header row.
std::string sweep_csv(std::span<const SweepPoint> points, const std::string& kind, const std::string& x_name);
std::string landscape_csv(const LandscapeGrid& grid);
std::string diversity_csv(const DiversityReport& report);
std::string agreement_csv(const DiversityReport& report);
std::string prediction_csv(std::span<const std::size_t> indices, const CascadeResult& result);
std::string wa_sweep_csv(std::span<const WaSweepRow> rows);

}  // namespace robustaug
