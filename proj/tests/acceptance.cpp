// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria.
//
// Criteria 7 to 11 share six desk training runs (3 seeds x {Pad & Crop,
// CutMix}, tau = 0.99), configured by the CLI defaults.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "attack_checks.hpp"
#include "augment_checks.hpp"
#include "commands.hpp"
#include "gradient_checks.hpp"
#include "robustaug/diagnostics.hpp"
#include "robustaug/trainer.hpp"
#include "run_config.hpp"

using namespace robustaug;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kLinearGapTol = 1e-9;
constexpr double kEmaTol = 1e-12;
constexpr double kOverfitGap = 0.015;
constexpr double kDeskMinutes = 30.0;
constexpr double kPlateauTol = 0.01;
constexpr std::size_t kDeskSeeds = 3;

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  failures += !pass;
  std::printf("%s %2d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double ops = 0.0, trades = 0.0;
  std::string worst_op;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (auto& c : testing::op_cases(seed)) {
      const double e = testing::op_gradient_error(c.inputs, c.op, 100 + seed);
      if (e > ops) ops = e, worst_op = c.name;
    }
    trades = std::max(trades, testing::trades_gradient_error(seed));
  }
  const double secs = seconds_since(t0);
  report(1, "gradient correctness", ops < kGradTol && trades < kGradTol && secs < kGradSeconds,
         fmt("max rel err ops %.2e (%s), trades %.2e over 5 seeds, %.1f s", ops, worst_op.c_str(), trades, secs));
}

void pgd_linear_oracle() {
  const double linf = testing::linear_gap_error(20, NormKind::Linf);
  const double l2 = testing::linear_gap_error(20, NormKind::L2);
  report(2, "pgd linear oracle", linf <= kLinearGapTol && l2 <= kLinearGapTol,
         fmt("20 binary linear models, max |gap - closed form| linf %.2e, l2 %.2e", linf, l2));
}

void feasibility() {
  const auto rep = testing::feasibility(10000);
  report(3, "ball and domain feasibility", rep.violations == 0,
         fmt("%zu runs, %zu violations", rep.runs, rep.violations));
}

// Cutout draws its fill from the dataset mean; recompute that mean channel by
// channel and compare it with what the pipeline pasted.
std::size_t cutout_fill_violations() {
  SyntheticParams sp;
  sp.size = 8;
  const Dataset ds = synthetic_dataset(SyntheticKind::GaussianBlobs, 64, 3, sp);
  const std::size_t hw = ds.height * ds.width;
  std::vector<double> mean(ds.channels, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t c = 0; c < ds.channels; ++c) {
      for (std::size_t q = 0; q < hw; ++q) mean[c] += ds.pixels[(i * ds.channels + c) * hw + q];
    }
  }
  for (auto& m : mean) m /= static_cast<double>(ds.size() * hw);
  const std::vector<double> fill = dataset_mean(ds);
  std::size_t bad = 0;
  for (std::size_t c = 0; c < mean.size(); ++c) bad += std::abs(fill[c] - mean[c]) > 1e-14;
  std::vector<std::size_t> idx(8);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const ImageBatch in = make_batch(ds, idx);
  const AugmentSpec spec{CutoutParams{4}};
  for (std::uint32_t step = 0; step < 100; ++step) {
    const ImageBatch out = pipeline(in, std::span(&spec, 1), fill, AugmentContext{5, step, 0});
    for (std::size_t q = 0; q < out.images.size(); ++q) {
      const std::size_t c = (q / hw) % ds.channels;
      bad += out.images.data[q] != in.images.data[q] && out.images.data[q] != fill[c];
    }
  }
  return bad;
}

void augmentation_consistency() {
  const std::size_t cutmix = testing::cutmix_violations(1000);
  const std::size_t ricap = testing::ricap_violations(1000);
  const std::size_t mixup = testing::mixup_violations(1000);
  const std::size_t cutout = testing::cutout_violations(1000) + cutout_fill_violations();
  const std::size_t curated = testing::curated_pool_violations(10000);
  report(4, "augmentation label-area consistency", cutmix + ricap + mixup + cutout + curated == 0,
         fmt("violations: cutmix %zu, ricap %zu, mixup %zu, cutout %zu, curated randaugment %zu", cutmix, ricap,
             mixup, cutout, curated));
}

void ema_closed_form() {
  std::mt19937_64 gen(3);
  ModelParams start, target;
  start.entries.push_back({"w", testing::random_tensor({64}, gen)});
  target.entries.push_back({"w", testing::random_tensor({64}, gen)});
  const double tau = 0.999;
  const std::size_t n = 100;
  EmaState ema = ema_init(start, tau);
  for (std::size_t i = 0; i < n; ++i) ema_update(ema, target);
  double err = 0.0;
  const double tn = std::pow(tau, static_cast<double>(n));
  for (std::size_t q = 0; q < 64; ++q) {
    const double expect = tn * start.entries[0].tensor.data[q] + (1.0 - tn) * target.entries[0].tensor.data[q];
    err = std::max(err, std::abs(ema.params.entries[0].tensor.data[q] - expect));
  }
  EmaState zero = ema_init(start, 0.0), one = ema_init(start, 1.0);
  for (std::size_t i = 0; i < 3; ++i) ema_update(zero, target), ema_update(one, target);
  const bool edges = zero.params.entries[0].tensor.data == target.entries[0].tensor.data &&
                     one.params.entries[0].tensor.data == start.entries[0].tensor.data;
  report(5, "ema closed form", err <= kEmaTol && edges,
         fmt("100 updates at tau 0.999: max err %.2e; tau 0 and tau 1 exact: %s", err, edges ? "yes" : "no"));
}

void schedule_formulas() {
  bool ok = effective_lr(0.1, 512) == 0.2;
  std::size_t bad = 0;
  for (std::size_t total = 3; total <= 300; ++total) {
    const std::size_t drop = 2 * total / 3;
    for (std::size_t s = 0; s < total; ++s) bad += lr_at(s, total, 0.2) != (s < drop ? 0.2 : 0.2 / 10.0);
  }
  report(6, "schedule formulas", ok && bad == 0,
         fmt("effective_lr(0.1, 512) = %.17g; drop mismatches over T in [3, 300]: %zu", effective_lr(0.1, 512), bad));
}

// ---------------------------------------------------------------- desk runs

struct DeskRun {
  TrainResult result;
  double best = 0.0, final_live = 0.0, final_ema = 0.0;
};

struct Desk {
  cli::RunConfig base;
  cli::LoadedData data;  // split of seed 0; pool and test are seed-independent
  ArchSpec spec;
  std::vector<DeskRun> pad, cutmix;
  double minutes = 0.0;
};

DeskRun desk_run(const cli::RunConfig& base, std::uint64_t seed, const AugmentSpec& aug) {
  cli::RunConfig cfg = base;
  cfg.seed = seed;
  cfg.trainer.seed = seed;
  cfg.trainer.augment = {aug};
  const cli::LoadedData data = cli::load_data(cfg);
  DeskRun r;
  r.result = train(cfg.trainer, cli::resolved_arch(cfg, data.pool), data.pool, data.split);
  const auto& recs = r.result.log.records;
  r.best = recs[*r.result.log.best_index].robust_val;
  r.final_live = recs.back().robust_val;
  r.final_ema = recs.back().robust_val_ema;
  std::printf("  desk seed %llu %s: best %.4f final %.4f final_ema %.4f\n", static_cast<unsigned long long>(seed),
              augment_label(cfg.trainer.augment).c_str(), r.best, r.final_live, r.final_ema);
  std::fflush(stdout);
  return r;
}

Desk desk_runs() {
  Desk d;
  d.base = cli::default_run_config();
  d.data = cli::load_data(d.base);
  d.spec = cli::resolved_arch(d.base, d.data.pool);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t s = 0; s < kDeskSeeds; ++s) {
    d.pad.push_back(desk_run(d.base, s, AugmentSpec{PadCropParams{}}));
    d.cutmix.push_back(desk_run(d.base, s, AugmentSpec{CutmixParams{}}));
  }
  d.minutes = seconds_since(t0) / 60.0;
  return d;
}

void robust_overfitting(const Desk& d) {
  double gap = 0.0;
  std::string per;
  for (const auto& r : d.pad) {
    gap += r.best - r.final_live;
    per += fmt(" %.4f", r.best - r.final_live);
  }
  gap /= static_cast<double>(d.pad.size());
  // Half of the desk time is the Pad & Crop runs.
  const double minutes = d.minutes / 2.0;
  report(7, "robust overfitting", gap >= kOverfitGap && minutes <= kDeskMinutes,
         fmt("Pad & Crop mean best - final validation robust accuracy %.4f (per seed%s), %.1f min", gap,
             per.c_str(), minutes));
}

void wa_augmentation(const Desk& d) {
  const double n = static_cast<double>(kDeskSeeds);
  double pad_ema = 0.0, pad_live = 0.0, pad_gap = 0.0, cut_gap = 0.0;
  std::size_t wins = 0;
  for (std::size_t s = 0; s < kDeskSeeds; ++s) {
    pad_ema += d.pad[s].final_ema / n;
    pad_live += d.pad[s].final_live / n;
    pad_gap += (d.pad[s].best - d.pad[s].final_live) / n;
    cut_gap += (d.cutmix[s].best - d.cutmix[s].final_live) / n;
    wins += d.cutmix[s].final_ema >= d.pad[s].final_ema;
  }
  const bool a = pad_ema >= pad_live, b = cut_gap < pad_gap, c = wins >= 2;
  report(8, "wa x augmentation", a && b && c,
         fmt("(a) Pad & Crop final ema %.4f vs live %.4f %s; (b) gap CutMix %.4f vs Pad & Crop %.4f %s; "
             "(c) CutMix+WA >= Pad & Crop+WA on %zu/3 seeds %s",
             pad_ema, pad_live, a ? "ok" : "no", cut_gap, pad_gap, b ? "ok" : "no", wins, c ? "ok" : "no"));
}

std::vector<std::size_t> first_n(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

CascadeStage random_stage(std::mt19937_64& gen, std::size_t i) {
  static const char* names[] = {"pgd", "pgd_adam", "apgd_ce", "apgd_margin", "mt"};
  const std::string name = names[gen() % 5];
  AttackConfig cfg = named_attack(name, PerturbationBall{});
  cfg.steps = 5 + gen() % 11;
  cfg.adam_breaks.clear();
  cfg.restarts = 1;
  cfg.seed = gen() % 1000;
  return {name + "#" + std::to_string(i), cfg};
}

void cascade_monotonicity(const Desk& d) {
  const Model model(d.spec, d.pad[0].result.params);
  const auto idx = first_n(128);
  std::mt19937_64 gen(99);
  std::size_t violations = 0, configs = 20;
  for (std::size_t k = 0; k < configs; ++k) {
    std::vector<CascadeStage> stages;
    const std::size_t len = 1 + gen() % 3;
    for (std::size_t i = 0; i < len; ++i) stages.push_back(random_stage(gen, i));
    const CascadeResult base = cascade(model, d.data.test, idx, stages);
    double prev = base.clean_accuracy;
    for (const double a : base.stage_accuracy) violations += a > prev, prev = a;
    auto more = stages;
    more.insert(more.begin() + static_cast<std::ptrdiff_t>(gen() % (len + 1)), random_stage(gen, len));
    const CascadeResult grown = cascade(model, d.data.test, idx, more);
    violations += grown.robust_accuracy > base.robust_accuracy;
    for (std::size_t i = 0; i < idx.size(); ++i) violations += grown.robust_correct[i] > base.robust_correct[i];
  }
  report(9, "cascade monotonicity", violations == 0,
         fmt("%zu random cascades on the seed-0 Pad & Crop checkpoint, 128 test examples: %zu violations", configs,
             violations));
}

void diagnostics_consistency(const Desk& d) {
  const Model model(d.spec, d.pad[0].result.params);
  const Dataset& test = d.data.test;
  std::size_t origin_bad = 0;
  LandscapeSpec ls;
  ls.nu = ls.nv = 5;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto grid = landscape(model, test.image(i), test.labels[i], PerturbationBall{}, ls);
    origin_bad += grid.at(2, 2) != margin_of(model, test.image(i), test.labels[i]);
  }
  std::vector<double> radii;
  for (const int r : {0, 2, 4, 8, 16, 32}) radii.push_back(r / 255.0);
  const auto sweep = eps_sweep(model, test, first_n(128), radii, NormKind::Linf, 0);
  std::size_t rises = 0;
  for (std::size_t i = 1; i < sweep.size(); ++i) rises += sweep[i].robust_accuracy > sweep[i - 1].robust_accuracy;
  const std::size_t counts[] = {100, 400};
  const auto steps = steps_sweep(model, test, first_n(test.size()), counts, PerturbationBall{}, 0);
  const double plateau = std::abs(steps[0].robust_accuracy - steps[1].robust_accuracy);
  report(10, "diagnostics consistency", origin_bad == 0 && rises == 0 && plateau <= kPlateauTol,
         fmt("landscape origin mismatches %zu/8; eps-sweep rises %zu; |acc(100) - acc(400)| = %.4f (%.4f vs %.4f)",
             origin_bad, rises, plateau, steps[0].robust_accuracy, steps[1].robust_accuracy));
}

void ensemble_sanity(const Desk& d) {
  const Dataset& test = d.data.test;
  const auto idx = first_n(test.size());
  std::vector<Model> models;
  for (const auto& r : d.pad) models.emplace_back(d.spec, r.result.best_params);
  const Tensor images = test.gather(idx);
  const Classifier* dup[] = {&models[0], &models[0]};
  const bool duplicate = ensemble_predict(dup, images) == argmax_rows(model_logits(models[0], images));

  const std::vector<CascadeStage> stages{{"eval", d.base.trainer.eval_attack}};
  std::vector<double> single;
  for (const auto& m : models) single.push_back(robust_accuracy(m, test, idx, stages).robust_accuracy);
  bool floor_ok = true, some_gain = false;
  std::string pairs;
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (std::size_t j = i + 1; j < models.size(); ++j) {
      const Ensemble ens({&models[i], &models[j]});
      const double acc = robust_accuracy(ens, test, idx, stages).robust_accuracy;
      floor_ok = floor_ok && acc >= std::min(single[i], single[j]);
      some_gain = some_gain || acc > std::max(single[i], single[j]);
      pairs += fmt(" %zu+%zu %.4f (%.4f, %.4f);", i, j, acc, single[i], single[j]);
    }
  }
  report(11, "ensemble sanity", duplicate && floor_ok && some_gain,
         fmt("duplicate == single: %s; early-stopped Pad & Crop pairs, robust test accuracy:%s >= min: %s, > both "
             "somewhere: %s",
             duplicate ? "yes" : "no", pairs.c_str(), floor_ok ? "yes" : "no", some_gain ? "yes" : "no"));
}

// ---------------------------------------------------------------- determinism

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = bytes.str();
  }
  return files;
}

int run_tool(std::vector<std::string> args) {
  args.insert(args.begin(), "robustaug");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream sink;
  auto* old = std::cout.rdbuf(sink.rdbuf());
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old);
  return code;
}

void determinism() {
  const fs::path root = fs::temp_directory_path() / "robustaug_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  cli::RunConfig cfg = cli::default_run_config();
  cfg.name = "det";
  cfg.seed = 5;
  cfg.output_dir = (root / "work").string();
  cfg.data.train_size = 64;
  cfg.data.val_size = 32;
  cfg.data.test_size = 32;
  cfg.data.image_size = 8;
  cfg.model.widths = {4, 4, 8};
  cfg.trainer.epochs = 4;
  cfg.trainer.batch_size = 16;
  cfg.trainer.eval_every = 4;
  cfg.trainer.checkpoint_every = 8;
  cfg.trainer.augment = {AugmentSpec{PadCropParams{}}, AugmentSpec{CutmixParams{}}};
  cfg.diagnostics.eps_radii = {0.0, 4 / 255.0, 8 / 255.0};
  const fs::path config = root / "config.json";
  cli::write_atomic(config, cli::to_json(cfg).dump(2));
  const fs::path run = cfg.run_dir();

  std::vector<std::map<std::string, std::string>> passes;
  std::vector<int> codes;
  for (const char* threads : {"1", "3"}) {
    setenv("ROBUSTAUG_THREADS", threads, 1);
    fs::remove_all(root / "work");
    codes.push_back(run_tool({"train", "-c", config.string()}));
    codes.push_back(run_tool({"eval", "--checkpoint", (run / "best.ckpt").string(), "--per-example"}));
    codes.push_back(run_tool({"diag", "eps-sweep", "--checkpoint", (run / "best.ema.ckpt").string(), "--out",
                         (run / "diag").string(), "--plot"}));
    passes.push_back(snapshot(root / "work"));
  }
  unsetenv("ROBUSTAUG_THREADS");
  const bool codes_ok = std::all_of(codes.begin(), codes.end(), [](int c) { return c == 0; });
  std::size_t csv = 0, ckpt = 0;
  for (const auto& [name, _] : passes[0]) {
    csv += name.ends_with(".csv");
    ckpt += name.ends_with(".ckpt");
  }
  const bool same = passes[0] == passes[1];
  report(12, "determinism", codes_ok && same && csv > 0 && ckpt > 0,
         fmt("train, eval and eps-sweep under ROBUSTAUG_THREADS=1 and 3: %zu files (%zu csv, %zu checkpoints) %s",
             passes[0].size(), csv, ckpt, same ? "byte-identical" : "differ"));
  fs::remove_all(root);
}

}  // namespace

int main() {
  gradient_correctness();
  pgd_linear_oracle();
  feasibility();
  augmentation_consistency();
  ema_closed_form();
  schedule_formulas();
  const Desk desk = desk_runs();
  robust_overfitting(desk);
  wa_augmentation(desk);
  cascade_monotonicity(desk);
  diagnostics_consistency(desk);
  ensemble_sanity(desk);
  determinism();
  std::printf("%d of 12 criteria failed\n", failures);
  return failures;
}
