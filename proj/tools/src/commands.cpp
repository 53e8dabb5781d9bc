#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "plot.hpp"
#include "robustaug/diagnostics.hpp"
#include "robustaug/errors.hpp"

namespace robustaug::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return kNumerical;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kIo;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kIo;
  return kConfig;
}

void write_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

// Examples an evaluation runs on.
struct EvalSet {
  const Dataset* ds;
  std::vector<std::size_t> indices;
};

EvalSet eval_set(const RunConfig& cfg, const LoadedData& data) {
  if (cfg.eval.split == "validation") return {&data.pool, data.split.validation};
  return {&data.test, data.split.test};
}

void check_compatible(const ArchSpec& ckpt, const ArchSpec& data_spec, const fs::path& path) {
  if (ckpt.channels != data_spec.channels || ckpt.height != data_spec.height || ckpt.width != data_spec.width ||
      ckpt.classes != data_spec.classes) {
    throw ValidationError("checkpoint " + path.string() + " (" + ckpt.describe() + ") does not match the data (" +
                          data_spec.describe() + ")");
  }
}

struct Loaded {
  fs::path path;
  Model model;
};

std::vector<Loaded> load_models(const std::vector<std::string>& paths, const ArchSpec& data_spec) {
  std::vector<Loaded> out;
  for (const auto& p : paths) {
    auto [spec, params] = load_checkpoint(p);
    check_compatible(spec, data_spec, p);
    out.push_back({p, Model(spec, std::move(params))});
  }
  return out;
}

// Config given with -c, else the config.json beside the first checkpoint,
// else the defaults.
RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& checkpoints) {
  if (!config_path.empty()) return load_run_config(config_path);
  if (!checkpoints.empty()) {
    const fs::path sibling = fs::path(checkpoints.front()).parent_path() / "config.json";
    if (fs::exists(sibling)) return load_run_config(sibling);
  }
  return default_run_config();
}

std::string stem_of(const fs::path& ckpt) {
  std::string s = ckpt.filename().string();
  const std::string ext = ".ckpt";
  if (s.size() > ext.size() && s.compare(s.size() - ext.size(), ext.size(), ext) == 0) s.resize(s.size() - ext.size());
  return s;
}

void emit(const fs::path& path, const std::string& text) {
  write_atomic(path, text);
  std::cout << "wrote " << path.string() << "\n";
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string name;
  std::string output_dir;
  std::optional<std::size_t> epochs;
};

RunConfig apply_overrides(RunConfig cfg, const TrainOptions& o) {
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.trainer.seed = *o.seed;
  }
  if (!o.name.empty()) cfg.name = o.name;
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (o.epochs) cfg.trainer.epochs = *o.epochs;
  return cfg;
}

void print_summary(const TrainLog& log, const fs::path& dir) {
  std::cout << "run " << dir.string() << ": " << log.total_steps << " steps";
  if (!log.records.empty()) {
    const auto& last = log.records.back();
    std::cout << ", final robust " << pct(last.robust_val) << " (ema " << pct(last.robust_val_ema) << ")";
    if (log.best_index) std::cout << ", best robust " << pct(log.records[*log.best_index].robust_val);
  }
  std::cout << "\n";
}

int cmd_train(const TrainOptions& o) {
  const RunConfig cfg = apply_overrides(o.config.empty() ? default_run_config() : load_run_config(o.config), o);
  const TrainLog log = train_run(cfg);
  print_summary(log, cfg.run_dir());
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::string split;
  std::optional<double> eps;
  bool per_example = false;
};

int cmd_eval(const EvalOptions& o) {
  RunConfig cfg = resolve_config(o.config, {o.checkpoint});
  if (!o.split.empty()) cfg.eval.split = o.split;
  if (o.eps) {
    if (!(*o.eps >= 0.0)) throw ConfigError("--eps must be >= 0");
    for (auto& s : cfg.eval.cascade) s.config.ball.eps = *o.eps;
  }
  auto [spec, params] = load_checkpoint(o.checkpoint);
  const LoadedData data = load_data(cfg);
  const EvalSet set = eval_set(cfg, data);
  check_compatible(spec, resolved_arch(cfg, *set.ds), o.checkpoint);
  const Model model(spec, std::move(params));
  const auto res = robust_accuracy(model, *set.ds, set.indices, cfg.eval.cascade);

  const fs::path out = o.out.empty() ? fs::path(o.checkpoint).parent_path() : fs::path(o.out);
  const std::string stem = stem_of(o.checkpoint);
  std::ostringstream csv;
  csv << "# robustaug eval v1\nstage,label,attack,clean_accuracy,robust_accuracy\n";
  for (std::size_t i = 0; i < cfg.eval.cascade.size(); ++i) {
    csv << i << ',' << cfg.eval.cascade[i].label << ',' << describe(cfg.eval.cascade[i].config) << ','
        << num(res.clean_accuracy) << ',' << num(res.stage_accuracy[i]) << '\n';
  }
  emit(out / ("eval_" + stem + ".csv"), csv.str());
  if (o.per_example) emit(out / ("predictions_" + stem + ".csv"), prediction_csv(set.indices, res));
  std::cout << "clean " << pct(res.clean_accuracy) << ", robust " << pct(res.robust_accuracy) << " on "
            << set.indices.size() << " " << cfg.eval.split << " examples\n";
  return kOk;
}

// ---------------------------------------------------------------- augment

int cmd_augment(const std::string& config) {
  const RunConfig cfg = config.empty() ? default_run_config() : load_run_config(config);
  std::cout << "pipeline (applied in order, before the attack):\n";
  if (cfg.trainer.augment.empty()) std::cout << "  (none)\n";
  for (std::size_t i = 0; i < cfg.trainer.augment.size(); ++i) {
    std::cout << "  " << i << ": " << augment_to_json(cfg.trainer.augment[i]).dump() << "\n";
  }
  std::cout << "\n" << describe_magnitude_table();
  std::cout << "\ncurated pool:";
  for (const auto op : curated_pool()) std::cout << ' ' << to_string(op);
  std::cout << "\nfull pool:";
  for (const auto op : full_pool()) std::cout << ' ' << to_string(op);
  std::cout << "\n";
  return kOk;
}

// ---------------------------------------------------------------- diag

struct DiagOptions {
  std::string kind;
  std::string config;
  std::vector<std::string> checkpoints;
  std::vector<std::string> predictions;
  std::string out;
  bool plot = false;
  std::optional<std::size_t> grid;
  std::optional<std::size_t> example;
};

std::string order_csv(const DiversityReport& r, const std::vector<std::vector<std::uint8_t>>& correct,
                      const std::vector<std::size_t>& indices) {
  std::ostringstream os;
  os << "# robustaug diversity_order v1\nposition,index";
  for (std::size_t s = 0; s < correct.size(); ++s) os << ",snapshot_" << s;
  os << '\n';
  for (std::size_t p = 0; p < r.order.size(); ++p) {
    const std::size_t e = r.order[p];
    os << p << ',' << indices[e];
    for (const auto& v : correct) os << ',' << int(v[e]);
    os << '\n';
  }
  return os.str();
}

std::vector<std::uint8_t> read_predictions(const fs::path& path, std::vector<std::size_t>& indices) {
  const CsvTable t = parse_csv(read_text(path));
  const auto idx = t.numbers("index");
  const auto robust = t.numbers("robust_correct");
  std::vector<std::size_t> ids(idx.begin(), idx.end());
  if (indices.empty()) {
    indices = ids;
  } else if (indices != ids) {
    throw ValidationError("prediction files cover different examples: " + path.string());
  }
  std::vector<std::uint8_t> out;
  for (const double v : robust) out.push_back(v != 0.0);
  return out;
}

int cmd_diag(const DiagOptions& o) {
  const RunConfig cfg = resolve_config(o.config, o.checkpoints);
  const fs::path out = !o.out.empty()            ? fs::path(o.out)
                       : !o.checkpoints.empty() ? fs::path(o.checkpoints.front()).parent_path()
                                                : cfg.run_dir();
  const LoadedData data = load_data(cfg);
  const EvalSet set = eval_set(cfg, data);
  const ArchSpec data_spec = resolved_arch(cfg, *set.ds);
  const PerturbationBall ball = cfg.trainer.eval_attack.ball;
  auto need = [&](std::size_t n) {
    if (o.checkpoints.size() < n) {
      throw ConfigError("diag " + o.kind + " needs " + std::to_string(n) + " checkpoint(s) (--checkpoint)");
    }
  };
  auto plot = [&](const std::string& name, const std::string& svg) {
    if (o.plot) emit(out / name, svg);
  };

  if (o.kind == "landscape") {
    need(1);
    const auto models = load_models({o.checkpoints.front()}, data_spec);
    LandscapeSpec ls = cfg.diagnostics.landscape;
    ls.seed = cfg.seed;
    if (o.grid) ls.nu = ls.nv = *o.grid;
    const std::size_t ex = o.example.value_or(cfg.diagnostics.landscape_example);
    if (ex >= set.indices.size()) throw ConfigError("--example out of range");
    const std::size_t id = set.indices[ex];
    const auto grid = landscape(models.front().model, set.ds->image(id), set.ds->labels[id], ball, ls);
    const std::string csv = landscape_csv(grid);
    emit(out / "landscape.csv", csv);
    plot("landscape.svg", heatmap(parse_csv(csv), "margin landscape, example " + std::to_string(id), "a", "b",
                                  "margin"));
    std::cout << "clean margin " << num(grid.clean_margin) << ", attack endpoint margin " << num(grid.endpoint_margin)
              << "\n";
  } else if (o.kind == "eps-sweep" || o.kind == "steps-sweep") {
    need(1);
    const auto models = load_models({o.checkpoints.front()}, data_spec);
    std::string csv;
    if (o.kind == "eps-sweep") {
      csv = sweep_csv(eps_sweep(models.front().model, *set.ds, set.indices, cfg.diagnostics.eps_radii, ball.norm,
                                cfg.seed),
                      "eps_sweep", "eps");
      emit(out / "eps_sweep.csv", csv);
      plot("eps_sweep.svg", line_chart(parse_csv(csv), "robust accuracy vs radius", "eps", {"robust_accuracy"}));
    } else {
      csv = sweep_csv(steps_sweep(models.front().model, *set.ds, set.indices, cfg.diagnostics.step_counts, ball,
                                  cfg.seed),
                      "steps_sweep", "steps");
      emit(out / "steps_sweep.csv", csv);
      plot("steps_sweep.svg", line_chart(parse_csv(csv), "robust accuracy vs attack steps", "steps",
                                         {"robust_accuracy"}));
    }
    std::cout << csv;
  } else if (o.kind == "diff") {
    std::vector<std::vector<std::uint8_t>> correct;
    std::vector<std::size_t> indices;
    for (const auto& p : o.predictions) correct.push_back(read_predictions(p, indices));
    if (!o.checkpoints.empty()) {
      const auto models = load_models(o.checkpoints, data_spec);
      const std::vector<CascadeStage> stages{{"eval_attack", cfg.trainer.eval_attack}};
      if (!indices.empty() && indices != set.indices) {
        throw ValidationError("prediction files and checkpoints cover different examples");
      }
      indices = set.indices;
      for (const auto& m : models) correct.push_back(robust_accuracy(m.model, *set.ds, set.indices, stages).robust_correct);
    }
    if (correct.empty()) throw ConfigError("diag diff needs --checkpoint or --predictions");
    const auto report = prediction_diff(correct);
    emit(out / "diff.csv", diversity_csv(report));
    emit(out / "agreement.csv", agreement_csv(report));
    const std::string ocsv = order_csv(report, correct, indices);
    emit(out / "diff_order.csv", ocsv);
    std::vector<std::string> cols;
    for (std::size_t s = 0; s < correct.size(); ++s) cols.push_back("snapshot_" + std::to_string(s));
    plot("diff.svg", bar_strips(parse_csv(ocsv), "robust predictions per snapshot", "index", cols));
    std::cout << diversity_csv(report);
  } else if (o.kind == "ensemble") {
    need(1);
    const auto models = load_models(o.checkpoints, data_spec);
    std::vector<std::vector<std::size_t>> sets;
    for (std::size_t i = 0; i < models.size(); ++i) sets.push_back({i});
    for (std::size_t i = 0; i < models.size(); ++i) {
      for (std::size_t j = i + 1; j < models.size(); ++j) sets.push_back({i, j});
    }
    if (models.size() > 2) {
      std::vector<std::size_t> all(models.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      sets.push_back(all);
    }
    std::ostringstream csv;
    csv << "# robustaug ensemble v1\nrow,members,clean_accuracy,robust_accuracy\n";
    const std::vector<CascadeStage> stages{{"eval_attack", cfg.trainer.eval_attack}};
    for (std::size_t r = 0; r < sets.size(); ++r) {
      std::vector<const Classifier*> members;
      std::string label;
      for (const auto i : sets[r]) {
        members.push_back(&models[i].model);
        label += (label.empty() ? "" : "+") + std::to_string(i);
      }
      const Ensemble ens(members);
      const auto res = robust_accuracy(ens, *set.ds, set.indices, stages);
      csv << r << ',' << label << ',' << num(res.clean_accuracy) << ',' << num(res.robust_accuracy) << '\n';
    }
    emit(out / "ensemble.csv", csv.str());
    plot("ensemble.svg", line_chart(parse_csv(csv.str()), "ensembles (members per row in the CSV)", "row",
                                    {"clean_accuracy", "robust_accuracy"}));
    std::cout << csv.str();
  } else if (o.kind == "wa-sweep") {
    TrainConfig base = cfg.trainer;
    base.seed = cfg.seed;
    const ArchSpec spec = resolved_arch(cfg, data.pool);
    const auto rows = wa_decay_sweep(base, spec, data.pool, data.split, cfg.diagnostics.wa_taus,
                                     cfg.diagnostics.wa_augments);
    const std::string csv = wa_sweep_csv(rows);
    emit(out / "wa_sweep.csv", csv);
    plot("wa_sweep.svg", line_chart(parse_csv(csv), "final robust accuracy of the averaged weights", "tau",
                                    {"final_robust_ema"}, "augment"));
    std::cout << csv;
  } else {
    throw ConfigError("unknown diagnostic '" + o.kind +
                      "' (landscape, eps-sweep, steps-sweep, diff, ensemble, wa-sweep)");
  }
  return kOk;
}

// ---------------------------------------------------------------- repro

struct ReproOptions {
  std::string figure;
  std::string config;
  std::string out;
  bool dry_run = false;
};

json manifest_json(const std::string& figure, const std::vector<ReproRun>& runs) {
  json list = json::array();
  for (const auto& r : runs) {
    const fs::path dir = r.config.run_dir();
    list.push_back({{"name", r.config.name},
                    {"seed", r.config.seed},
                    {"dir", dir.generic_string()},
                    {"done", fs::exists(dir / "done")}});
  }
  return json{{"figure", figure}, {"runs", list}};
}

// Metric a figure plots for each run: the averaged weights when WA is on.
bool uses_wa(const RunConfig& c) { return c.trainer.ema_decay > 0.0; }

int cmd_repro(const ReproOptions& o) {
  RunConfig base = o.config.empty() ? default_run_config() : load_run_config(o.config);
  base.output_dir = (o.out.empty() ? fs::path(base.output_dir) : fs::path(o.out)) / o.figure;
  const auto runs = repro_matrix(o.figure, base);
  const fs::path root = base.output_dir;
  const fs::path manifest = root / "manifest.json";
  write_atomic(manifest, manifest_json(o.figure, runs).dump(2) + "\n");
  std::cout << o.figure << ": " << runs.size() << " runs in " << manifest.string() << "\n";
  if (o.dry_run) return kOk;

  std::ostringstream curves, finals;
  curves << "# robustaug " << o.figure << "_curves v1\nrun,step,robust_val,robust_val_ema,plotted\n";
  finals << "# robustaug " << o.figure << "_final v1\nrun,augment,tau,final_robust,final_robust_ema,best_robust\n";
  for (const auto& r : runs) {
    const fs::path dir = r.config.run_dir();
    if (fs::exists(dir / "done")) {
      std::cout << "skip " << dir.string() << " (done)\n";
    } else {
      print_summary(train_run(r.config), dir);
      write_atomic(manifest, manifest_json(o.figure, runs).dump(2) + "\n");
    }
    const CsvTable log = parse_csv(read_text(dir / "train_log.csv"));
    const std::size_t sc = log.column("step"), rc = log.column("robust_val_pgd40"), ec = log.column("robust_val_ema");
    std::string best = "0";
    double best_v = -1.0;
    for (const auto& row : log.rows) {
      const std::string& plotted = uses_wa(r.config) ? row[ec] : row[rc];
      curves << r.name << ',' << row[sc] << ',' << row[rc] << ',' << row[ec] << ',' << plotted << '\n';
      if (std::stod(row[rc]) > best_v) {
        best_v = std::stod(row[rc]);
        best = row[rc];
      }
    }
    if (!log.rows.empty()) {
      finals << r.name << ',' << augment_label(r.config.trainer.augment) << ',' << num(r.config.trainer.ema_decay) << ',' << log.rows.back()[rc] << ','
             << log.rows.back()[ec] << ',' << best << '\n';
    }
  }
  emit(root / (o.figure + "_curves.csv"), curves.str());
  emit(root / (o.figure + "_final.csv"), finals.str());
  if (o.figure == "fig9") {
    emit(root / "fig9.svg", line_chart(parse_csv(finals.str()), "final robust accuracy vs decay rate", "tau",
                                       {"final_robust_ema"}, "augment"));
  } else {
    emit(root / (o.figure + ".svg"),
         line_chart(parse_csv(curves.str()), o.figure + ": robust validation accuracy", "step", {"plotted"}, "run"));
  }
  return kOk;
}

}  // namespace

// ---------------------------------------------------------------- shared

TrainLog train_run(const RunConfig& cfg) {
  const LoadedData data = load_data(cfg);
  const ArchSpec spec = resolved_arch(cfg, data.pool);
  const fs::path dir = cfg.run_dir();
  fs::create_directories(dir);
  fs::remove(dir / "done");
  write_atomic(dir / "config.json", to_json(cfg).dump(2) + "\n");
  TrainConfig tc = cfg.trainer;
  tc.seed = cfg.seed;
  tc.run_dir = dir;
  const TrainResult res = train(tc, spec, data.pool, data.split);
  write_atomic(dir / "train_log.csv", train_log_csv(res.log));
  if (!res.best_params.entries.empty()) save_checkpoint(dir / "best.ckpt", spec, res.best_params);
  if (!res.best_ema_params.entries.empty()) save_checkpoint(dir / "best.ema.ckpt", spec, res.best_ema_params);
  write_atomic(dir / "done", std::to_string(res.log.total_steps) + "\n");
  return res.log;
}

std::vector<ReproRun> repro_matrix(const std::string& figure, const RunConfig& base) {
  std::vector<ReproRun> runs;
  auto add = [&](const std::string& name, std::vector<AugmentSpec> aug, double tau) {
    ReproRun r{name, base};
    r.config.name = name;
    r.config.trainer.augment = std::move(aug);
    r.config.trainer.ema_decay = tau;
    runs.push_back(std::move(r));
  };
  const double tau = base.trainer.ema_decay > 0.0 ? base.trainer.ema_decay : 0.999;
  const AugmentSpec pad{PadCropParams{}}, mix{MixupParams{}}, cutmix{CutmixParams{}};
  if (figure == "fig2a") {
    add("pad_crop", {pad}, 0.0);
  } else if (figure == "fig3") {
    for (const bool wa : {false, true}) {
      const std::string suffix = wa ? "_wa" : "";
      const double t = wa ? tau : 0.0;
      add("pad_crop" + suffix, {pad}, t);
      add("mixup" + suffix, {mix}, t);
      add("cutmix" + suffix, {cutmix}, t);
    }
  } else if (figure == "fig5") {
    for (const double alpha : {0.1, 0.2, 0.4, 1.0}) {
      char name[32];
      std::snprintf(name, sizeof name, "mixup-alpha%g", alpha);
      add(name, {AugmentSpec{MixupParams{alpha, true}}}, tau);
    }
  } else if (figure == "fig6") {
    const std::size_t side = base.data.image_size;
    for (const double alpha : {0.2, 0.5, 1.0}) {
      char name[32];
      std::snprintf(name, sizeof name, "mixup-alpha%g", alpha);
      add(name, {AugmentSpec{MixupParams{alpha, true}}}, tau);
    }
    for (const std::size_t w : {side / 4, side / 2, 3 * side / 4}) {
      add("cutout-window" + std::to_string(w), {AugmentSpec{CutoutParams{w}}}, tau);
    }
    for (const std::size_t w : {side / 4, side / 2, 3 * side / 4}) {
      CutmixParams p;
      p.fixed_window = w;
      add("cutmix-window" + std::to_string(w), {AugmentSpec{p}}, tau);
    }
  } else if (figure == "fig9") {
    for (const double t : base.diagnostics.wa_taus) {
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, "-tau%g", t);
      add(std::string("pad_crop") + suffix, {pad}, t);
      add(std::string("cutmix") + suffix, {cutmix}, t);
    }
  } else {
    throw ConfigError("unknown figure '" + figure + "' (fig2a, fig3, fig5, fig6, fig9)");
  }
  return runs;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Adversarial training with data augmentation and weight averaging at desk scale.\n"
               "Environment: ROBUSTAUG_DATA_DIR (CIFAR-10 binary batches), ROBUSTAUG_THREADS (attack workers).\n"
               "Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numerical abort.",
               "robustaug"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  TrainOptions topt;
  auto* train_cmd = app.add_subcommand("train", "Train one run into <output_dir>/<name>-<seed>/");
  train_cmd->add_option("-c,--config", topt.config, "Run config (JSON); defaults if omitted");
  train_cmd->add_option("--seed", topt.seed, "Override the seed");
  train_cmd->add_option("--name", topt.name, "Override the run name");
  train_cmd->add_option("--output-dir", topt.output_dir, "Override the output directory");
  train_cmd->add_option("--epochs", topt.epochs, "Override the epoch count");

  EvalOptions eopt;
  auto* eval_cmd = app.add_subcommand("eval", "Clean and robust accuracy of a checkpoint under the eval cascade");
  eval_cmd->add_option("--checkpoint", eopt.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("-c,--config", eopt.config, "Run config; defaults to config.json beside the checkpoint");
  eval_cmd->add_option("--out", eopt.out, "Output directory (default: the checkpoint's directory)");
  eval_cmd->add_option("--split", eopt.split, "test or validation")->check(CLI::IsMember({"test", "validation"}));
  eval_cmd->add_option("--eps", eopt.eps, "Override the radius of every cascade stage");
  eval_cmd->add_flag("--per-example", eopt.per_example, "Also write per-example correctness (predictions_*.csv)");

  std::string aug_config;
  bool describe = false;
  auto* aug_cmd = app.add_subcommand("augment", "Inspect the augmentation pipeline");
  aug_cmd->add_option("-c,--config", aug_config, "Run config");
  aug_cmd->add_flag("--describe", describe, "Print the pipeline, the magnitude table and the operator pools")
      ->required();

  DiagOptions dopt;
  auto* diag_cmd = app.add_subcommand("diag", "Diagnostics: landscape, eps-sweep, steps-sweep, diff, ensemble, wa-sweep");
  diag_cmd->add_option("kind", dopt.kind, "Diagnostic to run")
      ->required()
      ->check(CLI::IsMember({"landscape", "eps-sweep", "steps-sweep", "diff", "ensemble", "wa-sweep"}));
  diag_cmd->add_option("-c,--config", dopt.config, "Run config; defaults to config.json beside the first checkpoint");
  diag_cmd->add_option("--checkpoint", dopt.checkpoints, "Checkpoint file(s)");
  diag_cmd->add_option("--predictions", dopt.predictions, "diff: per-example CSVs written by eval --per-example");
  diag_cmd->add_option("--out", dopt.out, "Output directory");
  diag_cmd->add_option("--grid", dopt.grid, "landscape: odd grid extent used for both axes");
  diag_cmd->add_option("--example", dopt.example, "landscape: position in the evaluation split");
  diag_cmd->add_flag("--plot", dopt.plot, "Also write an SVG rendered from the CSV");

  ReproOptions ropt;
  auto* repro_cmd = app.add_subcommand("repro", "Run a figure's config matrix (resumes completed runs)");
  repro_cmd->add_option("figure", ropt.figure, "Figure id")
      ->required()
      ->check(CLI::IsMember({"fig2a", "fig3", "fig5", "fig6", "fig9"}));
  repro_cmd->add_option("-c,--config", ropt.config, "Base run config");
  repro_cmd->add_option("--out", ropt.out, "Root directory (default: the config's output_dir)");
  repro_cmd->add_flag("--dry-run", ropt.dry_run, "Only write the manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd) return cmd_train(topt);
    if (*eval_cmd) return cmd_eval(eopt);
    if (*aug_cmd) return cmd_augment(aug_config);
    if (*diag_cmd) return cmd_diag(dopt);
    if (*repro_cmd) return cmd_repro(ropt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kOk;
}

}  // namespace robustaug::cli
