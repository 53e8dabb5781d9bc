#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "robustaug/errors.hpp"

namespace robustaug::cli {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

std::string kind_of(const json& j) { return j.type_name(); }

template <typename T>
T convert(const json& j, const std::string& path) {
  auto fail = [&](const char* want) {
    throw ConfigError(path + ": expected " + want + ", got " + kind_of(j));
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) fail("a boolean");
    return j.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) fail("a string");
    return j.get<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) fail("a number");
    return j.get<T>();
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!j.is_number_unsigned()) fail("a non-negative integer");
    return j.get<T>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) fail("an integer");
    return j.get<T>();
  } else {
    static_assert(sizeof(T) == 0, "unsupported config type");
  }
}

// Reads the members of one JSON object and rejects whatever was not read.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + ": expected an object");
  }

  const json* child(const std::string& key) {
    const auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (const json* c = child(key)) out = convert<T>(*c, path(key));
  }

  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) {
    const json* c = child(key);
    if (!c) return;
    if (!c->is_array()) throw ConfigError(path(key) + ": expected a list, got " + kind_of(*c));
    out.clear();
    for (std::size_t i = 0; i < c->size(); ++i) {
      out.push_back(convert<T>((*c)[i], path(key) + "[" + std::to_string(i) + "]"));
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown key '" + join(path_, key) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename F>
auto wrap(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

AttackConfig parse_attack(const json& j, const std::string& path, AttackConfig a) {
  Obj o(j, path);
  std::string s;
  // Ball first: a preset keeps it.
  if (o.child("norm")) {
    o.get("norm", s);
    a.ball.norm = wrap(o.path("norm"), [&] { return parse_norm(s); });
  }
  o.get("eps", a.ball.eps);
  if (o.child("preset")) {
    o.get("preset", s);
    a = wrap(o.path("preset"), [&] { return named_attack(s, a.ball); });
  }
  if (o.child("optimizer")) {
    o.get("optimizer", s);
    a.optimizer = wrap(o.path("optimizer"), [&] { return parse_optimizer(s); });
  }
  if (o.child("objective")) {
    o.get("objective", s);
    a.objective = wrap(o.path("objective"), [&] { return parse_objective(s); });
  }
  if (o.child("init")) {
    o.get("init", s);
    a.init = wrap(o.path("init"), [&] { return parse_init(s); });
  }
  o.get("steps", a.steps);
  o.get("step_size", a.step_size);
  o.get("adam_lr", a.adam_lr);
  o.get_list("adam_breaks", a.adam_breaks);
  o.get("restarts", a.restarts);
  o.get("target", a.target);
  o.get("seed", a.seed);
  o.get("momentum", a.momentum);
  o.get("improve_fraction", a.improve_fraction);
  o.finish();
  return a;
}

AugmentSpec parse_augment(const json& j, const std::string& path) {
  Obj o(j, path);
  std::string op;
  if (!o.child("op")) throw ConfigError(o.path("op") + ": missing augmentation name");
  o.get("op", op);
  AugmentSpec spec;
  if (op == "pad_crop") {
    PadCropParams p;
    o.get("pad", p.pad);
    o.get("flip", p.flip);
    spec.params = p;
  } else if (op == "mixup") {
    MixupParams p;
    o.get("alpha", p.alpha);
    o.get("per_example", p.per_example);
    spec.params = p;
  } else if (op == "cutout") {
    CutoutParams p;
    o.get("window", p.window);
    spec.params = p;
  } else if (op == "cutmix") {
    CutmixParams p;
    o.get("alpha", p.alpha);
    o.get("beta", p.beta);
    std::size_t w = 0;
    if (o.child("fixed_window")) {
      o.get("fixed_window", w);
      p.fixed_window = w;
    }
    spec.params = p;
  } else if (op == "ricap") {
    RicapParams p;
    o.get("beta", p.beta);
    spec.params = p;
  } else if (op == "randaugment") {
    RandAugmentParams p;
    o.get("n", p.n);
    o.get("magnitude", p.magnitude);
    o.get("curated", p.curated);
    o.get_list("pool", p.pool);
    for (std::size_t i = 0; i < p.pool.size(); ++i) {
      wrap(o.path("pool") + "[" + std::to_string(i) + "]", [&] { return parse_primitive(p.pool[i]); });
    }
    spec.params = p;
  } else {
    throw ConfigError(o.path("op") + ": unknown augmentation '" + op +
                      "' (pad_crop, mixup, cutout, cutmix, ricap, randaugment)");
  }
  o.finish();
  return spec;
}

std::vector<AugmentSpec> parse_augment_list(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected a list, got " + kind_of(j));
  std::vector<AugmentSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(parse_augment(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

}  // namespace

std::filesystem::path RunConfig::run_dir() const {
  return std::filesystem::path(output_dir) / (name + "-" + std::to_string(seed));
}

RunConfig default_run_config() {
  RunConfig c;
  c.model.kind = ArchKind::SmallCnn;
  c.model.widths = {8, 16, 32};
  c.trainer = default_train_config();
  c.trainer.trades_beta = 6.0;
  c.trainer.batch_size = 64;
  c.trainer.ema_decay = 0.99;
  c.trainer.eval_every = 10;
  const PerturbationBall ball = c.trainer.eval_attack.ball;
  c.eval.cascade = {{"apgd_ce", named_attack("apgd_ce", ball)},
                    {"apgd_margin", named_attack("apgd_margin", ball)},
                    {"mt", named_attack("mt", ball)}};
  for (const int r : {0, 2, 4, 8, 16, 32, 64}) c.diagnostics.eps_radii.push_back(r / 255.0);
  c.diagnostics.step_counts = {1, 5, 10, 25, 50, 100, 200, 400};
  c.diagnostics.wa_taus = {0.0, 0.9, 0.95, 0.99, 0.995, 0.999};
  c.diagnostics.wa_augments = {{AugmentSpec{PadCropParams{}}}, {AugmentSpec{CutmixParams{}}}};
  return c;
}

RunConfig parse_run_config(const json& doc) {
  RunConfig c = default_run_config();
  Obj root(doc, "");
  root.get("name", c.name);
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  if (c.name.empty() || c.name.find('/') != std::string::npos) throw ConfigError("name: must be a nonempty plain name");

  if (const json* d = root.child("data")) {
    Obj o(*d, "data");
    auto& x = c.data;
    o.get("source", x.source);
    o.get("kind", x.kind);
    o.get("train_size", x.train_size);
    o.get("val_size", x.val_size);
    o.get("test_size", x.test_size);
    o.get("num_classes", x.num_classes);
    o.get("image_size", x.image_size);
    o.get("signal", x.signal);
    o.get("noise", x.noise);
    o.get("label_noise", x.label_noise);
    o.get("data_seed", x.data_seed);
    o.get_list("classes", x.classes);
    o.get("dir", x.dir);
    o.finish();
    if (x.source != "synthetic" && x.source != "cifar10") {
      throw ConfigError("data.source: expected 'synthetic' or 'cifar10', got '" + x.source + "'");
    }
    if (x.source == "synthetic") wrap("data.kind", [&] { return parse_synthetic_kind(x.kind); });
  }

  if (const json* m = root.child("model")) {
    Obj o(*m, "model");
    std::string arch;
    if (o.child("arch")) {
      o.get("arch", arch);
      c.model.kind = wrap("model.arch", [&] { return parse_arch_kind(arch); });
      c.model.widths.clear();
    }
    o.get_list("widths", c.model.widths);
    o.finish();
  }

  if (const json* a = root.child("augment")) c.trainer.augment = parse_augment_list(*a, "augment");

  if (const json* t = root.child("trainer")) {
    Obj o(*t, "trainer");
    auto& x = c.trainer;
    o.get("epochs", x.epochs);
    o.get("batch_size", x.batch_size);
    o.get("base_lr", x.base_lr);
    o.get("weight_decay", x.weight_decay);
    o.get("momentum", x.momentum);
    if (const json* b = o.child("trades_beta")) {
      x.trades_beta = b->is_null() ? std::nullopt : std::optional<double>(convert<double>(*b, "trainer.trades_beta"));
    }
    o.get("ema_decay", x.ema_decay);
    o.get("eval_every", x.eval_every);
    o.get("checkpoint_every", x.checkpoint_every);
    o.get("record_wallclock", x.record_wallclock);
    if (const json* ta = o.child("train_attack")) x.train_attack = parse_attack(*ta, "trainer.train_attack", x.train_attack);
    if (const json* ea = o.child("eval_attack")) x.eval_attack = parse_attack(*ea, "trainer.eval_attack", x.eval_attack);
    o.finish();
  }
  c.trainer.seed = c.seed;
  wrap("trainer", [&] {
    c.trainer.validate();
    return 0;
  });

  if (const json* e = root.child("eval")) {
    Obj o(*e, "eval");
    o.get("split", c.eval.split);
    if (c.eval.split != "test" && c.eval.split != "validation") {
      throw ConfigError("eval.split: expected 'test' or 'validation', got '" + c.eval.split + "'");
    }
    if (const json* cs = o.child("cascade")) {
      if (!cs->is_array() || cs->empty()) throw ConfigError("eval.cascade: expected a nonempty list");
      c.eval.cascade.clear();
      for (std::size_t i = 0; i < cs->size(); ++i) {
        const std::string p = "eval.cascade[" + std::to_string(i) + "]";
        Obj st((*cs)[i], p);
        CascadeStage stage;
        st.get("label", stage.label);
        const json* aj = st.child("attack");
        if (!aj) throw ConfigError(p + ".attack: missing");
        stage.config = parse_attack(*aj, p + ".attack", AttackConfig{});
        if (stage.label.empty()) stage.label = to_string(stage.config.optimizer);
        st.finish();
        c.eval.cascade.push_back(std::move(stage));
      }
    }
    o.finish();
  }

  if (const json* dg = root.child("diagnostics")) {
    Obj o(*dg, "diagnostics");
    auto& x = c.diagnostics;
    o.get_list("eps_radii", x.eps_radii);
    o.get_list("step_counts", x.step_counts);
    if (const json* l = o.child("landscape")) {
      Obj lo(*l, "diagnostics.landscape");
      lo.get("nu", x.landscape.nu);
      lo.get("nv", x.landscape.nv);
      lo.get("extent", x.landscape.extent);
      lo.get("pgd_steps", x.landscape.pgd_steps);
      lo.get("example", x.landscape_example);
      lo.finish();
      if (x.landscape.nu % 2 == 0 || x.landscape.nv % 2 == 0) {
        throw ConfigError("diagnostics.landscape: grid extents must be odd");
      }
    }
    o.get_list("wa_taus", x.wa_taus);
    if (const json* w = o.child("wa_augments")) {
      if (!w->is_array()) throw ConfigError("diagnostics.wa_augments: expected a list of lists");
      x.wa_augments.clear();
      for (std::size_t i = 0; i < w->size(); ++i) {
        x.wa_augments.push_back(parse_augment_list((*w)[i], "diagnostics.wa_augments[" + std::to_string(i) + "]"));
      }
    }
    o.finish();
    for (const double t : x.wa_taus) {
      if (!(t >= 0.0 && t < 1.0)) throw ConfigError("diagnostics.wa_taus: values must lie in [0, 1)");
    }
  }
  root.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

json attack_to_json(const AttackConfig& a) {
  return json{{"norm", to_string(a.ball.norm)},
              {"eps", a.ball.eps},
              {"optimizer", to_string(a.optimizer)},
              {"objective", to_string(a.objective)},
              {"init", to_string(a.init)},
              {"steps", a.steps},
              {"step_size", a.step_size},
              {"adam_lr", a.adam_lr},
              {"adam_breaks", a.adam_breaks},
              {"restarts", a.restarts},
              {"target", a.target},
              {"seed", a.seed},
              {"momentum", a.momentum},
              {"improve_fraction", a.improve_fraction}};
}

json augment_to_json(const AugmentSpec& a) {
  json j{{"op", a.name()}};
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, PadCropParams>) {
          j["pad"] = p.pad;
          j["flip"] = p.flip;
        } else if constexpr (std::is_same_v<P, MixupParams>) {
          j["alpha"] = p.alpha;
          j["per_example"] = p.per_example;
        } else if constexpr (std::is_same_v<P, CutoutParams>) {
          j["window"] = p.window;
        } else if constexpr (std::is_same_v<P, CutmixParams>) {
          j["alpha"] = p.alpha;
          j["beta"] = p.beta;
          if (p.fixed_window) j["fixed_window"] = *p.fixed_window;
        } else if constexpr (std::is_same_v<P, RicapParams>) {
          j["beta"] = p.beta;
        } else {
          j["n"] = p.n;
          j["magnitude"] = p.magnitude;
          j["curated"] = p.curated;
          j["pool"] = p.pool;
        }
      },
      a.params);
  return j;
}

json to_json(const RunConfig& c) {
  json augs = json::array();
  for (const auto& a : c.trainer.augment) augs.push_back(augment_to_json(a));
  json cascade = json::array();
  for (const auto& s : c.eval.cascade) cascade.push_back({{"label", s.label}, {"attack", attack_to_json(s.config)}});
  json wa_augs = json::array();
  for (const auto& list : c.diagnostics.wa_augments) {
    json l = json::array();
    for (const auto& a : list) l.push_back(augment_to_json(a));
    wa_augs.push_back(l);
  }
  const auto& t = c.trainer;
  return json{
      {"name", c.name},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"data",
       {{"source", c.data.source},
        {"kind", c.data.kind},
        {"train_size", c.data.train_size},
        {"val_size", c.data.val_size},
        {"test_size", c.data.test_size},
        {"num_classes", c.data.num_classes},
        {"image_size", c.data.image_size},
        {"signal", c.data.signal},
        {"noise", c.data.noise},
        {"label_noise", c.data.label_noise},
        {"data_seed", c.data.data_seed},
        {"classes", c.data.classes},
        {"dir", c.data.dir}}},
      {"model", {{"arch", to_string(c.model.kind)}, {"widths", c.model.resolved_widths()}}},
      {"augment", augs},
      {"trainer",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"base_lr", t.base_lr},
        {"weight_decay", t.weight_decay},
        {"momentum", t.momentum},
        {"trades_beta", t.trades_beta ? json(*t.trades_beta) : json(nullptr)},
        {"ema_decay", t.ema_decay},
        {"eval_every", t.eval_every},
        {"checkpoint_every", t.checkpoint_every},
        {"record_wallclock", t.record_wallclock},
        {"train_attack", attack_to_json(t.train_attack)},
        {"eval_attack", attack_to_json(t.eval_attack)}}},
      {"eval", {{"split", c.eval.split}, {"cascade", cascade}}},
      {"diagnostics",
       {{"eps_radii", c.diagnostics.eps_radii},
        {"step_counts", c.diagnostics.step_counts},
        {"landscape",
         {{"nu", c.diagnostics.landscape.nu},
          {"nv", c.diagnostics.landscape.nv},
          {"extent", c.diagnostics.landscape.extent},
          {"pgd_steps", c.diagnostics.landscape.pgd_steps},
          {"example", c.diagnostics.landscape_example}}},
        {"wa_taus", c.diagnostics.wa_taus},
        {"wa_augments", wa_augs}}},
  };
}

LoadedData load_data(const RunConfig& cfg) {
  const auto& d = cfg.data;
  LoadedData out;
  if (d.source == "synthetic") {
    SyntheticParams sp;
    sp.classes = d.num_classes;
    sp.size = d.image_size;
    sp.signal = d.signal;
    sp.noise = d.noise;
    sp.label_noise = d.label_noise;
    out.pool = synthetic_dataset(parse_synthetic_kind(d.kind), d.train_size + d.val_size, d.data_seed, sp, 0);
    // The test set keeps its true labels.
    sp.label_noise = 0.0;
    out.test = synthetic_dataset(parse_synthetic_kind(d.kind), d.test_size, d.data_seed, sp, 1);
  } else {
    std::filesystem::path dir = d.dir.empty() ? data_dir_from_env() : std::filesystem::path(d.dir);
    if (dir.empty()) throw IoError("cifar10 data needs data.dir or ROBUSTAUG_DATA_DIR");
    auto take = [](const Dataset& ds, std::size_t n) {
      std::vector<std::size_t> idx(std::min(n, ds.size()));
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      return ds.subset(idx);
    };
    out.pool = take(load_cifar10_dir(dir, true).select_classes(d.classes), d.train_size + d.val_size);
    out.test = take(load_cifar10_dir(dir, false).select_classes(d.classes), d.test_size);
  }
  out.split = make_split(out.pool, d.val_size, cfg.seed, out.test.size());
  return out;
}

ArchSpec resolved_arch(const RunConfig& cfg, const Dataset& ds) {
  ArchSpec s = cfg.model;
  s.channels = ds.channels;
  s.height = ds.height;
  s.width = ds.width;
  s.classes = ds.classes;
  s.widths = s.resolved_widths();
  return s;
}

}  // namespace robustaug::cli
