#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "robustaug/errors.hpp"
#include "robustaug/trainer.hpp"
#include "gradient_checks.hpp"
#include "support.hpp"

using namespace robustaug;

namespace {

using testing::tiny_batch;
using testing::tiny_cnn;

double loss_value(const ArchSpec& s, ModelParams& p, const ImageBatch& b, const Tensor& delta, double beta) {
  Graph g;
  return g.value(trades_loss(g, s, p, b, delta, beta).total).item();
}

// Per-class scalar oracle for SGD with Nesterov momentum.
struct ScalarSgd {
  double theta, v = 0.0;
  void step(double grad, double lr, double m, double wd) {
    const double g = grad + wd * theta;
    v = m * v + g;
    theta -= lr * (g + m * v);
  }
};

ModelParams scalar_params(double value) {
  ModelParams p;
  p.entries.push_back({"w", Tensor::from({value, -value})});
  p.set_requires_grad(true);
  return p;
}

Dataset easy_data(std::size_t n, std::uint64_t seed) {
  return synthetic_dataset(SyntheticKind::GaussianBlobs, n, seed, {.classes = 2, .size = 8, .signal = 0.3, .noise = 0.05});
}

TrainConfig quick_config() {
  TrainConfig c = default_train_config();
  c.epochs = 2;
  c.batch_size = 16;
  c.trades_beta = 6.0;
  c.train_attack.steps = 3;
  c.eval_attack.steps = 5;
  c.eval_every = 2;
  c.augment = {AugmentSpec{PadCropParams{}}};
  return c;
}

ArchSpec cnn_for(const Dataset& ds) {
  ArchSpec s;
  s.channels = ds.channels;
  s.height = ds.height;
  s.width = ds.width;
  s.classes = ds.classes;
  s.widths = {4, 4, 8};
  return s;
}

}  // namespace

TEST_CASE("trades loss at zero perturbation is the clean cross-entropy") {
  std::mt19937_64 gen(1);
  const ArchSpec s = tiny_cnn();
  auto p = init_model(s, 1);
  const ImageBatch b = tiny_batch(gen);
  const Tensor zero(b.images.shape, 0.0);
  for (const double beta : {0.0, 6.0}) {
    Graph g;
    const auto t = trades_loss(g, s, p, b, zero, beta);
    CHECK(g.value(t.kl).item() == 0.0);
    CHECK(g.value(t.total).item() == g.value(t.cross_entropy).item());
    // Independent cross-entropy of the soft labels.
    const Tensor z = predict(s, p, b.images);
    double ce = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      const double* r = z.data.data() + i * 3;
      const double mx = *std::max_element(r, r + 3);
      double lse = 0.0;
      for (int k = 0; k < 3; ++k) lse += std::exp(r[k] - mx);
      lse = mx + std::log(lse);
      for (int k = 0; k < 3; ++k) ce -= b.soft_labels.data[i * 3 + k] * (r[k] - lse);
    }
    CHECK(g.value(t.total).item() == doctest::Approx(ce / 2.0).epsilon(1e-13));
  }
  Graph g;
  CHECK_THROWS_AS(trades_loss(g, s, p, b, Tensor({1, 1, 4, 4}), 1.0), DimensionError);
}

TEST_CASE("trades loss gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) CHECK(testing::trades_gradient_error(seed) < 1e-4);
}

TEST_CASE("learning-rate rules") {
  CHECK(effective_lr(0.1, 512) == 0.2);
  CHECK(effective_lr(0.1, 256) == 0.1);
  CHECK(effective_lr(0.1, 64) == 0.1);
  for (std::size_t b = 1; b <= 2048; ++b) {
    CHECK(effective_lr(0.1, b) == std::max(0.1 * static_cast<double>(b) / 256.0, 0.1));
  }
  CHECK(lr_at(0, 300, 0.2) == 0.2);
  CHECK(lr_at(199, 300, 0.2) == 0.2);
  CHECK(lr_at(200, 300, 0.2) == doctest::Approx(0.02));
  for (std::size_t total = 3; total <= 300; ++total) {
    const std::size_t drop = 2 * total / 3;
    for (std::size_t s = 0; s < total; ++s) CHECK(lr_at(s, total, 1.0) == (s < drop ? 1.0 : 0.1));
  }
}

TEST_CASE("nesterov SGD against a scalar oracle") {
  SUBCASE("plain step") {
    auto p = scalar_params(1.0);
    p.entries[0].tensor.grad = {0.5, -2.0};
    SgdState st;
    sgd_nesterov_step(p, 0.1, 0.0, 0.0, st);
    CHECK(p.entries[0].tensor.data[0] == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(p.entries[0].tensor.data[1] == doctest::Approx(-0.8).epsilon(1e-15));
  }
  SUBCASE("constant gradient, momentum 0.9") {
    auto p = scalar_params(1.0);
    SgdState st;
    ScalarSgd a{1.0}, b{-1.0};
    for (int k = 0; k < 5; ++k) {
      p.entries[0].tensor.grad = {0.3, 0.3};
      sgd_nesterov_step(p, 0.05, 0.9, 0.0, st);
      a.step(0.3, 0.05, 0.9, 0.0);
      b.step(0.3, 0.05, 0.9, 0.0);
      CHECK(p.entries[0].tensor.data[0] == doctest::Approx(a.theta).epsilon(1e-15));
      CHECK(p.entries[0].tensor.data[1] == doctest::Approx(b.theta).epsilon(1e-15));
    }
    // Two steps displace by lr g (1 + m) + lr g (1 + m + m^2).
    ScalarSgd c{0.0};
    c.step(1.0, 1.0, 0.9, 0.0);
    c.step(1.0, 1.0, 0.9, 0.0);
    CHECK(-c.theta == doctest::Approx(1.9 + 1.0 + 0.9 + 0.81).epsilon(1e-15));
  }
  SUBCASE("weight decay only") {
    auto p = scalar_params(2.0);
    p.entries[0].tensor.grad = {0.0, 0.0};
    SgdState st;
    sgd_nesterov_step(p, 0.1, 0.9, 5e-4, st);
    CHECK(p.entries[0].tensor.data[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 5e-4 * 1.9)).epsilon(1e-15));
  }
  SUBCASE("layout mismatch") {
    auto p = scalar_params(1.0);
    p.entries[0].tensor.grad = {0.0, 0.0};
    SgdState st;
    st.velocity = {{0.0}};
    CHECK_THROWS_AS(sgd_nesterov_step(p, 0.1, 0.9, 0.0, st), ValidationError);
  }
}

TEST_CASE("EMA") {
  const double theta0 = 0.3, theta = 1.7;
  auto p0 = scalar_params(theta0);
  auto p = scalar_params(theta);
  EmaState ema = ema_init(p0, 0.999);
  for (int n = 0; n < 100; ++n) ema_update(ema, p);
  const double tn = std::pow(0.999, 100);
  CHECK(std::abs(ema.params.entries[0].tensor.data[0] - (tn * theta0 + (1 - tn) * theta)) <= 1e-12);
  CHECK(ema.updates == 100);

  EmaState zero = ema_init(p0, 0.0);
  ema_update(zero, p);
  CHECK(zero.params.entries[0].tensor.data == p.entries[0].tensor.data);
  EmaState one = ema_init(p0, 1.0);
  for (int n = 0; n < 10; ++n) ema_update(one, p);
  CHECK(one.params.entries[0].tensor.data == p0.entries[0].tensor.data);

  ModelParams other;
  other.entries.push_back({"v", Tensor::from({1.0})});
  CHECK_THROWS_AS(ema_update(ema, other), ValidationError);
}

TEST_CASE("one small step descends like lr times the squared gradient norm") {
  std::mt19937_64 gen(3);
  const ArchSpec s = tiny_cnn();
  auto p = init_model(s, 3);
  const ImageBatch b = tiny_batch(gen);
  const Tensor zero(b.images.shape, 0.0);
  p.set_requires_grad(true);
  p.zero_grad();
  double before = 0.0;
  {
    Graph g;
    const auto t = trades_loss(g, s, p, b, zero, 0.0);
    before = g.value(t.total).item();
    g.backward(t.total);
  }
  double g2 = 0.0;
  for (const auto& e : p.entries) {
    for (const double v : e.tensor.grad) g2 += v * v;
  }
  SgdState st;
  const double lr = 1e-3;
  sgd_nesterov_step(p, lr, 0.0, 0.0, st);
  const double after = loss_value(s, p, b, zero, 0.0);
  CHECK((after - before) == doctest::Approx(-lr * g2).epsilon(0.1));
}

TEST_CASE("training") {
  const Dataset ds = easy_data(96, 1);
  const Split split = make_split(ds, 32, 1);
  const ArchSpec s = cnn_for(ds);

  SUBCASE("zero epochs") {
    TrainConfig c = quick_config();
    c.epochs = 0;
    c.seed = 4;
    const auto r = train(c, s, ds, split);
    CHECK(r.log.records.empty());
    const auto init = init_model(s, 4);
    for (std::size_t i = 0; i < init.entries.size(); ++i) {
      CHECK(r.params.entries[i].tensor.data == init.entries[i].tensor.data);
    }
    CHECK(train_log_csv(r.log).find("step,lr,train_loss") != std::string::npos);
  }

  SUBCASE("beta is required") {
    TrainConfig c = quick_config();
    c.trades_beta.reset();
    CHECK_THROWS_AS(train(c, s, ds, split), ConfigError);
  }

  SUBCASE("deterministic log, bookmarks and checkpoints") {
    const auto dir = std::filesystem::temp_directory_path() / "robustaug_test_train";
    std::filesystem::remove_all(dir);
    TrainConfig c = quick_config();
    c.seed = 5;
    c.run_dir = dir / "a";
    const auto a = train(c, s, ds, split);
    c.run_dir = dir / "b";
    c.threads = 2;
    const auto b = train(c, s, ds, split);
    CHECK(train_log_csv(a.log) == train_log_csv(b.log));
    REQUIRE(!a.log.records.empty());
    CHECK(a.log.records.back().step == a.log.total_steps);
    for (std::size_t i = 0; i < a.params.entries.size(); ++i) {
      CHECK(a.params.entries[i].tensor.data == b.params.entries[i].tensor.data);
    }
    REQUIRE(a.log.best_index);
    double best = -1.0;
    for (const auto& r : a.log.records) best = std::max(best, r.robust_val);
    CHECK(a.log.records[*a.log.best_index].robust_val == best);
    for (std::size_t i = 0; i < *a.log.best_index; ++i) CHECK(a.log.records[i].robust_val < best);
    const auto final_ckpt = dir / "a" / (std::to_string(a.log.total_steps) + ".ckpt");
    REQUIRE(std::filesystem::exists(final_ckpt));
    CHECK(std::filesystem::exists(dir / "a" / (std::to_string(a.log.total_steps) + ".ema.ckpt")));
    const auto [spec2, params2] = load_checkpoint(final_ckpt);
    const Tensor x = ds.gather(split.validation);
    CHECK(predict(spec2, params2, x).data == predict(s, a.params, x).data);
    std::filesystem::remove_all(dir);
  }

  SUBCASE("zero decay makes the average the live model") {
    TrainConfig c = quick_config();
    c.ema_decay = 0.0;
    const auto r = train(c, s, ds, split);
    for (const auto& rec : r.log.records) {
      CHECK(rec.clean_val_ema == rec.clean_val);
      CHECK(rec.robust_val_ema == rec.robust_val);
    }
  }
}

TEST_CASE("without attack or augmentation training fits separable data") {
  const Dataset ds = easy_data(64, 2);
  const Split split = make_split(ds, 0, 2);
  ArchSpec s;
  s.kind = ArchKind::Linear;
  s.channels = ds.channels;
  s.height = ds.height;
  s.width = ds.width;
  s.classes = 2;
  TrainConfig c = default_train_config();
  c.trades_beta = 0.0;
  c.train_attack.ball.eps = 0.0;
  c.augment.clear();
  c.epochs = 40;
  c.batch_size = 16;
  const auto r = train(c, s, ds, split);
  const auto pred = argmax_rows(predict(s, r.params, ds.gather(split.train)));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.train.size(); ++i) correct += pred[i] == ds.labels[split.train[i]];
  CHECK(correct == split.train.size());
}
