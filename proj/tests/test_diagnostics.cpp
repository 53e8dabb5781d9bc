#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "attack_checks.hpp"
#include "doctest.h"
#include "robustaug/diagnostics.hpp"
#include "robustaug/errors.hpp"

using namespace robustaug;

namespace {

Dataset dataset_from(const ImageBatch& b, std::size_t classes) {
  Dataset ds;
  ds.name = "batch";
  ds.channels = b.images.dim(1);
  ds.height = b.images.dim(2);
  ds.width = b.images.dim(3);
  ds.classes = classes;
  ds.pixels = b.images.data;
  ds.labels = b.labels;
  return ds;
}

std::vector<std::size_t> all_indices(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

ArchSpec small_mlp(const Dataset& ds) {
  ArchSpec s;
  s.kind = ArchKind::Mlp;
  s.channels = ds.channels;
  s.height = ds.height;
  s.width = ds.width;
  s.classes = ds.classes;
  s.widths = {12};
  return s;
}

}  // namespace

TEST_CASE("robust accuracy on a linear model matches the certificate") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto p = testing::linear_problem(50 + seed, 3, 60);
    const Model model(p.spec, p.params);
    const Dataset ds = dataset_from(p.batch, 3);
    const auto idx = all_indices(ds);
    const PerturbationBall ball{NormKind::Linf, 0.03};
    AttackConfig mt = named_attack("mt", ball);
    mt.steps = 20;
    mt.restarts = 2;
    const CascadeStage stages[] = {{"apgd_ce", named_attack("apgd_ce", ball)}, {"mt", mt}};
    const CascadeResult r = robust_accuracy(model, ds, idx, stages);
    const Tensor z = model_logits(model, p.batch.images);
    std::size_t expect = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const int y = ds.labels[i];
      bool robust = true;
      for (int t = 0; t < 3; ++t) {
        if (t == y) continue;
        double l1 = 0.0;
        for (const double v : testing::weight_difference(p, y, t)) l1 += std::abs(v);
        robust = robust && testing::gap(z, i, y, t) > ball.eps * l1;
      }
      expect += robust;
      CHECK(r.robust_correct[i] == robust);
    }
    CHECK(r.robust_accuracy == static_cast<double>(expect) / static_cast<double>(ds.size()));
    CHECK(r.robust_accuracy <= r.clean_accuracy);
  }
}

TEST_CASE("radius zero is clean accuracy") {
  const Dataset ds = synthetic_dataset(SyntheticKind::GaussianBlobs, 40, 3, {.classes = 3, .size = 4});
  const ArchSpec s = small_mlp(ds);
  const Model model(s, init_model(s, 3));
  const auto idx = all_indices(ds);
  const CascadeStage st[] = {{"pgd", named_attack("pgd", {NormKind::Linf, 0.0})}};
  const auto r = robust_accuracy(model, ds, idx, st);
  CHECK(r.robust_accuracy == r.clean_accuracy);
}

TEST_CASE("eps sweep") {
  const Dataset ds = synthetic_dataset(SyntheticKind::GaussianBlobs, 60, 4, {.classes = 3, .size = 4});
  const ArchSpec s = small_mlp(ds);
  const Model model(s, init_model(s, 4));
  const auto idx = all_indices(ds);
  const std::vector<double> radii{0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 1.0};
  const auto curve = eps_sweep(model, ds, idx, radii, NormKind::Linf, 1, 30);
  REQUIRE(curve.size() == radii.size());
  CHECK(curve[0].robust_accuracy == curve[0].clean_accuracy);
  for (std::size_t k = 1; k < curve.size(); ++k) CHECK(curve[k].robust_accuracy <= curve[k - 1].robust_accuracy);
  // At eps = 1 every image is reachable; only a constant prediction survives.
  std::vector<std::size_t> prior(3, 0);
  for (const int l : ds.labels) ++prior[l];
  const double max_prior = static_cast<double>(*std::max_element(prior.begin(), prior.end())) / ds.size();
  CHECK(curve.back().robust_accuracy <= max_prior + 0.05);
  const std::vector<double> unsorted{0.1, 0.0};
  CHECK_THROWS_AS(eps_sweep(model, ds, idx, unsorted, NormKind::Linf, 1), ValidationError);
  const std::string csv = sweep_csv(curve, "eps_sweep", "eps");
  CHECK(csv.rfind("# robustaug eps_sweep v1\neps,clean_accuracy,robust_accuracy\n", 0) == 0);
}

TEST_CASE("steps sweep") {
  const Dataset ds = synthetic_dataset(SyntheticKind::GaussianBlobs, 60, 5, {.classes = 3, .size = 4});
  const ArchSpec s = small_mlp(ds);
  const Model model(s, init_model(s, 5));
  const auto idx = all_indices(ds);
  const std::vector<std::size_t> counts{1, 5, 50, 200};
  const PerturbationBall ball{NormKind::Linf, 0.05};
  const auto a = steps_sweep(model, ds, idx, counts, ball, 2);
  const auto b = steps_sweep(model, ds, idx, counts, ball, 2);
  for (std::size_t k = 0; k < counts.size(); ++k) CHECK(a[k].robust_accuracy == b[k].robust_accuracy);
  CHECK(a.front().robust_accuracy + 0.005 >= a.back().robust_accuracy);
  const std::vector<std::size_t> bad{0};
  CHECK_THROWS_AS(steps_sweep(model, ds, idx, bad, ball, 2), ValidationError);
}

TEST_CASE("landscape") {
  const Dataset ds = synthetic_dataset(SyntheticKind::GaussianBlobs, 20, 6, {.classes = 3, .size = 4});
  const ArchSpec s = small_mlp(ds);
  const Model model(s, init_model(s, 6));
  const PerturbationBall ball{NormKind::Linf, 0.05};
  const auto preds = argmax_rows(model_logits(model, ds.gather(all_indices(ds))));
  bool saw_wrong = false;
  for (std::size_t i = 0; i < 6; ++i) {
    const LandscapeGrid g = landscape(model, ds.image(i), ds.labels[i], ball, {.nu = 21, .nv = 21, .pgd_steps = 10});
    REQUIRE(g.margin.size() == 21 * 21);
    CHECK(g.a[10] == 0.0);
    CHECK(g.b[10] == 0.0);
    CHECK(g.at(10, 10) == margin_of(model, ds.image(i), ds.labels[i]));
    CHECK(g.at(10, 10) == g.clean_margin);
    if (preds[i] != ds.labels[i]) {
      saw_wrong = true;
      CHECK(g.at(10, 10) < 0.0);
    }
    // (a, b) = (1, 0) is the attack endpoint; recompute it with a plain forward pass.
    CHECK(g.a[15] == 1.0);
    Tensor x({1, s.channels, s.height, s.width});
    for (std::size_t q = 0; q < x.size(); ++q) x.data[q] = std::clamp(ds.image(i)[q] + g.u[q], 0.0, 1.0);
    const Tensor z = predict(s, model.params(), x);
    double other = -INFINITY;
    for (int k = 0; k < 3; ++k) {
      if (k != ds.labels[i]) other = std::max(other, z.data[k]);
    }
    CHECK(g.at(15, 10) == doctest::Approx(z.data[ds.labels[i]] - other).epsilon(1e-12));
    CHECK(g.endpoint_margin == g.at(15, 10));
    for (const double v : g.v) CHECK(std::abs(v) == doctest::Approx(0.05));
    CHECK(testing::max_abs_diff(g.u, std::vector<double>(g.u.size(), 0.0)) <= 0.05 + 1e-12);
  }
  CHECK(saw_wrong);
  const std::string csv = landscape_csv(landscape(model, ds.image(0), ds.labels[0], ball, {.nu = 3, .nv = 3}));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
  CHECK_THROWS_AS(landscape(model, ds.image(0), ds.labels[0], ball, {.nu = 4}), ValidationError);
}

TEST_CASE("ensembles") {
  ArchSpec s;
  s.kind = ArchKind::Linear;
  s.channels = 1;
  s.height = 1;
  s.width = 2;
  s.classes = 2;
  // Each model is right and confident on one example, wrong and unsure on the other.
  ModelParams pa = init_model(s, 0), pb = init_model(s, 0);
  pa.at("dense.weight") = Tensor({2, 2}, {3, 0, 0, 1});
  pb.at("dense.weight") = Tensor({2, 2}, {0, 1, 3, 0});
  pa.at("dense.bias") = Tensor({2}, 0.0);
  pb.at("dense.bias") = Tensor({2}, 0.0);
  const Model a(s, pa), b(s, pb);
  const Tensor x({2, 1, 1, 2}, {1, 0, 0, 1});
  CHECK(argmax_rows(predict(s, pa, x)) == std::vector<int>{0, 1});
  CHECK(argmax_rows(predict(s, pb, x)) == std::vector<int>{1, 0});
  const Classifier* pair[] = {&a, &b};
  CHECK(ensemble_predict(pair, x) == std::vector<int>{0, 0});

  const Dataset ds = synthetic_dataset(SyntheticKind::GaussianBlobs, 30, 7, {.classes = 3, .size = 4});
  const ArchSpec m = small_mlp(ds);
  const Model c(m, init_model(m, 7));
  const Tensor imgs = ds.gather(all_indices(ds));
  const Classifier* dup[] = {&c, &c};
  const Classifier* single[] = {&c};
  const auto direct = argmax_rows(model_logits(c, imgs));
  CHECK(ensemble_predict(dup, imgs) == direct);
  CHECK(ensemble_predict(single, imgs) == direct);
  ArchSpec four = m;
  four.classes = 4;
  const Model d(four, init_model(four, 1));
  const Classifier* mixed[] = {&c, &d};
  CHECK_THROWS_AS(ensemble_predict(mixed, imgs), ValidationError);
}

TEST_CASE("prediction diff") {
  const std::vector<std::vector<std::uint8_t>> v{{1, 0, 1}, {1, 1, 0}, {1, 1, 1}};
  const auto r = prediction_diff(v);
  CHECK(r.unique_errors == std::vector<std::size_t>{1, 1, 0});
  CHECK(r.total_errors == std::vector<std::size_t>{1, 1, 0});
  CHECK(r.agreement[0][1] == doctest::Approx(1.0 / 3.0));
  CHECK(r.agreement[2][2] == 1.0);

  const std::vector<std::vector<std::uint8_t>> same{{1, 0, 0, 1}, {1, 0, 0, 1}};
  CHECK(prediction_diff(same).unique_errors == std::vector<std::size_t>{0, 0});
  const std::vector<std::vector<std::uint8_t>> lone{{0, 0, 1}};
  CHECK(prediction_diff(lone).unique_errors == std::vector<std::size_t>{0});
  const std::vector<std::vector<std::uint8_t>> ragged{{1, 0}, {1}};
  CHECK_THROWS_AS(prediction_diff(ragged), ValidationError);

  // Brute-force set identities on random vectors.
  std::mt19937_64 gen(8);
  for (int t = 0; t < 50; ++t) {
    const std::size_t snaps = 2 + gen() % 4, n = 1 + gen() % 30;
    std::vector<std::vector<std::uint8_t>> c(snaps, std::vector<std::uint8_t>(n));
    for (auto& row : c) {
      for (auto& x : row) x = gen() % 3 != 0;
    }
    const auto rep = prediction_diff(c);
    for (std::size_t i = 0; i < snaps; ++i) {
      std::set<std::size_t> errors, others;
      for (std::size_t e = 0; e < n; ++e) {
        if (!c[i][e]) errors.insert(e);
        for (std::size_t j = 0; j < snaps; ++j) {
          if (j != i && !c[j][e]) others.insert(e);
        }
      }
      std::size_t unique = 0;
      for (const auto e : errors) unique += !others.count(e);
      CHECK(rep.total_errors[i] == errors.size());
      CHECK(rep.unique_errors[i] == unique);
      CHECK(rep.unique_errors[i] <= rep.total_errors[i]);
    }
    std::vector<std::size_t> sorted = rep.order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t e = 0; e < n; ++e) CHECK(sorted[e] == e);
  }
  CHECK(diversity_csv(r).rfind("# robustaug", 0) == 0);
  CHECK(agreement_csv(r).rfind("# robustaug", 0) == 0);
}

TEST_CASE("weight-averaging decay sweep") {
  const Dataset ds = synthetic_dataset(SyntheticKind::GaussianBlobs, 48, 9, {.classes = 2, .size = 8});
  const Split split = make_split(ds, 16, 9);
  ArchSpec s;
  s.channels = 3;
  s.height = s.width = 8;
  s.classes = 2;
  s.widths = {2, 2, 4};
  TrainConfig c = default_train_config();
  c.epochs = 1;
  c.batch_size = 16;
  c.trades_beta = 6.0;
  c.train_attack.steps = 2;
  c.eval_attack.steps = 3;
  const std::vector<double> taus{0.0, 0.9};
  const std::vector<std::vector<AugmentSpec>> augs{{AugmentSpec{PadCropParams{}}}, {AugmentSpec{CutmixParams{}}}};
  const auto rows = wa_decay_sweep(c, s, ds, split, taus, augs);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].tau == 0.0);
  CHECK(rows[0].augment == "pad_crop");
  CHECK(rows[1].augment == "cutmix");
  CHECK(rows[0].final_robust_ema == rows[0].final_robust);
  CHECK(rows[1].final_robust_ema == rows[1].final_robust);
  const auto again = wa_decay_sweep(c, s, ds, split, taus, augs);
  CHECK(wa_sweep_csv(rows) == wa_sweep_csv(again));
  const std::vector<double> bad{1.0};
  CHECK_THROWS_AS(wa_decay_sweep(c, s, ds, split, bad, augs), ValidationError);
}
