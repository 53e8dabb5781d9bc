#include <benchmark/benchmark.h>

#include "robustaug/attack.hpp"
#include "robustaug/augment.hpp"
#include "robustaug/data.hpp"
#include "robustaug/trainer.hpp"

using namespace robustaug;

namespace {

// Desk-sized setup: 16x16 two-class images, small CNN {8, 16, 32}, batch 64.
struct Desk {
  Dataset ds;
  ArchSpec spec;
  ImageBatch batch;

  Desk() {
    ds = synthetic_dataset(SyntheticKind::GaussianBlobs, 64, 1);
    spec.channels = ds.channels;
    spec.height = ds.height;
    spec.width = ds.width;
    spec.classes = ds.classes;
    spec.widths = {8, 16, 32};
    std::vector<std::size_t> idx(64);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    batch = make_batch(ds, idx);
  }
};

void BM_Predict(benchmark::State& state) {
  const Desk d;
  const ModelParams p = init_model(d.spec, 0);
  for (auto _ : state) benchmark::DoNotOptimize(predict(d.spec, p, d.batch.images).data.data());
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Predict);

// One attack step is one forward and one input-gradient backward pass.
void BM_AttackSteps(benchmark::State& state) {
  const Desk d;
  const Model model(d.spec, init_model(d.spec, 0));
  AttackConfig cfg;
  cfg.optimizer = state.range(0) == 0 ? Optimizer::SignGd : Optimizer::Adam;
  cfg.steps = 10;
  for (auto _ : state) benchmark::DoNotOptimize(run_attack(model, d.batch, cfg).delta.data.data());
  state.SetItemsProcessed(state.iterations() * 64 * 10);
}
BENCHMARK(BM_AttackSteps)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TradesStep(benchmark::State& state) {
  const Desk d;
  ModelParams p = init_model(d.spec, 0);
  p.set_requires_grad(true);
  const Tensor delta(d.batch.images.shape, 0.01);
  SgdState sgd;
  for (auto _ : state) {
    p.zero_grad();
    Graph g;
    g.backward(trades_loss(g, d.spec, p, d.batch, delta, 6.0).total);
    sgd_nesterov_step(p, 0.1, 0.9, 5e-4, sgd);
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_TradesStep)->Unit(benchmark::kMillisecond);

void BM_Augment(benchmark::State& state) {
  const Desk d;
  const std::vector<double> fill = dataset_mean(d.ds);
  const std::vector<AugmentSpec> specs = {AugmentSpec{PadCropParams{}}, AugmentSpec{CutmixParams{}}};
  std::uint32_t step = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(pipeline(d.batch, specs, fill, AugmentContext{0, step++, 0}).images.data.data());
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Augment);

}  // namespace
