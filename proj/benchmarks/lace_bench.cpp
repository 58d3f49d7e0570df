#include <benchmark/benchmark.h>

#include "lace/constraints.hpp"
#include "lace/corpus.hpp"
#include "lace/denoiser.hpp"
#include "lace/generate.hpp"
#include "lace/metrics.hpp"
#include "lace/postprocess.hpp"
#include "lace/training.hpp"

namespace {

using namespace lace;

std::vector<Layout> corpus(int max_len, int count) {
  SyntheticGridSpec spec;
  spec.max_len = max_len;
  spec.columns = 0;
  spec.seed = 11;
  return generate_synthetic(spec, count);
}

Eigen::MatrixX4d jittered_boxes(int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixX4d boxes(n, 4);
  for (int i = 0; i < n; ++i) {
    boxes.row(i) << rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3);
  }
  return boxes;
}

void BM_LocalAlignment(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto boxes = jittered_boxes(n, 1);
  for (auto _ : state) benchmark::DoNotOptimize(local_alignment_loss(boxes, n));
}
BENCHMARK(BM_LocalAlignment)->Arg(10)->Arg(25);

void BM_Overlap(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto boxes = jittered_boxes(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(overlap_loss(boxes, n));
}
BENCHMARK(BM_Overlap)->Arg(10)->Arg(25);

void BM_DenoiserPredict(benchmark::State& state) {
  const int items = static_cast<int>(state.range(0));
  DenoiserConfig c;
  const Denoiser model(c, 3);
  Rng rng(4);
  Eigen::MatrixXd x(items * c.seq_len, c.input_dim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const std::vector<int> t(static_cast<size_t>(items), 500);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x, t));
  state.SetItemsProcessed(state.iterations() * items);
}
BENCHMARK(BM_DenoiserPredict)->Arg(1)->Arg(32);

void BM_TrainingStep(benchmark::State& state) {
  const auto layouts = corpus(12, 64);
  TrainConfig config;
  config.model.input_dim = layouts[0].shape().num_classes + 5;
  config.model.seq_len = 12;
  Denoiser model(config.model, 5);
  AdamState adam = AdamState::for_model(model);
  const NoiseSchedule schedule = make_linear_schedule(config.diffusion_steps);
  std::vector<const Layout*> batch;
  for (int i = 0; i < config.batch_size; ++i) batch.push_back(&layouts[static_cast<size_t>(i)]);
  const int phase = static_cast<int>(state.range(0));
  std::uint64_t step = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(training_step(model, adam, batch, step++, config, schedule, phase));
  }
}
BENCHMARK(BM_TrainingStep)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_SampleUncond(benchmark::State& state) {
  DenoiserConfig c;
  c.seq_len = 12;
  const Denoiser model(c, 6);
  const NoiseSchedule schedule = make_linear_schedule(1000);
  const GenerationContext ctx{model, schedule, {5, 12}, {816, 1056}};
  const SamplerConfig sc{static_cast<int>(state.range(0)), 0.0, 7};
  for (auto _ : state) benchmark::DoNotOptimize(sample_unconditional(ctx, 16, sc));
}
BENCHMARK(BM_SampleUncond)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_MaxIou(benchmark::State& state) {
  const auto a = corpus(25, 64);
  const auto b = corpus(25, 64);
  for (auto _ : state) benchmark::DoNotOptimize(mean_max_iou(a, b));
}
BENCHMARK(BM_MaxIou);

void BM_PostProcess(benchmark::State& state) {
  auto layouts = corpus(25, 8);
  Rng rng(8);
  for (auto& l : layouts) l = perturb_for_refinement(l, rng, 0.004);
  const PostConfig pc;
  for (auto _ : state) {
    for (const auto& l : layouts) benchmark::DoNotOptimize(postprocess_layout(l, pc));
  }
}
BENCHMARK(BM_PostProcess)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
