#include <benchmark/benchmark.h>

#include <vector>

#include "lgdg/detector.hpp"
#include "lgdg/metrics.hpp"
#include "lgdg/models.hpp"
#include "lgdg/objectives.hpp"
#include "lgdg/optimizer.hpp"
#include "lgdg/scene.hpp"

using namespace lgdg;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1, 1);
  return Tensor::from(shape, std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor x = random_tensor({3, size, size}, rng);
  Tensor w = random_tensor({16, 3, 3, 3}, rng), b = random_tensor({16}, rng);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    w.zero_grad();
    b.zero_grad();
    backward(sum(conv2d(x, w, b, 2, 1)));
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(32)->Arg(64);

void BM_AveragePrecision(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> scores(n);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform(0, 1);
    labels[i] = i % 3 == 0 ? 1 : 0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(average_precision(scores, labels));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n));
}
BENCHMARK(BM_AveragePrecision)->Arg(1000)->Arg(100000);

void BM_RenderFrame(benchmark::State& state) {
  const DomainConfig cfg = default_source_domain();
  const std::vector<Scene> video = generate_video(cfg, 0, 1, 4);
  for (auto _ : state) benchmark::DoNotOptimize(render(video.front(), cfg));
}
BENCHMARK(BM_RenderFrame);

// One optimizer step of the disentangled latent-graph objective on a
// batch drawn from the synthetic source domain.
void BM_LgDgTrainStep(benchmark::State& state) {
  const auto batch_size = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  const DomainConfig cfg = default_source_domain();
  LgModelConfig mc;
  LgModel model(mc, rng);
  std::vector<Sample> batch;
  const NoiseProfile noise;
  std::int64_t id = 0;
  for (const Scene& scene : generate_video(cfg, 0, static_cast<int>(batch_size), 6)) {
    batch.push_back(make_sample(scene, simulate_detect(scene, noise, rng), 64, id++));
  }
  Adam opt(model.parameters(), AdamConfig{});
  const LossWeights weights;
  const MaskingConfig masking{CategorySet{}, kKeepSemantic};
  const ClassBalance balance{{0.2, 0.1, 0.2}};
  Rng augment(7), disentangle(8);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    opt.zero_grad();
    const LgLossTerms terms =
        lgdg_total_loss(batch, model, weights, masking, balance, augment, disentangle);
    backward(terms.total);
    opt.step();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(batch_size));
}
BENCHMARK(BM_LgDgTrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
