#include <benchmark/benchmark.h>

#include <random>

#include "fedda/federated/federated.hpp"
#include "fedda/metrics/metrics.hpp"
#include "fedda/model/timesformer.hpp"
#include "fedda/model/weights.hpp"

namespace {

using namespace fedda;

model::ModelConfig desk_config() {
  model::ModelConfig cfg;
  cfg.volume_side = 16;
  cfg.patch_side = 4;
  cfg.gates = 2;
  cfg.embed_dim = 64;
  cfg.heads = 4;
  cfg.blocks = 2;
  return cfg;
}

model::GatedVolumeSequence random_volume(const model::ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  model::GatedVolumeSequence x(cfg.volume_side, cfg.gates);
  for (auto& v : x.voxels) v = u(rng);
  return x;
}

void BM_Forward(benchmark::State& state) {
  const auto cfg = desk_config();
  const model::TimeSformer net(cfg);
  const auto w = model::init_weights(cfg, 1);
  const auto x = random_volume(cfg, 2);
  for (auto _ : state) benchmark::DoNotOptimize(net.predict(x, w));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const auto cfg = desk_config();
  const model::TimeSformer net(cfg);
  const auto w = model::init_weights(cfg, 1);
  const auto x = random_volume(cfg, 2);
  for (auto _ : state) {
    ad::Tape tape;
    const model::BoundWeights bw(tape, w, true);
    const auto out = net.forward(tape, x, bw);
    const auto loss = ad::sum(out.prob);
    benchmark::DoNotOptimize(tape.backward(loss));
  }
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

void BM_SurfaceDistances(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  std::bernoulli_distribution on(0.3);
  auto p = metrics::Mask::cube(side), g = metrics::Mask::cube(side);
  for (auto& v : p.values) v = on(rng);
  for (auto& v : g.values) v = on(rng);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::surface_distances(p, g));
}
BENCHMARK(BM_SurfaceDistances)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_FedAvg(benchmark::State& state) {
  const auto cfg = desk_config();
  std::vector<fed::ClientUpdate> updates;
  for (std::uint32_t i = 0; i < static_cast<std::uint32_t>(state.range(0)); ++i)
    updates.push_back({model::init_weights(cfg, i), 10 + i, 0});
  for (auto _ : state) benchmark::DoNotOptimize(fed::fedavg_aggregate(updates));
}
BENCHMARK(BM_FedAvg)->Arg(2)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
