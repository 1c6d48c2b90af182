// Microbenchmarks: scan kernels, fusion layers, the full policy forward and
// the environment step.

#include <benchmark/benchmark.h>

#include <array>

#include "ssdrl/attention.h"
#include "ssdrl/env.h"
#include "ssdrl/param_store.h"
#include "ssdrl/policy.h"
#include "ssdrl/ssd.h"

namespace ssdrl {
namespace {

struct ScanInputs {
  Tensor<float> a, b, c, g, u, x0;
  ScanInputs(std::size_t K, std::size_t d) {
    Rng rng(7);
    auto gate = [&] {
      Tensor<float> t(Shape{1, K, d});
      for (float& v : t.data()) v = float(rng.uniform(0.05, 0.95));
      return t;
    };
    a = gate();
    b = gate();
    c = gate();
    g = gate();
    u = uniform_tensor<float>(Shape{1, K, d}, 1.0, rng);
    x0 = Tensor<float>(Shape{1, d});
  }
};

void BM_ScanRecurrent(benchmark::State& state) {
  const ScanInputs in(std::size_t(state.range(0)), 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(scan_recurrent(in.a, in.b, in.c, in.g, in.u, in.x0));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ScanRecurrent)->RangeMultiplier(4)->Range(128, 8192)->Complexity();

void BM_ScanChunked(benchmark::State& state) {
  const ScanInputs in(std::size_t(state.range(0)), 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(scan_chunked(in.a, in.b, in.c, in.g, in.u, in.x0, 64));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ScanChunked)->RangeMultiplier(4)->Range(128, 8192)->Complexity();

void BM_SsdLayer(benchmark::State& state) {
  const std::size_t K = std::size_t(state.range(0)), d = 64;
  Rng rng(1);
  ParamStore<float> store;
  init_ssd_layer(store, "s.", d, rng);
  BackboneConfig bc;
  bc.width = d;
  bc.layers = 1;
  const Tensor<float> h = uniform_tensor<float>(Shape{1, K, d}, 1.0, rng);
  for (auto _ : state) {
    Tape<float> t(false);
    benchmark::DoNotOptimize(t.value(ssd_layer_forward(t, store, "s.", t.constant(h), bc)));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SsdLayer)->RangeMultiplier(4)->Range(128, 8192)->Complexity();

void BM_AttentionLayer(benchmark::State& state) {
  const std::size_t K = std::size_t(state.range(0)), d = 64;
  Rng rng(1);
  ParamStore<float> store;
  init_attention_layer(store, "a.", d, rng);
  const Tensor<float> h = uniform_tensor<float>(Shape{1, K, d}, 1.0, rng);
  for (auto _ : state) {
    Tape<float> t(false);
    benchmark::DoNotOptimize(t.value(attention_layer_forward(t, store, "a.", t.constant(h))));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_AttentionLayer)->RangeMultiplier(4)->Range(128, 2048)->Complexity();

void BM_PolicyForward(benchmark::State& state) {
  ModelConfig m;
  m.backbone = BackboneKind(state.range(0));
  const std::size_t batch = std::size_t(state.range(1));
  Rng rng(3);
  ParamStore<float> store;
  init_policy(store, m, rng);
  const Tensor<float> proprio = uniform_tensor<float>(Shape{batch, m.proprio_dim}, 1.0, rng);
  Tensor<float> depth(Shape{batch, kFrameStack, m.frame_size, m.frame_size});
  for (float& v : depth.data()) v = float(rng.uniform());
  for (auto _ : state) {
    Tape<float> t(false);
    benchmark::DoNotOptimize(policy_forward(t, store, m, proprio, depth));
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(batch));
  state.SetLabel(to_string(m.backbone));
}
BENCHMARK(BM_PolicyForward)->ArgsProduct({{0, 1, 2, 3}, {1, 64}});

void BM_EnvStep(benchmark::State& state) {
  WorldConfig w;
  w.depth_resolution = std::size_t(state.range(0));
  Env env(w);
  std::uint64_t seed = 0;
  env.reset(20, seed);
  const std::array<double, 2> action{0.8, 0.1};
  for (auto _ : state) {
    if (env.state().done) env.reset(20, ++seed);
    benchmark::DoNotOptimize(env.step(action));
  }
}
BENCHMARK(BM_EnvStep)->Arg(16)->Arg(32);

}  // namespace
}  // namespace ssdrl

BENCHMARK_MAIN();
