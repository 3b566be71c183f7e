#include <benchmark/benchmark.h>

#include <random>

#include "quad/evaluator.hpp"
#include "quad/model.hpp"
#include "quad/synthetic.hpp"
#include "quad/trainer.hpp"

namespace {

using namespace quad;

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, bool requires_grad = false) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = u(rng);
  return Tensor::from_values({rows, cols}, std::move(v), requires_grad);
}

struct Workload {
  Dataset data;
  ModelConfig config;
  ModelParams params;
  EncoderGraph graph;
  std::vector<TrainSample> samples;

  Workload() {
    SyntheticConfig sc;
    sc.entities = 300;
    sc.statements = 1000;
    data = generate_synthetic(sc, 7);
    Rng rng(1);
    params = init_model(config, data.vocab, sc.max_qualifiers, rng);
    graph = build_encoder_graph(data.vocab, data.train);
    samples = make_samples(data.train);
    samples.resize(std::min<std::size_t>(samples.size(), 128));
  }
};

const Workload& workload() {
  static const Workload w;
  return w;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(32, 256);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const auto a = random_matrix(n, n, rng, true), b = random_matrix(n, n, rng, true);
  for (auto _ : state) {
    backward(sum(matmul(a, b)));
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_MatmulBackward)->RangeMultiplier(2)->Range(32, 256);

void BM_EncoderForward(benchmark::State& state) {
  const auto& w = workload();
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(encode_tables(w.params, w.graph, w.config).entities);
}
BENCHMARK(BM_EncoderForward)->Unit(benchmark::kMillisecond);

// Forward and backward over one batch of 128 samples.
void BM_TrainStep(benchmark::State& state) {
  const auto& w = workload();
  const auto batch = build_batch(w.samples, w.data.train, w.data.vocab);
  std::vector<std::int32_t> targets;
  for (const auto& s : batch) targets.push_back(s.target);
  const auto weights = loss_weights(w.samples, 1.0);
  Rng rng(3);
  for (auto _ : state) {
    const PassContext ctx{true, &rng};
    const auto encoded = encode_tables(w.params, w.graph, w.config, ctx);
    const auto logits = predict_logits(encoded, batch, w.data.vocab.num_entities(), w.params, w.config, ctx);
    backward(bce_with_logits(logits, targets, 0.1, weights));
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_EvaluateTest(benchmark::State& state) {
  const auto& w = workload();
  const auto all = w.data.all();
  const FilterIndex filter(w.data.vocab, all);
  for (auto _ : state)
    benchmark::DoNotOptimize(evaluate(w.params, w.config, w.graph, w.data.vocab, w.data.test, filter).metrics.mrr);
}
BENCHMARK(BM_EvaluateTest)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
