/* Copyright 2026 The lapmoe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <benchmark/benchmark.h>

#include <algorithm>
#include <random>

#include "lapmoe/fusion.hpp"
#include "lapmoe/gating.hpp"
#include "lapmoe/gmoe.hpp"
#include "lapmoe/irregularity.hpp"
#include "lapmoe/voronoi.hpp"

using namespace lapmoe;

namespace {

Matrix gaussian(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  return Matrix(rows, cols).unaryExpr([&](double) { return nd(rng); });
}

void BM_TopKGate(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const int experts = static_cast<int>(state.range(0));
  const GateKind kind = static_cast<GateKind>(state.range(1));
  const GateParams g(gaussian(128, experts, rng), kind, 4);
  const Vector x = gaussian(128, 1, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(topk_gate(x, g));
  }
}
BENCHMARK(BM_TopKGate)->ArgsProduct({{16, 64}, {0, 1, 2}});

void BM_FusionForward(benchmark::State& state) {
  FusionConfig cfg;
  cfg.router = static_cast<RouterMode>(state.range(0));
  cfg.hidden = 64;
  const int modalities = 3;
  const int tokens = 8;
  const int dim = 32;
  const FusionLayer layer = make_fusion_layer(cfg, modalities, tokens, dim, 2);
  std::mt19937_64 rng(3);
  ModalityBatch batch;
  for (int m = 0; m < modalities; ++m) {
    batch.embeddings.push_back(gaussian(tokens, dim, rng));
    batch.ids.push_back("m" + std::to_string(m));
  }
  batch.present = {true, false, true};
  for (auto _ : state) {
    benchmark::DoNotOptimize(fusion_forward(batch, layer));
  }
}
BENCHMARK(BM_FusionForward)->DenseRange(0, 2);

void BM_UtdeEncode(benchmark::State& state) {
  const MtandConfig cfg;
  const int channels = 12;
  const UtdeParams p = random_utde_params(cfg, channels, 4);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> when(0.0, cfg.t_max);
  std::normal_distribution<double> nd;
  IrregularSeries s;
  s.channels.resize(channels);
  for (auto& ch : s.channels) {
    for (int i = 0; i < state.range(0); ++i) {
      ch.push_back({when(rng), nd(rng)});
    }
    std::sort(ch.begin(), ch.end(), [](const Observation& a, const Observation& b) { return a.time < b.time; });
  }
  const Vector bins = query_bins(cfg.bins, cfg.t_max);
  const Vector means = channel_means(std::span<const IrregularSeries>(&s, 1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(utde_encode(s, bins, p, means));
  }
}
BENCHMARK(BM_UtdeEncode)->Arg(8)->Arg(64);

void BM_LogLikelihood(benchmark::State& state) {
  const MixingMeasure truth = sample_true_measure(2, 6);
  const RegressionDataset data = sample_synthetic(truth, static_cast<int>(state.range(0)), 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(log_likelihood(truth, data));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LogLikelihood)->Arg(1000)->Arg(10000);

void BM_EmFit(benchmark::State& state) {
  const MixingMeasure truth = sample_true_measure(2, 8);
  const RegressionDataset data = sample_synthetic(truth, 2000, 9);
  const NearTruthInit init = init_near_truth(truth, static_cast<int>(state.range(0)), 0.05, 10);
  EmOptions opts;
  opts.max_iterations = 50;
  for (auto _ : state) {
    benchmark::DoNotOptimize(em_fit(data, init.measure, opts));
  }
}
BENCHMARK(BM_EmFit)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_VoronoiLoss(benchmark::State& state) {
  const MixingMeasure truth = sample_true_measure(2, 11);
  const MixingMeasure fitted = init_near_truth(truth, 3, 0.05, 12).measure;
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss_d2(fitted, truth));
  }
}
BENCHMARK(BM_VoronoiLoss);

}  // namespace

BENCHMARK_MAIN();
