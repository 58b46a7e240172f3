#include <benchmark/benchmark.h>

#include <vector>

#include "trajlens/kernels.hpp"
#include "trajlens/rng.hpp"
#include "trajlens/scoring.hpp"
#include "trajlens/synth.hpp"

namespace {

using namespace trajlens;

SaeWeights random_weights(std::size_t d_model, std::size_t n_features) {
  Rng rng(7);
  auto w = SaeWeights::zeros(d_model, n_features);
  for (auto& v : w.w_enc) v = static_cast<float>(rng.normal() * 0.2);
  for (auto& v : w.b_enc) v = static_cast<float>(rng.normal() * 0.05);
  return w;
}

std::vector<float> random_rows(std::size_t n, std::size_t d) {
  Rng rng(11);
  std::vector<float> rows(n * d);
  for (auto& v : rows) v = static_cast<float>(rng.normal());
  return rows;
}

template <bool Parallel>
void BM_EncodeRows(benchmark::State& state) {
  const auto w = random_weights(64, 1024);
  const auto rows = random_rows(static_cast<std::size_t>(state.range(0)), 64);
  for (auto _ : state) {
    auto out = Parallel ? kernels::encode_rows(w, rows, 32) : kernels::encode_rows_serial(w, rows, 32);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeRows<false>)->Name("encode_rows/serial")->Arg(512)->Arg(4096);
BENCHMARK(BM_EncodeRows<true>)->Name("encode_rows/openmp")->Arg(512)->Arg(4096);

struct ExtractFixture {
  synth::GeneratedCorpus gen;
  SaeWeights weights;
  std::unique_ptr<synth::PlantedActivationSource> source;
  WhitespaceTokenizer tok;

  ExtractFixture() {
    const auto specs = synth::make_trend_specs();
    synth::CorpusOptions o;
    o.n_batches = 4;
    gen = synth::generate_corpus(specs, o, tok);
    weights = synth::make_planted_weights(specs, 64, 3);
    source = std::make_unique<synth::PlantedActivationSource>(specs, weights, 3);
  }
};

template <bool Parallel>
void BM_ExtractBlock(benchmark::State& state) {
  static ExtractFixture fx;
  std::vector<const Trajectory*> block;
  for (const auto& t : fx.gen.corpus) block.push_back(&t);
  for (auto _ : state) {
    auto out = Parallel ? kernels::extract_block(block, fx.tok, *fx.source, fx.weights, 100)
                        : kernels::extract_block_serial(block, fx.tok, *fx.source, fx.weights, 100);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(block.size()));
}
BENCHMARK(BM_ExtractBlock<false>)->Name("extract_block/serial");
BENCHMARK(BM_ExtractBlock<true>)->Name("extract_block/openmp");

template <bool Parallel>
void BM_ScoreFeatures(benchmark::State& state) {
  static const FeatureTable table = [] {
    synth::TrendSpecOptions so;
    so.n_flat = 200;
    synth::TableOptions to;
    to.per_batch = 12;
    return synth::simulate_feature_table(synth::make_trend_specs(so), to);
  }();
  const auto features = table.active_features();
  const TargetKind targets[] = {TargetKind::training_step};
  for (auto _ : state) {
    auto out = Parallel ? kernels::score_features(table, features, targets, kAllAggregations, kAllMethods)
                        : kernels::score_features_serial(table, features, targets, kAllAggregations, kAllMethods);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(features.size()));
}
BENCHMARK(BM_ScoreFeatures<false>)->Name("score_features/serial");
BENCHMARK(BM_ScoreFeatures<true>)->Name("score_features/openmp");

}  // namespace

BENCHMARK_MAIN();
