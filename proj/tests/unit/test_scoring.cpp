#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "trajlens/kernels.hpp"
#include "trajlens/rng.hpp"
#include "trajlens/scoring.hpp"
#include "trajlens/stats.hpp"
#include "trajlens/synth.hpp"

using namespace trajlens;

namespace {

std::vector<double> random_series(Rng& rng, std::size_t n, int levels) {
  std::vector<double> v(n);
  for (auto& x : v) x = double(rng.uniform_index(levels));
  return v;
}

FeatureScore score_of(std::uint32_t f, double s, AggregationKind k = AggregationKind::sum,
                CorrelationMethod m = CorrelationMethod::spearman) {
  FeatureScore r;
  r.feature_id = f;
  r.aggregation = k;
  r.method = m;
  r.score = s;
  r.n = 10;
  return r;
}

}  // namespace

TEST(Aggregate, HandArithmetic) {
  float vals[] = {2, 3};
  EXPECT_EQ(aggregate(vals, 4, AggregationKind::binary), 1.0);
  EXPECT_EQ(aggregate(vals, 4, AggregationKind::max), 3.0);
  EXPECT_EQ(aggregate(vals, 4, AggregationKind::sum), 5.0);
  EXPECT_EQ(aggregate(vals, 4, AggregationKind::mean), 1.25);
  for (auto k : kAllAggregations) EXPECT_EQ(aggregate(std::span<const float>{}, 10, k), 0.0);
  float one[] = {7};
  EXPECT_EQ(aggregate(one, 1, AggregationKind::binary), 1.0);
  for (auto k : {AggregationKind::max, AggregationKind::mean, AggregationKind::sum})
    EXPECT_EQ(aggregate(one, 1, k), 7.0);
  EXPECT_THROW(aggregate(vals, 0, AggregationKind::sum), UndefinedAggregateError);
}

TEST(Aggregate, CachedAggregateAgrees) {
  TrajectoryAggregate agg{0, 2, 3.0f, 5.0};
  float vals[] = {2, 3};
  for (auto k : kAllAggregations) EXPECT_EQ(aggregate(&agg, 4, k), aggregate(vals, 4, k));
  EXPECT_EQ(aggregate(nullptr, 4, AggregationKind::max), 0.0);
}

TEST(Spearman, Examples) {
  std::vector<double> x{1, 2, 3};
  std::vector<double> up{10, 20, 30}, down{3, 2, 1};
  EXPECT_DOUBLE_EQ(*spearman(x, up), 1.0);
  EXPECT_DOUBLE_EQ(*spearman(x, down), -1.0);
  std::vector<double> a{1, 2, 2, 4}, b{1, 3, 2, 4};
  EXPECT_NEAR(*spearman(a, b), 0.9486832980505138, 1e-12);
  EXPECT_NEAR(*spearman(a, b), *oracle::spearman_bruteforce(a, b), 1e-15);
  std::vector<double> flat{5, 5, 5};
  EXPECT_FALSE(spearman(x, flat).has_value());
  std::vector<double> two{1, 2};
  EXPECT_THROW(spearman(x, two), InvalidArgument);
  std::vector<double> one{1};
  EXPECT_THROW(spearman(one, one), InvalidArgument);
}

TEST(Spearman, MatchesBruteForceOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t n = 2 + rng.uniform_index(30);
    auto xs = random_series(rng, n, 1 + int(rng.uniform_index(8)));
    auto ys = random_series(rng, n, 1 + int(rng.uniform_index(8)));
    auto got = spearman(xs, ys);
    auto want = oracle::spearman_bruteforce(xs, ys);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (got) ASSERT_NEAR(*got, *want, 1e-12);
  }
}

TEST(Spearman, InvariantUnderMonotoneMaps) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 3 + rng.uniform_index(20);
    auto xs = random_series(rng, n, 6);
    auto ys = random_series(rng, n, 6);
    auto base = spearman(xs, ys);
    if (!base) continue;
    std::vector<double> fx(n), gy(n);
    double a = 0.5 + rng.uniform();
    for (std::size_t i = 0; i < n; ++i) {
      fx[i] = std::exp(a * xs[i]);
      gy[i] = std::pow(ys[i] + 1, 3) - 7;
    }
    ASSERT_NEAR(*spearman(fx, gy), *base, 1e-12);
  }
}

TEST(Isotonic, Examples) {
  std::vector<double> x{1, 2, 3, 4};
  std::vector<double> inc{1, 2, 5, 9}, flat{2, 2, 2, 2}, mix{1, 3, 2, 4};
  EXPECT_DOUBLE_EQ(isotonic_score(x, inc), 1.0);
  EXPECT_EQ(isotonic_score(x, flat), 0.0);
  EXPECT_NEAR(isotonic_score(x, mix), oracle::isotonic_score_bruteforce(x, mix), 1e-12);
  // pooled fit (1, 2.5, 2.5, 4): SSE 0.5 of SST 5
  EXPECT_NEAR(isotonic_score(x, mix), std::sqrt(0.9), 1e-12);
  std::vector<double> dec{4, 3, 1, 0};
  EXPECT_DOUBLE_EQ(isotonic_score(x, dec), -1.0);
}

TEST(Isotonic, MatchesExhaustiveOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 400; ++trial) {
    std::size_t n = 2 + rng.uniform_index(7);
    auto xs = random_series(rng, n, 5);
    auto ys = random_series(rng, n, 6);
    ASSERT_NEAR(isotonic_score(xs, ys), oracle::isotonic_score_bruteforce(xs, ys), 1e-10);
  }
}

TEST(Isotonic, UnitScoreIffNondecreasing) {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t n = 2 + rng.uniform_index(5);
    std::vector<double> xs(n);
    std::iota(xs.begin(), xs.end(), 0.0);
    auto ys = random_series(rng, n, 4);
    bool nondecreasing = std::is_sorted(ys.begin(), ys.end());
    bool varies = *std::min_element(ys.begin(), ys.end()) != *std::max_element(ys.begin(), ys.end());
    ASSERT_EQ(std::abs(isotonic_score(xs, ys) - 1.0) < 1e-12, nondecreasing && varies);
  }
}

TEST(Stats, PavaIsMonotoneLeastSquares) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 2 + rng.uniform_index(6);
    auto xs = random_series(rng, n, 4);
    auto ys = random_series(rng, n, 6);
    auto fit = stats::isotonic_fit(xs, ys, true);
    double sse = 0;
    for (std::size_t i = 0; i < n; ++i) sse += (fit[i] - ys[i]) * (fit[i] - ys[i]);
    ASSERT_NEAR(sse, oracle::monotone_sse_exhaustive(xs, ys, true), 1e-9);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (xs[i] < xs[j]) ASSERT_LE(fit[i], fit[j] + 1e-12);
  }
}

TEST(ScoreAll, CountsOnePerCombination) {
  fixtures::TempDir dir("score_all");
  auto specs = synth::make_trend_specs({.n_increasing = 1, .n_decreasing = 1, .n_flat = 0});
  synth::CorpusOptions opts;
  opts.n_batches = 8;
  opts.groups = 2;
  opts.trajs = 2;
  auto run = fixtures::planted_run(specs, opts, 4, dir / "s");
  TargetKind t[] = {TargetKind::training_step};
  auto scores = score_all(run.table, t);
  EXPECT_EQ(scores.size(), 16u);
  for (const auto& s : scores)
    if (s.score) {
      EXPECT_LE(std::abs(*s.score), 1.0);
      EXPECT_GE(s.n, 2u);
    }
}

TEST(ScoreAll, LinearSumGivesUnitSpearman) {
  FeatureTable table;
  for (std::int64_t b = 0; b < 6; ++b) table.trajectories.push_back({{"r", b, 0, 0}, 0.0, 10});
  table.features.resize(2);
  for (std::uint32_t i = 0; i < 6; ++i) {
    table.features[0].push_back({i, i + 1, 1.0f, double(i + 1)});
    table.features[1].push_back({i, 1, 1.0f, 1.0});
  }
  TargetKind t[] = {TargetKind::training_step};
  CorrelationMethod m[] = {CorrelationMethod::spearman};
  AggregationKind k[] = {AggregationKind::sum, AggregationKind::binary};
  auto scores = score_all(table, t, k, m);
  ASSERT_EQ(scores.size(), 4u);
  for (const auto& s : scores) {
    if (s.feature_id == 0 && s.aggregation == AggregationKind::sum) EXPECT_DOUBLE_EQ(*s.score, 1.0);
    if (s.feature_id == 1) EXPECT_FALSE(s.defined());
  }
  auto ranked = rank_features(scores, 10, 10);
  for (const auto& r : ranked) EXPECT_NE(r.feature_id, 1u);
}

TEST(ScoreAll, ParallelKernelEqualsSerial) {
  auto specs = synth::make_trend_specs({.n_increasing = 4, .n_decreasing = 4, .n_flat = 20});
  auto table = synth::simulate_feature_table(specs, {.n_batches = 10, .per_batch = 5, .seed = 3});
  std::vector<std::uint32_t> features(specs.size());
  std::iota(features.begin(), features.end(), 0u);
  TargetKind t[] = {TargetKind::training_step, TargetKind::reward};
  auto par = kernels::score_features(table, features, t, kAllAggregations, kAllMethods);
  auto ser = kernels::score_features_serial(table, features, t, kAllAggregations, kAllMethods);
  EXPECT_EQ(par, ser);
  EXPECT_EQ(par.size(), features.size() * 2 * 4 * 2);
}

TEST(Rank, QuotaAndTieBreak) {
  std::vector<FeatureScore> scores;
  for (std::uint32_t f = 0; f < 500; ++f) scores.push_back(score_of(f, 0.5));
  auto ranked = rank_features(scores, 1000, 200);
  ASSERT_EQ(ranked.size(), 200u);
  for (std::uint32_t i = 0; i < 200; ++i) EXPECT_EQ(ranked[i].feature_id, i);
}

TEST(Rank, SingleCombinationIsSortByAbs) {
  Rng rng(6);
  std::vector<FeatureScore> scores;
  for (std::uint32_t f = 0; f < 80; ++f) scores.push_back(score_of(f, rng.uniform() * 2 - 1));
  auto expect = scores;
  std::sort(expect.begin(), expect.end(), [](const auto& a, const auto& b) {
    double x = std::abs(*a.score), y = std::abs(*b.score);
    return x != y ? x > y : a.feature_id < b.feature_id;
  });
  auto ranked = rank_features(scores, 15, 80);
  ASSERT_EQ(ranked.size(), 15u);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_EQ(ranked[i].feature_id, expect[i].feature_id);
}

TEST(Rank, UnionKeepsBestEntry) {
  std::vector<FeatureScore> scores{score_of(3, 0.2, AggregationKind::sum), score_of(3, -0.9, AggregationKind::max),
                                   score_of(4, 0.5, AggregationKind::sum), score_of(4, 0.1, AggregationKind::max)};
  auto ranked = rank_features(scores, 5, 1);
  ASSERT_EQ(ranked.size(), 2u);
  EXPECT_EQ(ranked[0].feature_id, 3u);
  EXPECT_DOUBLE_EQ(*ranked[0].best.score, -0.9);
  EXPECT_EQ(ranked[1].feature_id, 4u);
}

TEST(Rank, BinaryRankingIsScaleFree) {
  auto specs = synth::make_trend_specs({.n_increasing = 3, .n_decreasing = 3, .n_flat = 10});
  auto table = synth::simulate_feature_table(specs, {.n_batches = 8, .per_batch = 6, .seed = 9});
  auto scaled = table;
  for (auto& col : scaled.features)
    for (auto& a : col) {
      a.max *= 3.5f;
      a.sum *= 3.5;
    }
  TargetKind t[] = {TargetKind::training_step};
  AggregationKind k[] = {AggregationKind::binary};
  auto r1 = rank_features(score_all(table, t, k), 10, 10);
  auto r2 = rank_features(score_all(scaled, t, k), 10, 10);
  ASSERT_EQ(r1.size(), r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_EQ(r1[i].feature_id, r2[i].feature_id);
}

TEST(Histogram, SingleBinAndSymmetry) {
  std::vector<FeatureScore> same(10, score_of(0, 0.5));
  auto h = score_histogram(same);
  EXPECT_EQ(h.counts.size(), 40u);
  EXPECT_EQ(std::count_if(h.counts.begin(), h.counts.end(), [](auto c) { return c > 0; }), 1);
  EXPECT_DOUBLE_EQ(h.positive_share, 1.0);
  std::vector<FeatureScore> sym{score_of(0, 0.3), score_of(1, -0.3), score_of(2, 0.8), score_of(3, -0.8)};
  auto s = score_histogram(sym);
  EXPECT_NEAR(s.mean, 0.0, 1e-15);
  EXPECT_EQ(s.n, 4u);
  std::vector<FeatureScore> edges{score_of(0, 1.0), score_of(1, -1.0)};
  auto e = score_histogram(edges);
  EXPECT_EQ(e.counts.front(), 1u);
  EXPECT_EQ(e.counts.back(), 1u);
}

TEST(Histogram, PositiveShareTracksPlantedFraction) {
  synth::TrendSpecOptions o{.n_increasing = 60, .n_decreasing = 40, .n_flat = 0};
  auto specs = synth::make_trend_specs(o);
  auto table = synth::simulate_feature_table(specs, {.n_batches = 10, .per_batch = 10, .seed = 4});
  TargetKind t[] = {TargetKind::training_step};
  AggregationKind k[] = {AggregationKind::sum};
  CorrelationMethod m[] = {CorrelationMethod::spearman};
  auto h = score_histogram(score_all(table, t, k, m));
  EXPECT_NEAR(h.positive_share, 0.6, 0.05);
  EXPECT_GT(h.mean, 0.0);
}

TEST(DiffSeries, IdenticalRunsAreZero) {
  auto specs = synth::make_trend_specs({.n_increasing = 2, .n_decreasing = 0, .n_flat = 2});
  auto table = synth::simulate_feature_table(specs, {.n_batches = 6, .per_batch = 4, .seed = 1});
  auto d = diff_series(table, table, 0, AggregationKind::sum);
  ASSERT_EQ(d.size(), 6u);
  for (const auto& p : d) EXPECT_EQ(p.value, 0.0);
}

TEST(DiffSeries, DivergenceAfterStep) {
  auto ds = synth::make_divergence_specs(4, 1, 6);
  auto good = synth::simulate_feature_table(ds.good, {.run_id = "goodrun", .n_batches = 12, .per_batch = 400, .seed = 1});
  auto bad = synth::simulate_feature_table(ds.bad, {.run_id = "badrun", .n_batches = 12, .per_batch = 400, .seed = 2});
  auto d = diff_series(good, bad, 0, AggregationKind::sum);
  ASSERT_EQ(d.size(), 12u);
  for (const auto& p : d) {
    if (p.batch < 6) EXPECT_LT(std::abs(p.value), 0.3) << p.batch;
    else EXPECT_LT(p.value, -0.3) << p.batch;  // the bad run jumps
  }
  auto scores = score_diff(good, bad);
  EXPECT_FALSE(scores.empty());
}

TEST(DiffSeries, SingleBatchUndefinedAndMismatchWarns) {
  auto specs = synth::make_trend_specs({.n_increasing = 1, .n_decreasing = 0, .n_flat = 0});
  auto one = synth::simulate_feature_table(specs, {.n_batches = 1, .per_batch = 4, .seed = 1});
  auto d = diff_series(one, one, 0, AggregationKind::sum);
  EXPECT_EQ(d.size(), 1u);
  for (const auto& s : score_diff(one, one)) EXPECT_FALSE(s.defined());
  auto longer = synth::simulate_feature_table(specs, {.n_batches = 3, .per_batch = 4, .seed = 1});
  Warnings w;
  auto d2 = diff_series(longer, one, 0, AggregationKind::sum, &w);
  EXPECT_EQ(d2.size(), 1u);
  EXPECT_FALSE(w.empty());
}

TEST(ScoresIo, CsvAndJsonRoundTrip) {
  std::vector<FeatureScore> scores{score_of(1, 0.25), score_of(2, -0.75, AggregationKind::binary, CorrelationMethod::isotonic)};
  FeatureScore undef = score_of(3, 0);
  undef.score.reset();
  scores.push_back(undef);
  EXPECT_EQ(scores_from_csv(scores_to_csv(scores)), scores);
  auto ranked = rank_features(scores, 5, 5);
  auto back = ranking_from_json(ranking_to_json(ranked));
  ASSERT_EQ(back.size(), ranked.size());
  EXPECT_EQ(back[0].best, ranked[0].best);
}
