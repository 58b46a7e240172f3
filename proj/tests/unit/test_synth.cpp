#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "fixtures.hpp"
#include "trajlens/synth.hpp"

using namespace trajlens;

TEST(Synth, RatesAndSpecs) {
  auto specs = synth::make_trend_specs({.n_increasing = 2, .n_decreasing = 2, .n_flat = 3});
  ASSERT_EQ(specs.size(), 7u);
  for (std::uint32_t i = 0; i < 7; ++i) EXPECT_EQ(specs[i].feature_id, i);
  EXPECT_EQ(specs[0].trend, synth::Trend::increasing);
  EXPECT_EQ(specs[2].trend, synth::Trend::decreasing);
  EXPECT_EQ(specs[4].trend, synth::Trend::flat);
  EXPECT_LT(synth::planted_rate(specs[0], 0, 25), synth::planted_rate(specs[0], 24, 25));
  EXPECT_GT(synth::planted_rate(specs[2], 0, 25), synth::planted_rate(specs[2], 24, 25));
  EXPECT_EQ(synth::planted_rate(specs[4], 0, 25), synth::planted_rate(specs[4], 24, 25));
  auto bad = specs[0];
  bad.slope = 5;
  EXPECT_THROW(synth::planted_rate(bad, 24, 25), InvalidArgument);
  for (const auto& s : specs) EXPECT_EQ(synth::spec_from_json(synth::spec_to_json(s)), s);
}

TEST(Synth, PlantedValuesOnGrid) {
  for (std::uint32_t f = 0; f < 20; ++f)
    for (std::uint64_t occ = 0; occ < 20; ++occ) {
      float v = synth::planted_value(f, "word", occ);
      EXPECT_GE(v, 1.0f);
      EXPECT_LT(v, 2.0f);
      EXPECT_EQ(v * 64, std::floor(v * 64));
    }
}

TEST(Synth, ExtractionMatchesTruthCellByCell) {
  fixtures::TempDir dir("synth_truth");
  auto specs = synth::make_trend_specs({.n_increasing = 2, .n_decreasing = 2, .n_flat = 2});
  synth::CorpusOptions o;
  o.n_batches = 5;
  o.groups = 2;
  o.trajs = 2;
  o.env_echo_rate = 0.4;
  auto run = fixtures::planted_run(specs, o, 8, dir / "s");
  const auto& table = run.table;
  for (std::uint32_t f = 0; f < specs.size(); ++f) {
    std::map<std::uint32_t, const TrajectoryAggregate*> by_traj;
    for (const auto& a : table.features[f]) by_traj[a.trajectory] = &a;
    for (std::uint32_t t = 0; t < table.trajectories.size(); ++t) {
      const auto id = table.trajectories[t].key.to_string();
      const auto& cells = run.gen.truth.cells.at(id);
      auto it = cells.find(f);
      std::uint32_t tokens = it == cells.end() ? 0 : it->second.tokens;
      double sum = it == cells.end() ? 0.0 : it->second.sum;
      auto* agg = by_traj.count(t) ? by_traj[t] : nullptr;
      ASSERT_EQ(agg ? agg->count : 0u, tokens) << id << " F" << f;
      ASSERT_NEAR(agg ? agg->sum : 0.0, sum, 1e-9) << id << " F" << f;
    }
  }
  WhitespaceTokenizer tok;
  auto recomputed = synth::compute_truth(run.gen.corpus, specs, tok, run.gen.truth.seed);
  EXPECT_EQ(recomputed.cells, run.gen.truth.cells);
  auto rt = synth::GroundTruth::from_json(run.gen.truth.to_json());
  EXPECT_EQ(rt.cells, run.gen.truth.cells);
}

TEST(Synth, DeterministicUnderSeed) {
  WhitespaceTokenizer tok;
  auto specs = synth::make_trend_specs({.n_increasing = 1, .n_decreasing = 1, .n_flat = 1});
  synth::CorpusOptions o;
  o.n_batches = 4;
  o.seed = 42;
  auto a = synth::generate_corpus(specs, o, tok);
  auto b = synth::generate_corpus(specs, o, tok);
  EXPECT_EQ(serialize_corpus(a.corpus), serialize_corpus(b.corpus));
  o.seed = 43;
  EXPECT_NE(serialize_corpus(synth::generate_corpus(specs, o, tok).corpus), serialize_corpus(a.corpus));
}

TEST(Synth, DumpRoundTripFeedsExtraction) {
  fixtures::TempDir dir("synth_dump");
  WhitespaceTokenizer tok;
  auto specs = synth::make_trend_specs({.n_increasing = 1, .n_decreasing = 1, .n_flat = 1});
  synth::CorpusOptions o;
  o.n_batches = 3;
  auto gen = synth::generate_corpus(specs, o, tok);
  synth::generate_activations(gen.corpus, specs, tok, 4, 0, dir / "acts", dir / "w");
  ActivationDump dump(dir / "acts");
  auto w = load_sae_weights(dir / "w");
  EXPECT_EQ(dump.trajectory_ids().size(), gen.corpus.size());
  auto r = extract_corpus(gen.corpus, tok, dump, w, dir / "store", {.n_shards = 3});
  std::uint64_t expect = 0;
  for (const auto& [id, cells] : gen.truth.cells)
    for (const auto& [f, c] : cells) expect += c.tokens;
  EXPECT_EQ(r.meta.total_records(), expect);
}

TEST(Synth, RaterPanelKappaTracksRho) {
  for (double rho : {0.0, 0.6}) {
    double total = 0;
    for (std::uint64_t s = 0; s < 20; ++s)
      total += *fleiss_kappa(synth::simulate_rater_panel(200, 3, rho, 0.5, s));
    EXPECT_NEAR(total / 20, rho, 0.05);
  }
}

TEST(Synth, PairTruthAndJudges) {
  auto truth = std::make_shared<synth::PairTruth>();
  SamplePair p;
  p.pair_id = "p";
  p.sample_a = "early text";
  p.sample_b = "late text";
  p.true_answer = Answer::B;
  truth->add(p);
  EXPECT_EQ(truth->lookup("early text", "late text"), Answer::B);
  EXPECT_FALSE(truth->lookup("x", "y").has_value());
  auto oracle = synth::scripted_judge(synth::JudgeBehavior::oracle, truth, {}, 0);
  EXPECT_EQ(judge_pair(p, nullptr, *oracle, "o").answer, Answer::B);
  EXPECT_EQ(synth::parse_judge_behavior(synth::to_string(synth::JudgeBehavior::cue_following)),
            synth::JudgeBehavior::cue_following);
}

TEST(Synth, KeywordsIncludeSymbolPhrases) {
  synth::PlantedFeatureSpec s;
  s.trend = synth::Trend::increasing;
  s.theme = "Punctuation";
  s.token_vocabulary = {"!!!", ";;"};
  auto kws = synth::planted_keywords(std::span(&s, 1));
  EXPECT_NE(std::find(kws.begin(), kws.end(), "!!!"), kws.end());
}

TEST(Synth, SplitHalvesPartitionsEachBatch) {
  auto specs = synth::make_trend_specs({.n_increasing = 1, .n_decreasing = 0, .n_flat = 1});
  auto table = synth::simulate_feature_table(specs, {.n_batches = 4, .per_batch = 10, .seed = 1});
  auto [a, b] = synth::split_halves(table, 2);
  EXPECT_EQ(a.trajectories.size() + b.trajectories.size(), table.trajectories.size());
  std::set<std::string> ids;
  for (const auto* t : {&a, &b})
    for (const auto& tr : t->trajectories) EXPECT_TRUE(ids.insert(tr.key.to_string()).second);
  EXPECT_EQ(a.batches(), b.batches());
}
