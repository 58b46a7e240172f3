#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "trajlens/extract.hpp"
#include "trajlens/kernels.hpp"
#include "trajlens/rng.hpp"
#include "trajlens/sae.hpp"
#include "trajlens/store.hpp"
#include "trajlens/synth.hpp"

using namespace trajlens;

namespace {

SaeWeights identity2(float t0 = 0, float t1 = 0) {
  auto w = SaeWeights::zeros(2, 2);
  w.w_enc = {1, 0, 0, 1};
  w.theta = {t0, t1};
  return w;
}

SparseVector sv(std::initializer_list<std::pair<std::uint32_t, float>> xs) {
  SparseVector v;
  for (auto [f, x] : xs) v.push_back({f, x});
  return v;
}

}  // namespace

TEST(Encode, Rectification) {
  float x[] = {3, -1};
  EXPECT_EQ(encode_token(identity2(), x), sv({{0, 3}}));
}

TEST(Encode, JumpThreshold) {
  auto w = identity2(2.5f, 0);
  float x1[] = {3, 1};
  float x2[] = {2, 1};
  EXPECT_EQ(encode_token(w, x1), sv({{0, 3}, {1, 1}}));
  EXPECT_EQ(encode_token(w, x2), sv({{1, 1}}));
}

TEST(Encode, ShapeMismatch) {
  float x[] = {1, 2, 3};
  EXPECT_THROW(encode_token(identity2(), x), ShapeError);
}

TEST(Encode, MatchesDenseOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto w = fixtures::random_weights(4, 8, 100 + trial);
    std::vector<float> x(4);
    for (auto& v : x) v = float(rng.normal());
    auto dense = oracle::dense_encode(w, x);
    auto sparse = encode_token(w, x);
    std::map<std::uint32_t, float> got;
    for (auto e : sparse) got[e.feature_id] = e.value;
    for (std::uint32_t f = 0; f < 8; ++f) {
      double expect = dense[f];
      double actual = got.count(f) ? got[f] : 0.0;
      ASSERT_NEAR(actual, expect, 1e-6 * std::max(1.0, std::abs(expect)));
    }
  }
}

TEST(Encode, ThresholdedAgainstDenseOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto w = fixtures::random_weights(6, 12, 500 + trial, 0.5);
    std::vector<float> x(6);
    for (auto& v : x) v = float(rng.normal());
    auto dense = oracle::dense_encode(w, x);
    auto sparse = encode_token(w, x);
    std::map<std::uint32_t, float> got;
    for (auto e : sparse) got[e.feature_id] = e.value;
    for (std::uint32_t f = 0; f < 12; ++f) {
      if (std::abs(dense[f] - w.theta[f]) < 1e-5) continue;  // too close to call
      bool fires = dense[f] > w.theta[f] && dense[f] > 0;
      ASSERT_EQ(got.count(f) == 1, fires) << f;
    }
  }
}

TEST(TopK, KeepsLargest) {
  SparseVector v;
  for (std::uint32_t f = 0; f < 150; ++f) v.push_back({f, float((f * 37) % 150) + 1});
  auto kept = topk_retain(v, 100);
  ASSERT_EQ(kept.size(), 100u);
  for (const auto& e : kept) EXPECT_GT(e.value, 50.0f);
  EXPECT_TRUE(std::is_sorted(kept.begin(), kept.end(),
                             [](auto a, auto b) { return a.value > b.value; }));
}

TEST(TopK, ShortVectorUntouched) {
  auto v = sv({{1, 2}, {3, 5}, {7, 1}, {8, 4}, {9, 3}});
  auto kept = topk_retain(v, 100);
  EXPECT_EQ(kept.size(), 5u);
  EXPECT_EQ(kept.front(), (SparseEntry{3, 5}));
}

TEST(TopK, TieBreakMatchesSortOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    SparseVector v;
    for (std::uint32_t f = 0; f < 40; ++f)
      if (rng.bernoulli(0.7)) v.push_back({f, float(1 + rng.uniform_index(4))});
    std::size_t k = 1 + rng.uniform_index(30);
    auto expect = v;
    std::sort(expect.begin(), expect.end(), [](auto a, auto b) {
      return a.value != b.value ? a.value > b.value : a.feature_id < b.feature_id;
    });
    if (expect.size() > k) expect.resize(k);
    auto shuffled = v;
    rng.shuffle(shuffled);
    ASSERT_EQ(topk_retain(shuffled, k), expect);
    // increasing k never drops a retained entry
    auto bigger = topk_retain(v, k + 3);
    for (auto e : expect) ASSERT_NE(std::find(bigger.begin(), bigger.end(), e), bigger.end());
  }
}

TEST(Weights, SaveLoadRoundTrip) {
  fixtures::TempDir dir("weights");
  auto w = fixtures::random_weights(5, 7, 1, 0.3);
  save_sae_weights(w, dir.path());
  auto back = load_sae_weights(dir.path());
  EXPECT_EQ(back.w_enc, w.w_enc);
  EXPECT_EQ(back.b_enc, w.b_enc);
  EXPECT_EQ(back.theta, w.theta);
  auto bad = w;
  bad.theta[0] = -1;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = w;
  bad.b_enc.pop_back();
  EXPECT_THROW(bad.validate(), ShapeError);
}

TEST(Store, RoundTripIsLossless) {
  fixtures::TempDir dir("store");
  Rng rng(2);
  StoreMeta meta;
  meta.n_shards = 4;
  meta.n_features = 30;
  std::vector<StoreRecord> all;
  {
    StoreWriter writer(dir.path(), meta);
    for (int t = 0; t < 12; ++t) {
      StoredTrajectory info;
      info.key = {"r", t, 0, 0};
      info.hash = info.key.hash();
      info.total_tokens = 50;
      info.masked_tokens = 40;
      std::vector<StoreRecord> recs;
      for (std::uint32_t p = 0; p < 20; ++p)
        if (rng.bernoulli(0.5))
          recs.push_back({info.hash, p, std::uint32_t(rng.uniform_index(30)), float(rng.uniform() + 0.1)});
      info.records = recs.size();
      info.records_unmasked = recs.size();
      writer.append(info, recs);
      all.insert(all.end(), recs.begin(), recs.end());
    }
    writer.seal();
  }
  auto store = SparseStore::open(dir.path());
  auto back = store.read_all();
  auto key = [](const StoreRecord& r) { return std::tuple(r.trajectory_hash, r.token_pos, r.feature_id); };
  auto cmp = [&](const StoreRecord& a, const StoreRecord& b) { return key(a) < key(b); };
  std::sort(all.begin(), all.end(), cmp);
  std::sort(back.begin(), back.end(), cmp);
  EXPECT_EQ(back, all);
  EXPECT_EQ(store.meta().total_records(), all.size());
  EXPECT_EQ(store.meta().trajectories.size(), 12u);
}

TEST(Index, TopNMatchesFullScanAndSerial) {
  fixtures::TempDir dir("index");
  auto specs = synth::make_trend_specs({.n_increasing = 2, .n_decreasing = 1, .n_flat = 3});
  synth::CorpusOptions opts;
  opts.n_batches = 6;
  opts.groups = 2;
  opts.trajs = 2;
  auto run = fixtures::planted_run(specs, opts, 8, dir / "store");
  auto store = SparseStore::open(dir / "store");
  const std::size_t depth = 5;
  auto index = build_feature_index(store, depth);
  EXPECT_EQ(index, build_feature_index_serial(store, depth));

  std::map<std::uint32_t, std::vector<IndexEntry>> scan;
  for (const auto& r : store.read_all())
    scan[r.feature_id].push_back({std::uint32_t(store.trajectory_index(r.trajectory_hash)), r.token_pos, r.value});
  for (std::uint32_t f = 0; f < index.n_features(); ++f) {
    auto expect = scan[f];
    std::sort(expect.begin(), expect.end(), index_entry_before);
    if (expect.size() > depth) expect.resize(depth);
    ASSERT_EQ(index.top(f), expect) << "feature " << f;
    auto ex = top_examples(index, store.meta(), f, 100);
    ASSERT_EQ(ex.size(), expect.size());
    auto two = top_examples(index, store.meta(), f, 2);
    ASSERT_EQ(two.size(), std::min<std::size_t>(2, expect.size()));
  }
}

TEST(Index, TopExamplesSmall) {
  FeatureIndex index(2, 50);
  StoreMeta meta;
  meta.trajectories.push_back({{"r", 0, 0, 0}, 1});
  for (float v : {1.0f, 5.0f, 3.0f}) index.add(0, {1, std::uint32_t(v), 0, v});
  index.finalize();
  auto ex = top_examples(index, meta, 0, 2);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].value, 5.0f);
  EXPECT_EQ(ex[1].value, 3.0f);
  EXPECT_TRUE(top_examples(index, meta, 1, 5).empty());
}

TEST(Extract, RecordCountsMatchTruthAndSerialPass) {
  fixtures::TempDir dir("extract");
  auto specs = synth::make_trend_specs({.n_increasing = 2, .n_decreasing = 1, .n_flat = 2});
  synth::CorpusOptions opts;
  opts.n_batches = 3;
  opts.groups = 1;
  opts.trajs = 1;
  opts.env_echo_rate = 0.3;
  auto run = fixtures::planted_run(specs, opts, 8, dir / "store");
  ASSERT_EQ(run.gen.corpus.size(), 3u);

  std::uint64_t masked = 0, all = 0;
  for (const auto& [id, cells] : run.gen.truth.cells)
    for (const auto& [f, cell] : cells) {
      masked += cell.tokens;
      all += cell.tokens_all;
    }
  EXPECT_EQ(run.extracted.meta.total_records(), masked);
  EXPECT_EQ(run.extracted.meta.total_records_unmasked(), all);
  EXPECT_GE(all, masked);

  WhitespaceTokenizer tok;
  synth::PlantedActivationSource source(specs, run.weights, 0);
  std::vector<const Trajectory*> block;
  for (const auto& t : run.gen.corpus) block.push_back(&t);
  auto par = kernels::extract_block(block, tok, source, run.weights, 100);
  auto ser = kernels::extract_block_serial(block, tok, source, run.weights, 100);
  ASSERT_EQ(par.size(), ser.size());
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < par.size(); ++i) {
    EXPECT_EQ(par[i].records, ser[i].records);
    EXPECT_EQ(par[i].info, ser[i].info);
    n += ser[i].records.size();
  }
  EXPECT_EQ(n, masked);
}

TEST(Extract, KOneBoundsRecordsPerToken) {
  fixtures::TempDir dir("extract_k1");
  WhitespaceTokenizer tok;
  Trajectory t;
  t.key = {"r", 0, 0, 0};
  t.messages = {{Role::assistant, "a b c d e f", std::nullopt, {}}};
  Corpus corpus({t});
  auto w = fixtures::random_weights(4, 16, 1);
  fixtures::TempDir dump("dump");
  {
    ActivationDumpWriter writer(dump.path(), 4);
    TrajectoryActivations acts;
    acts.d_model = 4;
    Rng rng(1);
    for (std::uint32_t p = 0; p < 6; ++p) {
      acts.positions.push_back(p);
      for (int d = 0; d < 4; ++d) acts.rows.push_back(float(rng.normal()));
    }
    writer.write(t.key, acts);
  }
  ActivationDump source(dump.path());
  auto r = extract_corpus(corpus, tok, source, w, dir / "s", {.k = 1, .n_shards = 2});
  std::map<std::uint32_t, int> per_pos;
  for (const auto& rec : SparseStore::open(dir / "s").read_all()) per_pos[rec.token_pos]++;
  for (auto [p, n] : per_pos) EXPECT_EQ(n, 1);
  EXPECT_GT(per_pos.size(), 0u);
}

TEST(Extract, MissingActivationIsFatal) {
  fixtures::TempDir dump("dump_missing");
  WhitespaceTokenizer tok;
  Trajectory t;
  t.key = {"r", 0, 0, 0};
  t.messages = {{Role::assistant, "a b c", std::nullopt, {}}};
  {
    ActivationDumpWriter writer(dump.path(), 2);
    TrajectoryActivations acts;
    acts.d_model = 2;
    acts.positions = {0, 2};
    acts.rows = {1, 1, 1, 1};
    writer.write(t.key, acts);
  }
  ActivationDump source(dump.path());
  fixtures::TempDir out("out_missing");
  try {
    extract_corpus(Corpus({t}), tok, source, identity2(), out / "s");
    FAIL();
  } catch (const MissingActivationError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find(t.key.to_string()), std::string::npos) << msg;
    EXPECT_NE(msg.find("1"), std::string::npos) << msg;
  }
}

TEST(Extract, EmptyCorpusGivesEmptyStore) {
  fixtures::TempDir dir("extract_empty");
  WhitespaceTokenizer tok;
  synth::PlantedActivationSource source({}, SaeWeights::zeros(4, 1), 0);
  auto r = extract_corpus(Corpus{}, tok, source, SaeWeights::zeros(4, 1), dir / "s");
  EXPECT_EQ(r.meta.total_records(), 0u);
  EXPECT_EQ(SparseStore::open(dir / "s").read_all().size(), 0u);
}

TEST(Kernels, EncodeRowsParallelEqualsSerial) {
  auto w = fixtures::random_weights(16, 64, 4, 0.2);
  Rng rng(6);
  std::vector<float> rows(16 * 300);
  for (auto& v : rows) v = float(rng.normal());
  EXPECT_EQ(kernels::encode_rows(w, rows, 10), kernels::encode_rows_serial(w, rows, 10));
}
