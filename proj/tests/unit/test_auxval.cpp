#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "trajlens/auxval.hpp"
#include "trajlens/rng.hpp"
#include "trajlens/scoring.hpp"
#include "trajlens/synth.hpp"

using namespace trajlens;

namespace {

ActionDocument doc(std::string id, std::int64_t batch, std::string text,
                   ActionKind kind = ActionKind::assistant_message, std::string phase = "") {
  return {std::move(id), kind, std::move(text), batch, std::move(phase)};
}

std::string words(std::size_t n, std::string_view w = "filler") {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) (s += w) += ' ';
  return s;
}

synth::GeneratedCorpus rising_corpus(double dup_slope = 0.0, std::int64_t trajs = 4) {
  WhitespaceTokenizer tok;
  auto specs = synth::make_trend_specs({.n_increasing = 1, .n_decreasing = 0, .n_flat = 0});
  synth::CorpusOptions o;
  o.n_batches = 12;
  o.groups = 3;
  o.trajs = trajs;
  o.duplicate_slope = dup_slope;
  o.seed = 3;
  return synth::generate_corpus(specs, o, tok);
}

}  // namespace

TEST(Keyword, WholeWordCaseInsensitive) {
  EXPECT_EQ(count_keyword("The Empire, the empire! EMPIRE.", "empire"), 3u);
  EXPECT_EQ(count_keyword("empires and imperial", "empire"), 0u);
  EXPECT_EQ(count_keyword("empires and empire", "empire", true), 2u);
  EXPECT_EQ(count_keyword("a non-aggression pact and a Non-Aggression Pact", "non-aggression pact"), 2u);
  EXPECT_EQ(count_keyword("anything", ""), 0u);
}

TEST(Keyword, TrendHandCountAndAbsent) {
  std::vector<ActionDocument> docs{doc("t1", 0, "empire " + words(99)), doc("t1", 0, "empire " + words(99)),
                                   doc("t1", 0, "the empire " + words(98))};
  std::vector<std::string> kw{"empire"};
  auto pts = keyword_trend(docs, kw);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_DOUBLE_EQ(pts[0].raw, 3.0);
  EXPECT_DOUBLE_EQ(pts[0].per_token, 0.01);
  EXPECT_DOUBLE_EQ(pts[0].per_document, 1.0);
  std::vector<std::string> none{"zeppelin"};
  for (const auto& p : keyword_trend(docs, none)) EXPECT_EQ(p.raw, 0.0);
  std::vector<std::string> empty;
  EXPECT_THROW(keyword_trend(docs, empty), InvalidArgument);
}

TEST(Keyword, OrderInvariantWithinBatch) {
  Rng rng(1);
  std::vector<ActionDocument> docs;
  for (int i = 0; i < 60; ++i)
    docs.push_back(doc("t" + std::to_string(i % 7) + "_" + std::to_string(i % 3), i % 3,
                       words(1 + rng.uniform_index(5), "empire") + words(rng.uniform_index(20))));
  std::vector<std::string> kw{"empire"};
  auto base = keyword_trend(docs, kw);
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(docs);
    auto again = keyword_trend(docs, kw);
    ASSERT_EQ(again.size(), base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      EXPECT_NEAR(again[i].raw, base[i].raw, 1e-12);
      EXPECT_NEAR(again[i].per_token, base[i].per_token, 1e-12);
    }
  }
}

TEST(Keyword, PlantedMentionsRise) {
  auto gen = rising_corpus();
  auto docs = extract_actions(gen.corpus);
  std::vector<std::string> kw{"Napoleon"};
  auto pts = keyword_trend(docs, kw);
  std::vector<double> b, v;
  for (const auto& p : pts) {
    b.push_back(double(p.batch));
    v.push_back(p.raw);
  }
  EXPECT_GT(*spearman(b, v), 0.8);
}

TEST(Actions, ToolCallsAndPhases) {
  Trajectory t;
  t.key = {"r", 0, 0, 0};
  nlohmann::ordered_json call = {{"function", {{"name", "send_message"}, {"arguments", {{"to", "ENG"}, {"text", "hi"}}}}}};
  Message with_calls{Role::assistant, "thinking", std::nullopt, {}};
  with_calls.extra["tool_calls"] = nlohmann::ordered_json::array({call});
  t.messages = {{Role::user, "Phase S1901M begins", std::nullopt, {}},
                with_calls,
                {Role::assistant, "dear diary", std::string("write_diary"), {}},
                {Role::assistant, "", std::nullopt, {}}};
  auto docs = extract_actions(Corpus({t}));
  ASSERT_EQ(docs.size(), 3u);
  EXPECT_EQ(docs[0].kind, ActionKind::assistant_message);
  EXPECT_EQ(docs[1].kind, ActionKind::send_message);
  EXPECT_NE(docs[1].text.find("hi"), std::string::npos);
  EXPECT_EQ(docs[2].kind, ActionKind::write_diary);
  for (const auto& d : docs) EXPECT_EQ(d.phase, "S1901M");
}

TEST(Embedding, CosineBasics) {
  HashingEmbedder e(64);
  auto a = e.embed("grand coalition against france");
  EXPECT_NEAR(cosine(a, e.embed("grand coalition against france")), 1.0, 1e-6);
  float x[] = {1, 0}, y[] = {0, 2}, z[] = {0, 0};
  EXPECT_EQ(cosine(x, y), 0.0);
  EXPECT_EQ(cosine(x, z), 0.0);
}

TEST(Embedding, CacheAndFailures) {
  HashingEmbedder inner(32);
  EmbeddingCache cache(inner);
  cache.embed("a b");
  cache.embed("a b");
  cache.embed("c");
  EXPECT_EQ(cache.size(), 2u);
  EXPECT_EQ(cache.misses(), 2u);

  struct Flaky : EmbeddingClient {
    HashingEmbedder h{16};
    std::vector<float> embed(std::string_view t) override {
      if (t.find("boom") != std::string_view::npos) throw LlmError("down");
      return h.embed(t);
    }
  } flaky;
  std::vector<ActionDocument> docs{doc("t", 0, "fine text"), doc("t", 0, "boom"), doc("u", 1, "more")};
  auto r = embedding_trend(docs, "fine text", flaky, 2);
  ASSERT_EQ(r.points.size(), 2u);
  EXPECT_EQ(r.points[0].documents, 1u);
  EXPECT_NEAR(r.points[0].mean_cosine, 1.0, 1e-6);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Embedding, TrendFollowsKeywordTrend) {
  auto gen = rising_corpus();
  auto docs = extract_actions(gen.corpus);
  HashingEmbedder e(512);
  auto emb = embedding_trend(docs, "Emperor Napoleon decrees imperial edict Imperial Majesty", e);
  std::vector<std::string> kw{"Napoleon", "imperial edict", "Imperial Majesty"};
  auto kt = keyword_trend(docs, kw);
  ASSERT_EQ(emb.points.size(), kt.size());
  std::vector<double> a, b;
  for (std::size_t i = 0; i < kt.size(); ++i) {
    a.push_back(emb.points[i].mean_cosine);
    b.push_back(kt[i].per_token);
  }
  EXPECT_GT(*spearman(a, b), 0.7);
}

TEST(Rules, RegexAndDuplicates) {
  EXPECT_THROW(CountingRule("re:(unclosed"), InvalidArgument);
  std::vector<ActionDocument> docs{
      doc("t", 0, "Hold the line", ActionKind::send_message, "S1901M"),
      doc("t", 0, "hold  the LINE", ActionKind::send_message, "S1901M"),
      doc("t", 0, "Hold the line", ActionKind::send_message, "F1901M"),
      doc("t", 0, "Hold the line", ActionKind::write_diary, "S1901M"),
  };
  EXPECT_EQ(CountingRule("dup:send_message").count(docs), 1u);
  EXPECT_EQ(CountingRule("dup:write_diary").count(docs), 0u);
  EXPECT_EQ(CountingRule("re:[Hh]old").count(docs), 4u);
  EXPECT_EQ(CountingRule("line").count(docs), 3u);
}

TEST(Cooccurrence, SelfUndefinedAndDuplicates) {
  auto gen = rising_corpus(0.6, 12);
  CountingRule a("re:Napoleon");
  auto self = regex_cooccurrence(gen.corpus, a, a);
  ASSERT_TRUE(self.correlation.has_value());
  EXPECT_DOUBLE_EQ(*self.correlation, 1.0);

  auto never = regex_cooccurrence(gen.corpus, a, CountingRule("re:zzzyyyxxx"));
  EXPECT_FALSE(never.correlation.has_value());

  auto dups = regex_cooccurrence(gen.corpus, CountingRule("dup:send_message"), CountingRule("dup:write_diary"));
  ASSERT_TRUE(dups.correlation.has_value());
  EXPECT_GT(*dups.correlation, 0.9);
  EXPECT_EQ(dups.counts_a.size(), gen.corpus.size());
  EXPECT_NE(cooccurrence_csv(dups).find("mean_a"), std::string::npos);
}
