#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "trajlens/corpus.hpp"
#include "trajlens/rng.hpp"

using namespace trajlens;

namespace {

Trajectory make_traj(std::string run, std::int64_t b, std::int64_t g, std::int64_t t,
                     std::vector<Message> msgs = {{Role::assistant, "hello world", std::nullopt, {}}}) {
  Trajectory tr;
  tr.key = {std::move(run), b, g, t};
  tr.reward = double(b);
  tr.messages = std::move(msgs);
  return tr;
}

std::string jsonl_line(const Trajectory& t) { return trajectory_to_json(t).dump() + "\n"; }

std::vector<Trajectory> grid(std::int64_t batches, std::int64_t groups, std::int64_t trajs) {
  std::vector<Trajectory> out;
  for (std::int64_t b = 0; b < batches; ++b)
    for (std::int64_t g = 0; g < groups; ++g)
      for (std::int64_t t = 0; t < trajs; ++t) out.push_back(make_traj("goodrun", b, g, t));
  return out;
}

}  // namespace

TEST(Corpus, LoadsAndSortsByKey) {
  std::string text;
  auto trajs = grid(25, 6, 6);
  std::reverse(trajs.begin(), trajs.end());
  for (const auto& t : trajs) text += jsonl_line(t);
  Corpus c = parse_corpus(text);
  ASSERT_EQ(c.size(), 900u);
  EXPECT_TRUE(std::is_sorted(c.begin(), c.end(),
                             [](const auto& a, const auto& b) { return a.key < b.key; }));
  EXPECT_EQ(c.run_counts().at("goodrun"), 900u);
  EXPECT_EQ(c.batches().size(), 25u);
}

TEST(Corpus, EmptyFileWarns) {
  Corpus c = parse_corpus("");
  EXPECT_TRUE(c.empty());
  EXPECT_FALSE(c.warnings().empty());
}

TEST(Corpus, DuplicateKeyRejected) {
  auto t = make_traj("r", 1, 2, 3);
  EXPECT_THROW(parse_corpus(jsonl_line(t) + jsonl_line(t)), DuplicateKeyError);
}

TEST(Corpus, MalformedLineNamesLineNumber) {
  std::string text = jsonl_line(make_traj("r", 0, 0, 0)) + "\n{not json\n";
  try {
    parse_corpus(text, "c.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
  }
}

TEST(Corpus, RoundTripPreservesUnknownFields) {
  auto t = make_traj("r", 0, 1, 2,
                     {{Role::system, "rules", std::nullopt, {}},
                      {Role::assistant, "", std::string("send_message"), {}}});
  auto j = trajectory_to_json(t);
  j["extra_field"] = 42;
  Corpus c = parse_corpus(j.dump() + "\n");
  EXPECT_EQ(c[0].extra.at("extra_field"), 42);
  Corpus again = parse_corpus(serialize_corpus(c));
  EXPECT_EQ(again[0], c[0]);
}

TEST(Corpus, RejectsEmptyMessagesAndUnknownRole) {
  auto t = make_traj("r", 0, 0, 0, {});
  EXPECT_THROW(Corpus({t}), Error);
  EXPECT_THROW(parse_role("narrator"), Error);
}

TEST(CanonicalSample, PicksSixBySixPerBatch) {
  Corpus c(grid(25, 8, 16));
  auto s = canonical_sample(c, 6, 6, 7);
  EXPECT_EQ(s.corpus.size(), 900u);
  EXPECT_TRUE(s.shortfalls.empty());
  std::map<std::int64_t, std::set<std::int64_t>> groups;
  std::map<std::pair<std::int64_t, std::int64_t>, int> per_group;
  for (const auto& t : s.corpus) {
    groups[t.key.batch].insert(t.key.group);
    per_group[{t.key.batch, t.key.group}]++;
  }
  for (const auto& [b, gs] : groups) EXPECT_EQ(gs.size(), 6u);
  for (const auto& [k, n] : per_group) EXPECT_EQ(n, 6);
}

TEST(CanonicalSample, OversizedRequestIsIdentity) {
  Corpus c(grid(3, 2, 2));
  auto s = canonical_sample(c, 6, 6, 1);
  EXPECT_EQ(s.corpus.trajectories(), c.trajectories());
  EXPECT_FALSE(s.shortfalls.empty());
}

TEST(CanonicalSample, Deterministic) {
  Corpus c(grid(4, 8, 16));
  auto a = canonical_sample(c, 3, 5, 11);
  auto b = canonical_sample(c, 3, 5, 11);
  auto other = canonical_sample(c, 3, 5, 12);
  EXPECT_EQ(a.corpus.trajectories(), b.corpus.trajectories());
  EXPECT_NE(a.corpus.trajectories(), other.corpus.trajectories());
}

TEST(ChunkBounds, HandEnumeratedLayouts) {
  using V = std::vector<SpanBounds>;
  EXPECT_EQ(chunk_bounds(2048, 1024, 512), (V{{0, 1024}, {512, 1536}, {1024, 2048}}));
  EXPECT_EQ(chunk_bounds(700, 1024, 512), (V{{0, 700}}));
  EXPECT_EQ(chunk_bounds(1100, 1024, 512), (V{{0, 1024}, {76, 1100}}));
  EXPECT_TRUE(chunk_bounds(0, 1024, 512).empty());
  EXPECT_THROW(chunk_bounds(10, 4, 8), Error);
}

TEST(ChunkBounds, CoverageAndOverlapProperties) {
  Rng rng(5);
  for (int trial = 0; trial < 400; ++trial) {
    std::size_t stride = 1 + rng.uniform_index(40);
    std::size_t window = stride + rng.uniform_index(80);
    std::size_t total = 1 + rng.uniform_index(400);
    auto spans = chunk_bounds(total, window, stride);
    std::vector<int> cover(total, 0);
    for (const auto& s : spans) {
      ASSERT_LT(s.start, s.end);
      ASSERT_LE(s.end - s.start, window);
      ASSERT_LE(s.end, total);
      for (auto i = s.start; i < s.end; ++i) cover[i]++;
    }
    // The end-aligned tail can add one layer over the regular windows.
    std::size_t bound = (window + stride - 1) / stride;
    const auto& tail = spans.back();
    for (std::size_t i = 0; i < total; ++i) {
      ASSERT_GE(cover[i], 1);
      ASSERT_LE(std::size_t(cover[i]), i >= tail.start ? bound + 1 : bound);
    }
    auto owners = window_owners(spans, total);
    for (std::size_t i = 0; i < total; ++i) {
      std::size_t first = 0;
      while (!(spans[first].start <= i && i < spans[first].end)) ++first;
      ASSERT_EQ(owners[i], first);
    }
  }
}

TEST(AssistantMask, SystemThenAssistant) {
  WhitespaceTokenizer tok;
  auto t = make_traj("r", 0, 0, 0,
                     {{Role::system, "you are a player", std::nullopt, {}},
                      {Role::assistant, "I move to Paris", std::nullopt, {}}});
  auto m = assistant_mask(t, tok);
  EXPECT_EQ(m, (std::vector<bool>{false, false, false, false, true, true, true, true}));
}

TEST(AssistantMask, AllAssistant) {
  WhitespaceTokenizer tok;
  auto t = make_traj("r", 0, 0, 0,
                     {{Role::assistant, "a b", std::nullopt, {}}, {Role::assistant, "c", std::nullopt, {}}});
  auto m = assistant_mask(t, tok);
  EXPECT_EQ(m.size(), 3u);
  EXPECT_TRUE(std::all_of(m.begin(), m.end(), [](bool x) { return x; }));
}

TEST(AssistantMask, InterleavedMatchesPerMessageWalk) {
  WhitespaceTokenizer tok;
  Rng rng(9);
  const Role roles[] = {Role::system, Role::assistant, Role::user, Role::tool};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Message> msgs;
    std::size_t n = 1 + rng.uniform_index(8);
    for (std::size_t i = 0; i < n; ++i) {
      std::string text;
      std::size_t words = rng.uniform_index(6);
      for (std::size_t w = 0; w < words; ++w) text += "w" + std::to_string(rng.uniform_index(9)) + " ";
      msgs.push_back({roles[rng.uniform_index(4)], text, std::string("tool"), {}});
    }
    auto t = make_traj("r", 0, 0, 0, msgs);
    std::vector<bool> expect;
    std::size_t assistant_tokens = 0;
    for (const auto& m : msgs) {
      auto k = tok.token_count(m.content);
      expect.insert(expect.end(), k, m.role == Role::assistant);
      if (m.role == Role::assistant) assistant_tokens += k;
    }
    auto mask = assistant_mask(t, tok);
    ASSERT_EQ(mask, expect);
    ASSERT_EQ(std::size_t(std::count(mask.begin(), mask.end(), true)), assistant_tokens);
  }
}

TEST(ChunkTrajectory, SpansCarryTokensAndMask) {
  WhitespaceTokenizer tok;
  std::string words;
  for (int i = 0; i < 30; ++i) words += "t" + std::to_string(i) + " ";
  auto t = make_traj("r", 0, 0, 0,
                     {{Role::user, "ask", std::nullopt, {}}, {Role::assistant, words, std::nullopt, {}}});
  auto spans = chunk_trajectory(t, tok, 16, 8);
  auto full = tokenize_trajectory(t, tok);
  ASSERT_EQ(full.size(), 31u);
  for (const auto& s : spans) {
    ASSERT_EQ(s.end - s.start, s.token_ids.size());
    ASSERT_EQ(s.role_mask.size(), s.token_ids.size());
    for (std::size_t i = 0; i < s.token_ids.size(); ++i) {
      EXPECT_EQ(s.token_ids[i], full.ids[s.start + i]);
      EXPECT_EQ(s.role_mask[i], bool(full.assistant[s.start + i]));
    }
  }
  EXPECT_EQ(spans.back().end, 31u);
}

TEST(Tokenizer, DeterministicAndEmpty) {
  WhitespaceTokenizer tok(4);
  EXPECT_TRUE(tok.encode("").empty());
  EXPECT_EQ(tok.encode("alpha beta"), tok.encode("alpha  beta"));
  EXPECT_EQ(tok.pieces("abcdefghij"), (std::vector<std::string>{"abcd", "efgh", "ij"}));
  for (auto id : tok.encode("xy yz zx")) EXPECT_GE(id, 256);
}
