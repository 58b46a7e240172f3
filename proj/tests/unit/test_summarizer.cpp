#include <gtest/gtest.h>

#include <set>

#include "trajlens/summarizer.hpp"
#include "trajlens/synth.hpp"

using namespace trajlens;

namespace {

Trajectory traj(std::int64_t batch, std::int64_t t, std::string text = "I will attack Munich now") {
  Trajectory tr;
  tr.key = {"goodrun", batch, 0, t};
  tr.messages = {{Role::system, "rules of the game", std::nullopt, {}},
                 {Role::assistant, std::move(text), std::nullopt, {}},
                 {Role::tool, "order accepted", std::string("submit_orders"), {}}};
  return tr;
}

const char* kTimeline =
    "<phase S1901M>Opens by moving to Munich. "
    "<citation submit_orders>order accepted</citation></phase>\n"
    "<phase F1901M>Holds position.</phase>\n";

TrajectorySummary summary_of(const Trajectory& t) {
  TrajectorySummary s;
  s.trajectory_id = t.key.to_string();
  s.batch = t.key.batch;
  s.text = kTimeline;
  return s;
}

std::string items_json(int n, std::string_view dir = "increasing") {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < n; ++i)
    arr.push_back({{"name", "Item " + std::to_string(i)},
                   {"hypothesis", "behaviour " + std::to_string(i)},
                   {"feature", "behaviour " + std::to_string(i)},
                   {"direction", std::string(dir)}});
  return arr.dump();
}

}  // namespace

TEST(Tags, PhasesAndCitations) {
  auto phases = extract_phases(kTimeline);
  EXPECT_EQ(phases, (std::vector<std::string>{"S1901M", "F1901M"}));
  auto cites = extract_citations(kTimeline);
  ASSERT_EQ(cites.size(), 1u);
  EXPECT_EQ(cites[0].tag, "submit_orders");
  EXPECT_EQ(cites[0].text, "order accepted");
}

TEST(Tokens, EstimateFallsBackToWordRatio) {
  EXPECT_EQ(estimate_tokens("one two three four five six seven eight nine ten"), 13u);
  WhitespaceTokenizer tok;
  EXPECT_EQ(estimate_tokens("one two three", &tok), 3u);
  EXPECT_EQ(estimate_tokens(""), 0u);
}

TEST(SummarizeTrajectory, ParsesFixedTimeline) {
  auto client = ScriptedChatClient::sequence({kTimeline});
  auto s = summarize_trajectory(traj(0, 0), client);
  EXPECT_TRUE(s.valid);
  EXPECT_FALSE(s.truncated);
  EXPECT_EQ(s.phases.size(), 2u);
  ASSERT_EQ(s.citations.size(), 1u);
  EXPECT_TRUE(s.citations[0].resolved);
  EXPECT_NE(client.prompts()[0].find("attack Munich"), std::string::npos);
}

TEST(SummarizeTrajectory, EmptyContentIsAnError) {
  Trajectory t = traj(0, 0, "");
  for (auto& m : t.messages) m.content.clear();
  auto client = ScriptedChatClient::sequence({kTimeline});
  EXPECT_THROW(summarize_trajectory(t, client), InvalidArgument);
}

TEST(SummarizeTrajectory, MissingPhasesFlaggedAfterRetry) {
  auto client = ScriptedChatClient::sequence({"no structure here"});
  auto s = summarize_trajectory(traj(0, 0), client, {.retries = 1});
  EXPECT_FALSE(s.valid);
  EXPECT_EQ(client.calls(), 2u);
}

TEST(SummarizeTrajectory, OversizeOutputTruncatedToBudget) {
  std::string big = "<phase S1901M>";
  for (int i = 0; i < 400; ++i) big += "word ";
  big += "</phase>";
  auto client = ScriptedChatClient::sequence({big});
  auto s = summarize_trajectory(traj(0, 0), client, {.budget_tokens = 100});
  EXPECT_TRUE(s.truncated);
  EXPECT_LE(double(s.token_estimate), 1.2 * 100);
}

TEST(SummarizeTrajectory, UnresolvedCitationFlagged) {
  auto client = ScriptedChatClient::sequence(
      {"<phase S1901M><citation send_message>words never said</citation></phase>"});
  auto s = summarize_trajectory(traj(0, 0), client);
  ASSERT_EQ(s.citations.size(), 1u);
  EXPECT_FALSE(s.citations[0].resolved);
}

TEST(SummarizeBatch, ManyAndSingleSources) {
  std::vector<TrajectorySummary> many;
  for (int i = 0; i < 36; ++i) many.push_back(summary_of(traj(3, i)));
  const std::string cited = many[5].trajectory_id;
  auto client = ScriptedChatClient::sequence(
      {"Pattern: everyone attacks. <citation " + cited + ">Opens by moving</citation>"});
  auto b = summarize_batch(3, many, client);
  EXPECT_EQ(b.batch, 3);
  EXPECT_EQ(b.cited_trajectory_ids, (std::vector<std::string>{cited}));
  EXPECT_TRUE(b.unresolved.empty());

  std::vector<TrajectorySummary> one{many[0]};
  auto client1 = ScriptedChatClient::sequence({"Single source. <citation " + many[0].trajectory_id + ">x</citation>"});
  EXPECT_EQ(summarize_batch(3, one, client1).cited_trajectory_ids.size(), 1u);

  std::vector<TrajectorySummary> none;
  EXPECT_THROW(summarize_batch(3, none, client1), InvalidArgument);
}

TEST(SummarizeBatch, UnknownCitationFlagged) {
  std::vector<TrajectorySummary> one{summary_of(traj(1, 0))};
  auto client = ScriptedChatClient::sequence({"<citation batch099_group000_trajectory000_goodrun>x</citation>"});
  auto b = summarize_batch(1, one, client);
  EXPECT_TRUE(b.cited_trajectory_ids.empty());
  ASSERT_EQ(b.unresolved.size(), 1u);
  EXPECT_FALSE(b.unresolved[0].resolved);
}

TEST(ExtractHypotheses, ParsesAndTruncates) {
  HypothesisInput in;
  in.batches = {{0, "early", {}, {}}, {1, "late", {}, {}}};
  auto six = ScriptedChatClient::sequence({"Here you go:\n```json\n" + items_json(6) + "\n```"});
  auto r = extract_hypotheses(in, six);
  ASSERT_EQ(r.hypotheses.size(), 6u);
  for (const auto& h : r.hypotheses) EXPECT_EQ(h.source, HypothesisSource::llm);

  auto many = ScriptedChatClient::sequence({items_json(25)});
  auto t = extract_hypotheses(in, many);
  EXPECT_EQ(t.hypotheses.size(), 20u);
  EXPECT_FALSE(t.warnings.empty());
}

TEST(ExtractHypotheses, BadDirectionDroppedAndFailureAfterRetries) {
  HypothesisInput in;
  in.batches = {{0, "early", {}, {}}, {1, "late", {}, {}}};
  auto j = nlohmann::json::parse(items_json(2));
  j[0]["direction"] = "sideways";
  auto client = ScriptedChatClient::sequence({j.dump()});
  auto r = extract_hypotheses(in, client);
  ASSERT_EQ(r.hypotheses.size(), 1u);
  EXPECT_EQ(r.hypotheses[0].name, "Item 1");

  auto prose = ScriptedChatClient::sequence({"I have no hypotheses."});
  EXPECT_THROW(extract_hypotheses(in, prose, {.hypothesis_retries = 2}), LlmError);
  EXPECT_EQ(prose.calls(), 3u);

  HypothesisInput thin;
  thin.batches = {{0, "only", {}, {}}};
  EXPECT_THROW(extract_hypotheses(thin, prose), InvalidArgument);
}

TEST(SummarizeCorpus, EveryBatchSummarizedOnceAndDeterministic) {
  std::vector<Trajectory> ts;
  for (std::int64_t b = 0; b < 4; ++b)
    for (std::int64_t t = 0; t < 3; ++t) ts.push_back(traj(b, t));
  Corpus corpus(ts);
  auto run = [&] {
    auto client = synth::planted_summarizer_client({});
    return summarize_corpus(corpus, *client);
  };
  auto a = run();
  ASSERT_EQ(a.trajectories.size(), 12u);
  std::set<std::int64_t> batches;
  for (const auto& b : a.batches) EXPECT_TRUE(batches.insert(b.batch).second);
  EXPECT_EQ(batches, (std::set<std::int64_t>{0, 1, 2, 3}));
  auto b = run();
  for (std::size_t i = 0; i < a.batches.size(); ++i) EXPECT_EQ(a.batches[i].text, b.batches[i].text);
  for (const auto& s : a.trajectories)
    EXPECT_EQ(trajectory_summary_from_json(trajectory_summary_to_json(s)).text, s.text);
}
