#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "trajlens/rng.hpp"
#include "trajlens/synth.hpp"
#include "trajlens/validation.hpp"

using namespace trajlens;

namespace {

synth::GeneratedCorpus small_corpus() {
  WhitespaceTokenizer tok;
  auto specs = synth::make_trend_specs({.n_increasing = 2, .n_decreasing = 1, .n_flat = 1});
  synth::CorpusOptions o;
  o.n_batches = 25;
  o.groups = 1;
  o.trajs = 2;
  return synth::generate_corpus(specs, o, tok);
}

Hypothesis plain_hypothesis(std::string statement = "More frequent use of imperial language") {
  Hypothesis h;
  h.id = "H1";
  h.name = "Imperial";
  h.statement = std::move(statement);
  h.feature = h.statement;
  h.source = HypothesisSource::llm;
  return h;
}

JudgeVerdict verdict(std::string pair, std::string judge, Condition c, std::optional<Answer> a, bool correct) {
  return {std::move(pair), std::move(judge), c, a, correct};
}

}  // namespace

TEST(McNemar, HandValues) {
  EXPECT_EQ(mcnemar_exact(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(mcnemar_exact(1, 9), 22.0 / 1024.0);
  EXPECT_EQ(mcnemar_exact(5, 5), 1.0);
}

TEST(McNemar, MatchesExactFractionOracle) {
  for (std::uint64_t b = 0; b <= 31; ++b)
    for (std::uint64_t c = 0; c <= 31; ++c) {
      auto f = oracle::mcnemar_fraction(b, c);
      ASSERT_NEAR(mcnemar_exact(b, c), double(f.num) / double(f.den), 1e-13 * double(f.num) / double(f.den)) << b << "," << c;
      ASSERT_EQ(mcnemar_exact(b, c), mcnemar_exact(c, b));
    }
  for (std::uint64_t n = 1; n <= 30; ++n)
    for (std::uint64_t b = 0; b <= n; ++b) ASSERT_LE(mcnemar_exact(0, n), mcnemar_exact(b, n - b));
}

TEST(Kappa, UnanimousAndDegenerate) {
  std::vector<std::vector<Answer>> r;
  for (int i = 0; i < 10; ++i) r.push_back(std::vector<Answer>(3, i % 2 ? Answer::A : Answer::B));
  EXPECT_DOUBLE_EQ(*fleiss_kappa(r), 1.0);
  std::vector<std::vector<Answer>> same(10, std::vector<Answer>(3, Answer::A));
  EXPECT_FALSE(fleiss_kappa(same).has_value());
}

TEST(Kappa, MatchesDirectFormulaAndNullRegime) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    auto panel = synth::simulate_rater_panel(40, 3, 0.3, 0.5, seed);
    auto got = fleiss_kappa(panel);
    auto want = oracle::fleiss_kappa_direct(panel);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (got) ASSERT_NEAR(*got, *want, 1e-12);
  }
  auto random = synth::simulate_rater_panel(200, 3, 0.0, 0.5, 17);
  EXPECT_LT(std::abs(*fleiss_kappa(random)), 0.15);
}

TEST(Contingency, UpliftIdentityAndExclusion) {
  std::vector<JudgeVerdict> v{
      verdict("p1", "j", Condition::baseline, Answer::A, true),
      verdict("p1", "j", Condition::with_hypothesis, Answer::A, true),   // a
      verdict("p2", "j", Condition::baseline, Answer::A, true),
      verdict("p2", "j", Condition::with_hypothesis, Answer::B, false),  // b
      verdict("p3", "j", Condition::baseline, Answer::B, false),
      verdict("p3", "j", Condition::with_hypothesis, Answer::A, true),   // c
      verdict("p4", "j", Condition::baseline, Answer::B, false),
      verdict("p4", "j", Condition::with_hypothesis, Answer::A, true),   // c
      verdict("p5", "j", Condition::baseline, std::nullopt, false),
      verdict("p5", "j", Condition::with_hypothesis, Answer::A, true),   // abstain
      verdict("p6", "j", Condition::baseline, Answer::A, true),          // unpaired
  };
  std::uint64_t excluded = 0;
  auto t = tabulate(v, &excluded);
  EXPECT_EQ(t, (Contingency{1, 1, 2, 0}));
  EXPECT_EQ(excluded, 2u);
  EXPECT_DOUBLE_EQ(t.uplift(), t.accuracy_hypothesis() - t.accuracy_baseline());
  EXPECT_DOUBLE_EQ(t.uplift(), 0.25);
}

TEST(Significance, Rule) {
  EXPECT_TRUE(is_significant(0.1, 0.01));
  EXPECT_FALSE(is_significant(0.0, 0.01));
  EXPECT_FALSE(is_significant(-0.2, 0.001));
  EXPECT_FALSE(is_significant(0.3, 0.05));
}

TEST(Windows, ClampedAtBoundaries) {
  EXPECT_EQ(centered_window(10, 250, 1000), (SpanBounds{0, 250}));
  EXPECT_EQ(centered_window(990, 250, 1000), (SpanBounds{750, 1000}));
  EXPECT_EQ(centered_window(500, 250, 1000), (SpanBounds{375, 625}));
  EXPECT_EQ(centered_window(5, 250, 40), (SpanBounds{0, 40}));
}

TEST(DrawPairs, FiftyPairsFromDisjointRanges) {
  auto gen = small_corpus();
  WhitespaceTokenizer tok;
  auto h = plain_hypothesis();
  DrawOptions o;
  o.mode = SamplingMode::random_both;
  o.seed = 4;
  o.window_tokens = 40;
  auto r = draw_pairs(h, gen.corpus, tok, o);
  ASSERT_EQ(r.pairs.size(), 50u);
  EXPECT_EQ(r.pairs[0].class_early_range, (BatchRange{0, 5}));
  EXPECT_EQ(r.pairs[0].class_late_range, (BatchRange{20, 25}));
  int a_late = 0;
  for (const auto& p : r.pairs) {
    const auto& late = p.true_answer == Answer::A ? p.window_a : p.window_b;
    const auto& early = p.true_answer == Answer::A ? p.window_b : p.window_a;
    auto batch_of = [&](const SampleWindow& w) { return gen.corpus.find(w.trajectory_id)->key.batch; };
    EXPECT_TRUE(p.class_late_range.contains(batch_of(late)));
    EXPECT_TRUE(p.class_early_range.contains(batch_of(early)));
    for (const auto* w : {&p.window_a, &p.window_b}) {
      EXPECT_LE(w->end - w->start, 40u);
      auto total = tokenize_trajectory(*gen.corpus.find(w->trajectory_id), tok).size();
      EXPECT_EQ(w->end - w->start, std::min<std::size_t>(40, total));
    }
    a_late += p.true_answer == Answer::A;
  }
  EXPECT_GT(a_late, 10);
  EXPECT_LT(a_late, 40);
  auto again = draw_pairs(h, gen.corpus, tok, o);
  EXPECT_EQ(again.pairs, r.pairs);
}

TEST(DrawPairs, NoAnchorsFallsBack) {
  auto gen = small_corpus();
  WhitespaceTokenizer tok;
  DrawOptions o;
  o.n_pairs = 5;
  o.mode = SamplingMode::hypothesis_random;
  auto r = draw_pairs(plain_hypothesis(), gen.corpus, tok, o);
  EXPECT_EQ(r.effective_mode, SamplingMode::random_both);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(DrawPairs, AnchoredWindowsCenterOnAnchor) {
  auto gen = small_corpus();
  WhitespaceTokenizer tok;
  auto h = plain_hypothesis();
  h.source = HypothesisSource::sae_feature;
  for (const auto& t : gen.corpus)
    if (t.key.batch >= 20) h.examples.push_back({t.key.to_string(), 30u, std::nullopt});
  DrawOptions o;
  o.n_pairs = 10;
  o.window_tokens = 20;
  auto r = draw_pairs(h, gen.corpus, tok, o);
  EXPECT_EQ(r.effective_mode, SamplingMode::hypothesis_random);
  for (const auto& p : r.pairs) {
    const auto& late = p.true_answer == Answer::A ? p.window_a : p.window_b;
    EXPECT_TRUE(late.anchored);
    EXPECT_LE(late.start, 30u);
    EXPECT_GT(late.end, 30u);
  }
}

TEST(Judge, OracleAbstainAndPrompt) {
  SamplePair pair;
  pair.pair_id = "P1";
  pair.sample_a = "text a";
  pair.sample_b = "text b";
  pair.true_answer = Answer::B;
  auto oracle_client = ScriptedChatClient::sequence({R"({"answer": "B", "explanation": "late"})"});
  auto v = judge_pair(pair, nullptr, oracle_client, "j1");
  EXPECT_EQ(v.answer, Answer::B);
  EXPECT_TRUE(v.correct);
  EXPECT_EQ(v.condition, Condition::baseline);

  auto c_client = ScriptedChatClient::sequence({R"({"answer": "C"})"});
  auto abstain = judge_pair(pair, nullptr, c_client, "j1", {.retries = 2});
  EXPECT_FALSE(abstain.answer.has_value());
  EXPECT_FALSE(abstain.correct);
  EXPECT_EQ(c_client.calls(), 3u);

  auto h = plain_hypothesis("Later samples mention grand coalitions");
  auto prompt = build_judge_prompt(pair, &h);
  EXPECT_NE(prompt.find("Later samples mention grand coalitions"), std::string::npos);
  EXPECT_EQ(build_judge_prompt(pair, nullptr).find("grand coalitions"), std::string::npos);
  EXPECT_EQ(parse_judge_answer("```json\n{\"answer\": \"Sample A\"}\n```"), Answer::A);
  EXPECT_FALSE(parse_judge_answer("A").has_value());
}

TEST(Evaluate, CueJudgesImproveAndPerfectBaselineIsNotSignificant) {
  auto gen = small_corpus();
  WhitespaceTokenizer tok;
  auto h = plain_hypothesis("Increasing use of imperial edict language");
  DrawOptions o;
  o.mode = SamplingMode::random_both;
  o.window_tokens = 30;
  o.seed = 2;
  auto pairs = draw_pairs(h, gen.corpus, tok, o).pairs;
  auto truth = std::make_shared<synth::PairTruth>();
  truth->add_all(pairs);

  std::vector<std::unique_ptr<ScriptedChatClient>> clients;
  std::vector<NamedJudge> judges;
  for (int j = 0; j < 3; ++j) {
    clients.push_back(synth::scripted_judge(synth::JudgeBehavior::cue_following, truth, {"imperial"}, 10 + j));
    judges.push_back({"cue#" + std::to_string(j), clients.back().get()});
  }
  std::vector<JudgeVerdict> verdicts;
  auto r = evaluate_hypothesis(h, pairs, judges, {}, &verdicts);
  EXPECT_EQ(r.a + r.b + r.c + r.d + r.excluded_units, pairs.size() * 3);
  EXPECT_DOUBLE_EQ(r.uplift, r.accuracy_hypothesis - r.accuracy_baseline);
  EXPECT_DOUBLE_EQ(r.accuracy_hypothesis, 1.0);
  EXPECT_TRUE(r.significant);
  EXPECT_EQ(r.per_judge.size(), 3u);
  EXPECT_EQ(verdicts.size(), pairs.size() * 3 * 2);
  auto again = summarize_verdicts(h, verdicts, pairs);
  EXPECT_EQ(again.table(), r.table());
  EXPECT_EQ(validation_result_from_json(validation_result_to_json(r)).table(), r.table());

  auto oracle_judge = synth::scripted_judge(synth::JudgeBehavior::oracle, truth, {}, 1);
  NamedJudge oj[] = {{"oracle", oracle_judge.get()}};
  auto perfect = evaluate_hypothesis(h, pairs, oj);
  EXPECT_DOUBLE_EQ(perfect.accuracy_baseline, 1.0);
  EXPECT_LE(perfect.uplift, 0.0);
  EXPECT_FALSE(perfect.significant);

  auto refuser = ScriptedChatClient::sequence({"no"});
  NamedJudge rj[] = {{"refuser", &refuser}};
  EXPECT_THROW(evaluate_hypothesis(h, pairs, rj, {.retries = 0}), EvaluationError);
}

TEST(Report, HeadersAndFormatting) {
  EXPECT_EQ(significance_header(26, 29), "90% (26/29)");
  EXPECT_EQ(significance_header(9, 20), "45% (9/20)");
  EXPECT_EQ(significance_header(3, 14), "21% (3/14)");
  EXPECT_EQ(percent_rounded(1, 8), 13);
  EXPECT_EQ(format_uplift(0.53, true), "+53.0%*");
  EXPECT_EQ(format_uplift(-0.04, false), "-4.0%");
}

TEST(Report, SectionsSortedAndEmptyOmitted) {
  std::vector<ValidationResult> rs(4);
  rs[0].hypothesis_id = "B";
  rs[0].source = HypothesisSource::sae_meta;
  rs[0].uplift = 0.2;
  rs[1].hypothesis_id = "A";
  rs[1].source = HypothesisSource::sae_meta;
  rs[1].uplift = 0.2;
  rs[1].significant = true;
  rs[2].hypothesis_id = "C";
  rs[2].source = HypothesisSource::sae_meta;
  rs[2].uplift = 0.5;
  rs[3].hypothesis_id = "D";
  rs[3].source = HypothesisSource::llm;
  rs[3].uplift = -0.1;
  auto sections = uplift_sections(rs);
  ASSERT_EQ(sections.size(), 2u);
  const auto& meta = sections[0].source == "sae_meta" ? sections[0] : sections[1];
  ASSERT_EQ(meta.rows.size(), 3u);
  EXPECT_EQ(meta.rows[0]->hypothesis_id, "C");
  EXPECT_EQ(meta.rows[1]->hypothesis_id, "A");
  EXPECT_EQ(meta.rows[2]->hypothesis_id, "B");
  EXPECT_EQ(meta.significant, 1u);
  for (const auto& s : sections) EXPECT_NE(s.source, "sae_feature");
  auto md = uplift_report_markdown(rs);
  EXPECT_EQ(md.find("sae_feature"), std::string::npos);
  EXPECT_NE(uplift_report_csv(rs).find("hypothesis_id"), std::string::npos);
}
