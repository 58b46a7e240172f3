#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajlens/corpus.hpp"
#include "trajlens/hypothesis.hpp"
#include "trajlens/llm.hpp"
#include "trajlens/prompts.hpp"
#include "trajlens/store.hpp"

namespace trajlens {

enum class SamplingMode { hypothesis_random, random_both };
enum class Answer { A, B };
enum class Condition { baseline, with_hypothesis };

std::string_view to_string(SamplingMode m);
std::string_view to_string(Answer a);
std::string_view to_string(Condition c);
SamplingMode parse_sampling_mode(std::string_view s);

/// Half-open batch range [lo, hi).
struct BatchRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  bool contains(std::int64_t b) const noexcept { return b >= lo && b < hi; }
  bool overlaps(const BatchRange& o) const noexcept { return lo < o.hi && o.lo < hi; }
  friend bool operator==(const BatchRange&, const BatchRange&) = default;
};

/// First `n` and last `n` batches of the corpus.
std::pair<BatchRange, BatchRange> default_class_ranges(const Corpus& corpus, std::int64_t n = 5);

struct SampleWindow {
  std::string trajectory_id;
  std::size_t start = 0;
  std::size_t end = 0;
  std::string text;
  bool anchored = false;
  friend bool operator==(const SampleWindow&, const SampleWindow&) = default;
};

struct SamplePair {
  std::string pair_id;
  std::string sample_a;
  std::string sample_b;
  Answer true_answer = Answer::A;  // letter of the late (second-class) sample
  BatchRange class_early_range;
  BatchRange class_late_range;
  SamplingMode sampling_mode = SamplingMode::random_both;
  SampleWindow window_a;
  SampleWindow window_b;
  friend bool operator==(const SamplePair&, const SamplePair&) = default;
};

struct DrawOptions {
  std::size_t n_pairs = 50;
  SamplingMode mode = SamplingMode::hypothesis_random;
  std::size_t window_tokens = 250;
  std::optional<BatchRange> early;  // default: first 5 batches
  std::optional<BatchRange> late;   // default: last 5 batches
  std::uint64_t seed = 0;
};

struct DrawResult {
  std::vector<SamplePair> pairs;
  SamplingMode effective_mode = SamplingMode::random_both;
  Warnings warnings;
};

/// Token window of `width` tokens centered on `center`, shifted to stay
/// inside [0, total).
SpanBounds centered_window(std::size_t center, std::size_t width, std::size_t total);

/// Draws paired samples, one per class range, with the late sample's letter
/// randomized. In hypothesis_random mode the positive-class window is centered
/// on one of the hypothesis' anchors; without usable anchors the draw falls
/// back to random_both with a warning.
DrawResult draw_pairs(const Hypothesis& hypothesis, const Corpus& corpus, const Tokenizer& tokenizer,
                      const DrawOptions& options);

/// Anchors for SAE hypotheses: top activations of the given features.
std::vector<Anchor> anchors_from_index(std::span<const std::uint32_t> feature_ids,
                                       const FeatureIndex& index, const StoreMeta& meta,
                                       std::size_t per_feature = 50);

struct JudgeOptions {
  std::string question =
      "One sample was produced early in training and the other late in training. "
      "Which sample was produced later in training?";
  int retries = 2;
  std::size_t concurrency = 4;
  const prompts::PromptLibrary* library = nullptr;
};

std::string build_judge_prompt(const SamplePair& pair, const Hypothesis* hypothesis,
                               const JudgeOptions& options = {});

struct JudgeVerdict {
  std::string pair_id;
  std::string judge_id;
  Condition condition = Condition::baseline;
  std::optional<Answer> answer;  // nullopt: abstained
  bool correct = false;
  friend bool operator==(const JudgeVerdict&, const JudgeVerdict&) = default;
};

/// Parses {"answer": "A"|"B", ...}. nullopt for anything else.
std::optional<Answer> parse_judge_answer(std::string_view reply);

JudgeVerdict judge_pair(const SamplePair& pair, const Hypothesis* hypothesis, ChatClient& client,
                        std::string judge_id, const JudgeOptions& options = {});

/// Two-sided exact McNemar p-value on the discordant counts.
double mcnemar_exact(std::uint64_t b, std::uint64_t c);

/// Fleiss' kappa over a pairs x raters matrix of answers. nullopt when the
/// expected agreement is 1 (a single category everywhere).
std::optional<double> fleiss_kappa(const std::vector<std::vector<Answer>>& ratings);

/// a: both correct, b: baseline only, c: hypothesis only, d: neither.
struct Contingency {
  std::uint64_t a = 0, b = 0, c = 0, d = 0;
  std::uint64_t n() const noexcept { return a + b + c + d; }
  double accuracy_baseline() const { return n() ? double(a + b) / double(n()) : 0.0; }
  double accuracy_hypothesis() const { return n() ? double(a + c) / double(n()) : 0.0; }
  double uplift() const { return n() ? (double(c) - double(b)) / double(n()) : 0.0; }
  friend bool operator==(const Contingency&, const Contingency&) = default;
};

/// Pairs baseline and hypothesis verdicts by (pair, judge); units where
/// either side abstained, or where one side is missing, are skipped and
/// counted in `excluded`.
Contingency tabulate(std::span<const JudgeVerdict> verdicts, std::uint64_t* excluded = nullptr);

struct JudgeBreakdown {
  std::string judge_id;
  Contingency table;
  double p_value = 1.0;
};

struct ValidationResult {
  std::string hypothesis_id;
  std::string hypothesis_name;
  std::optional<HypothesisSource> source;
  std::uint64_t a = 0, b = 0, c = 0, d = 0;
  double accuracy_baseline = 0.0;
  double accuracy_hypothesis = 0.0;
  double uplift = 0.0;
  double p_value = 1.0;
  bool significant = false;
  std::uint64_t excluded_units = 0;
  std::optional<double> kappa_baseline;
  std::optional<double> kappa_hypothesis;
  std::vector<JudgeBreakdown> per_judge;

  Contingency table() const { return {a, b, c, d}; }
};

/// significant iff uplift > 0 and p < 0.05.
bool is_significant(double uplift, double p_value);

struct NamedJudge {
  std::string id;
  ChatClient* client = nullptr;
};

/// Judges every pair under both conditions with every judge and pools the
/// (pair x judge) units. Throws EvaluationError when no usable unit remains.
ValidationResult evaluate_hypothesis(const Hypothesis& hypothesis, std::span<const SamplePair> pairs,
                                     std::span<const NamedJudge> judges,
                                     const JudgeOptions& options = {},
                                     std::vector<JudgeVerdict>* verdicts_out = nullptr);

/// Builds a result from verdicts (used by evaluate_hypothesis and for
/// re-tabulating stored verdicts).
ValidationResult summarize_verdicts(const Hypothesis& hypothesis, std::span<const JudgeVerdict> verdicts,
                                    std::span<const SamplePair> pairs);

nlohmann::ordered_json validation_result_to_json(const ValidationResult& r);
ValidationResult validation_result_from_json(const nlohmann::json& j);

struct UpliftSection {
  std::string source;  // "sae_meta", "sae_feature", "llm", or "unknown"
  std::size_t significant = 0;
  std::size_t total = 0;
  std::vector<const ValidationResult*> rows;  // uplift descending, then id
};

/// Integer percent, rounded half up (26/29 -> 90).
int percent_rounded(std::size_t k, std::size_t n);
std::string significance_header(std::size_t k, std::size_t n);  // "90% (26/29)"
/// "+53.0%", with a trailing asterisk when significant.
std::string format_uplift(double uplift, bool significant);
std::string format_p(double p);

std::vector<UpliftSection> uplift_sections(std::span<const ValidationResult> results);
std::string uplift_report_csv(std::span<const ValidationResult> results);
nlohmann::ordered_json uplift_report_json(std::span<const ValidationResult> results);
std::string uplift_report_markdown(std::span<const ValidationResult> results);

}  // namespace trajlens
