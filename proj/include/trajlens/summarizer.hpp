#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajlens/corpus.hpp"
#include "trajlens/hypothesis.hpp"
#include "trajlens/llm.hpp"
#include "trajlens/prompts.hpp"

namespace trajlens {

struct Citation {
  std::string tag;  // tool name or trajectory id
  std::string text;
  bool resolved = true;
  friend bool operator==(const Citation&, const Citation&) = default;
};

/// All `<citation TAG>text</citation>` spans, in order.
std::vector<Citation> extract_citations(std::string_view text);
/// Names of `<phase NAME>...</phase>` blocks, in order.
std::vector<std::string> extract_phases(std::string_view text);

/// Tokenizer count when available, else ceil(words * 1.3).
std::size_t estimate_tokens(std::string_view text, const Tokenizer* tokenizer = nullptr);

/// Plain-text transcript used as summarizer input.
std::string render_transcript(const Trajectory& t);

struct SummarizerOptions {
  std::size_t budget_tokens = 10000;
  std::size_t batch_target_words = 10000;
  int retries = 1;            // extra attempts when phase tags are missing
  int hypothesis_retries = 2;
  std::size_t concurrency = 4;
  const Tokenizer* tokenizer = nullptr;
  const prompts::PromptLibrary* library = nullptr;
  std::string high_label = "high_reward";
  std::string low_label = "low_reward";
};

struct TrajectorySummary {
  std::string trajectory_id;
  std::int64_t batch = 0;
  std::string text;
  std::size_t token_estimate = 0;
  std::vector<std::string> phases;
  std::vector<Citation> citations;
  bool valid = true;       // phase tags present
  bool truncated = false;  // output exceeded the budget slack and was cut
};

TrajectorySummary summarize_trajectory(const Trajectory& t, ChatClient& client,
                                       const SummarizerOptions& options = {});

struct BatchSummary {
  std::int64_t batch = 0;
  std::string text;
  std::vector<std::string> cited_trajectory_ids;  // resolved, first-seen order
  std::vector<Citation> unresolved;
};

BatchSummary summarize_batch(std::int64_t batch, std::span<const TrajectorySummary> summaries,
                             ChatClient& client, const SummarizerOptions& options = {});

enum class Rubric { training, reward_comparison };

struct HypothesisInput {
  Rubric rubric = Rubric::training;
  std::vector<BatchSummary> batches;     // training rubric, ordered by batch
  std::vector<TrajectorySummary> high;   // reward rubric
  std::vector<TrajectorySummary> low;
};

struct HypothesisExtraction {
  std::vector<Hypothesis> hypotheses;
  Warnings warnings;
};

/// Hypotheses parsed from the reply's JSON array; invalid items are dropped,
/// more than 20 are truncated. Throws LlmError if no JSON array with a valid
/// item arrives within the retries.
HypothesisExtraction extract_hypotheses(const HypothesisInput& input, ChatClient& client,
                                        const SummarizerOptions& options = {});

struct CorpusSummaries {
  std::vector<TrajectorySummary> trajectories;  // corpus order
  std::vector<BatchSummary> batches;            // batch order
  Warnings warnings;
};

/// Summarizes every trajectory (bounded concurrency), then each batch in index order.
CorpusSummaries summarize_corpus(const Corpus& corpus, ChatClient& client,
                                 const SummarizerOptions& options = {});

nlohmann::ordered_json trajectory_summary_to_json(const TrajectorySummary& s);
TrajectorySummary trajectory_summary_from_json(const nlohmann::json& j);
nlohmann::ordered_json batch_summary_to_json(const BatchSummary& s);
BatchSummary batch_summary_from_json(const nlohmann::json& j);

}  // namespace trajlens
