#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajlens/corpus.hpp"
#include "trajlens/llm.hpp"

namespace trajlens {

enum class ActionKind { assistant_message, write_diary, send_message };
std::string_view to_string(ActionKind k);

struct ActionDocument {
  std::string trajectory_id;
  ActionKind kind = ActionKind::assistant_message;
  std::string text;
  std::int64_t batch = 0;
  std::string phase;  // game phase in effect when the action was taken, if known
};

/// Game phase markers such as S1901M or F1905R.
inline constexpr const char* kPhasePattern = R"(\b[SFW]\d{4}[MRA]\b)";

/// Agent actions of each trajectory: plain assistant messages plus
/// write_diary and send_message tool calls (either as tool-named assistant
/// messages or entries of a `tool_calls` array). Empty texts are skipped.
std::vector<ActionDocument> extract_actions(const Corpus& corpus);

/// Case-insensitive whole-word (or whole-phrase) occurrences. With
/// `stemming`, a trailing "s" or "es" on the last word also matches.
std::size_t count_keyword(std::string_view text, std::string_view keyword, bool stemming = false);

struct KeywordPoint {
  std::int64_t batch = 0;
  std::size_t trajectories = 0;
  double raw = 0.0;           // mean matches per trajectory
  double per_token = 0.0;     // mean of matches / action tokens
  double per_document = 0.0;  // mean of matches / action count
};

/// Per batch means over trajectories of keyword counts across all actions.
std::vector<KeywordPoint> keyword_trend(std::span<const ActionDocument> docs,
                                        std::span<const std::string> keywords, bool stemming = false);

/// Deterministic bag-of-words embedder: token counts hashed into `dim` buckets.
class HashingEmbedder final : public EmbeddingClient {
 public:
  explicit HashingEmbedder(std::size_t dim = 512) : dim_(dim) {}
  std::vector<float> embed(std::string_view text) override;

 private:
  std::size_t dim_;
};

/// Content-addressed (sha256) memo over another client; safe for concurrent use.
class EmbeddingCache final : public EmbeddingClient {
 public:
  explicit EmbeddingCache(EmbeddingClient& inner) : inner_(inner) {}
  std::vector<float> embed(std::string_view text) override;
  std::size_t size() const;
  std::size_t misses() const noexcept { return misses_; }

 private:
  EmbeddingClient& inner_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<float>> cache_;
  std::size_t misses_ = 0;
};

/// Cosine similarity; 0 when either vector is zero.
double cosine(std::span<const float> a, std::span<const float> b);

struct EmbeddingPoint {
  std::int64_t batch = 0;
  std::size_t documents = 0;
  double mean_cosine = 0.0;
};

struct EmbeddingTrend {
  std::vector<EmbeddingPoint> points;
  Warnings warnings;
};

/// Mean cosine similarity between the label and each document, per batch.
/// Documents whose embedding fails are skipped with a warning.
EmbeddingTrend embedding_trend(std::span<const ActionDocument> docs, std::string_view label,
                               EmbeddingClient& client, std::size_t concurrency = 4);

/// A per-trajectory counting rule: `re:<regex>` counts regex matches over the
/// agent's actions; `dup:<kind>` counts actions of that kind whose normalized
/// text repeats an earlier one within the same game phase. A bare pattern is
/// treated as a regex. Invalid regexes throw InvalidArgument at construction.
class CountingRule {
 public:
  explicit CountingRule(std::string spec);
  std::size_t count(std::span<const ActionDocument> trajectory_docs) const;
  const std::string& spec() const noexcept { return spec_; }

 private:
  std::string spec_;
  std::optional<std::regex> regex_;
  std::optional<ActionKind> dup_kind_;
};

struct BatchMeans {
  std::int64_t batch = 0;
  std::size_t trajectories = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
};

struct CooccurrenceResult {
  std::vector<std::string> trajectory_ids;
  std::vector<std::int64_t> batches;  // per trajectory
  std::vector<std::size_t> counts_a;
  std::vector<std::size_t> counts_b;
  std::vector<BatchMeans> per_batch;
  std::optional<double> correlation;  // spearman of the per-batch means
};

/// Counts both rules per trajectory, averages per batch and correlates the
/// two batch series.
CooccurrenceResult regex_cooccurrence(const Corpus& corpus, const CountingRule& a, const CountingRule& b);

std::string keyword_trend_csv(std::span<const KeywordPoint> points);
std::string embedding_trend_csv(std::span<const EmbeddingPoint> points);
std::string cooccurrence_csv(const CooccurrenceResult& r);

}  // namespace trajlens
