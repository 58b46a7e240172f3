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
#include "trajlens/scoring.hpp"
#include "trajlens/store.hpp"

namespace trajlens {

inline constexpr std::string_view kOpenMark = "⟪";   // ⟪
inline constexpr std::string_view kCloseMark = "⟫";  // ⟫

struct Snippet {
  std::string trajectory_id;
  std::uint32_t center_pos = 0;
  float value = 0.0f;
  std::size_t start = 0;  // token range shown
  std::size_t end = 0;
  std::vector<std::uint32_t> marked;  // positions wrapped in marks
  std::string text;
};

/// Renders the feature's top activations as text windows of `context_tokens`
/// on each side, with activating tokens wrapped in ⟪...⟫. An activation that
/// falls inside an already rendered window is marked there instead of getting
/// its own snippet. Ordered by activation value.
std::vector<Snippet> render_examples(std::uint32_t feature_id, const FeatureIndex& index,
                                     const StoreMeta& meta, const Corpus& corpus,
                                     const Tokenizer& tokenizer, std::size_t n_examples = 10,
                                     std::size_t context_tokens = 32);

struct FeatureExplanation {
  std::uint32_t feature_id = 0;
  std::string token_pattern;
  std::string context_pattern;
  std::string behavior_insight;
  int interestingness = 0;
  int feature_coherence = 0;
  int context_coherence = 0;
  std::optional<int> explanation_confidence;
  friend bool operator==(const FeatureExplanation&, const FeatureExplanation&) = default;
};

nlohmann::ordered_json explanation_to_json(const FeatureExplanation& e);
FeatureExplanation explanation_from_json(const nlohmann::json& j);

std::string build_autointerp_prompt(std::uint32_t feature_id, double score,
                                    std::span<const Snippet> snippets,
                                    const prompts::PromptLibrary& library = prompts::PromptLibrary::builtin());

/// Parses an autointerp reply. Ratings outside [1,5] or missing required
/// fields throw ParseError; values are never clamped.
FeatureExplanation parse_explanation(std::uint32_t feature_id, std::string_view reply);

struct AutointerpOptions {
  int retries = 2;
  std::size_t concurrency = 4;
  const prompts::PromptLibrary* library = nullptr;
};

/// Throws InterpError when the reply is unusable after all retries.
FeatureExplanation autointerp_feature(std::uint32_t feature_id, double score,
                                      std::span<const Snippet> snippets, ChatClient& client,
                                      const AutointerpOptions& options = {});

struct AutointerpRequest {
  std::uint32_t feature_id = 0;
  double score = 0.0;
  std::vector<Snippet> snippets;
};

struct InterpFailure {
  std::uint32_t feature_id = 0;
  std::string reason;
};

struct AutointerpBatch {
  std::vector<FeatureExplanation> explanations;  // request order, failures omitted
  std::vector<InterpFailure> failures;
};

AutointerpBatch autointerp_features(std::span<const AutointerpRequest> requests, ChatClient& client,
                                    const AutointerpOptions& options = {});

/// Feature ids with interestingness >= threshold; `bypass` keeps everything.
std::vector<std::uint32_t> filter_interesting(std::span<const FeatureExplanation> explanations,
                                              int threshold = 3, bool bypass = false);

enum class ScoreDirection { positive, negative };
std::string_view to_string(ScoreDirection d);

struct MetaFeature {
  std::string name;
  ScoreDirection direction = ScoreDirection::positive;
  std::string feature_description;
  std::string hypothesis;
  std::vector<std::uint32_t> member_feature_ids;
  friend bool operator==(const MetaFeature&, const MetaFeature&) = default;
};

nlohmann::ordered_json meta_feature_to_json(const MetaFeature& m);
MetaFeature meta_feature_from_json(const nlohmann::json& j);

struct MetaInput {
  FeatureExplanation explanation;
  double score = 0.0;  // best-|score| for the feature; its sign is the direction
  ScoreDirection direction() const noexcept {
    return score < 0 ? ScoreDirection::negative : ScoreDirection::positive;
  }
};

struct MetaGroupOptions {
  std::string prediction_problem =
      "Distinguish agent outputs from early training batches versus late training batches.";
  std::string positive_prefix = "Increases with training steps";
  std::string negative_prefix = "Decreases with training steps";
  int retries = 2;
  const prompts::PromptLibrary* library = nullptr;
};

std::string build_meta_prompt(std::span<const MetaInput> survivors, const MetaGroupOptions& options);

struct ParsedCluster {
  std::string name;
  std::string direction;
  std::string feature;
  std::string hypothesis;
  std::vector<std::uint32_t> feature_ids;
};

std::vector<ParsedCluster> parse_meta_response(std::string_view reply);

struct MetaGroupResult {
  std::vector<MetaFeature> clusters;
  Warnings warnings;
};

/// Clusters referencing unknown features or mixing score directions are
/// dropped with a warning; zero valid clusters after retries throws
/// MetaGroupError.
MetaGroupResult meta_group(std::span<const MetaInput> survivors, ChatClient& client,
                           const MetaGroupOptions& options = {});

/// Hypothesis for a meta-feature on the training-step target (or the class
/// target when `class_target` is set).
Hypothesis hypothesis_from_meta(const MetaFeature& meta, std::string id, bool class_target = false);
Hypothesis hypothesis_from_feature(const FeatureExplanation& e, double score, std::string id,
                                   bool class_target = false);

struct InterventionEntry {
  MetaFeature meta;
  std::vector<std::string> examples;
};

/// Numbered sections (heading, description, examples) in input order. Throws
/// InvalidArgument naming the meta-feature that has too few examples.
std::string build_intervention_prompt(std::span<const InterventionEntry> entries,
                                      std::size_t examples_per_feature = 3,
                                      std::string_view power = "France",
                                      const prompts::PromptLibrary& library = prompts::PromptLibrary::builtin());

}  // namespace trajlens
