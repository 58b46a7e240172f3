#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace trajlens {

enum class HypothesisDirection { increasing, decreasing, positive_class, negative_class };
enum class HypothesisSource { llm, sae_feature, sae_meta };

std::string_view to_string(HypothesisDirection d);
std::string_view to_string(HypothesisSource s);
/// Accepts the canonical names plus "positive"/"negative" (training direction).
std::optional<HypothesisDirection> parse_direction(std::string_view s);
std::optional<HypothesisSource> parse_source(std::string_view s);

/// Where a hypothesis was observed: a token position (SAE sources) or a
/// quoted citation (summarizer sources) within one trajectory.
struct Anchor {
  std::string trajectory_id;
  std::optional<std::uint32_t> token_pos;
  std::optional<std::string> quote;
  friend bool operator==(const Anchor&, const Anchor&) = default;
};

struct Hypothesis {
  std::string id;
  std::string name;
  HypothesisDirection direction = HypothesisDirection::increasing;
  std::string feature;    // behavior description without direction
  std::string statement;  // text shown to judges, direction prefix included
  std::optional<HypothesisSource> source;
  std::vector<std::uint32_t> feature_ids;
  std::vector<Anchor> examples;

  /// True when the positive class is the later / second class.
  bool positive_is_late() const noexcept {
    return direction == HypothesisDirection::increasing ||
           direction == HypothesisDirection::positive_class;
  }
  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

/// Default direction prefix used when composing statements.
std::string direction_prefix(HypothesisDirection d);

/// JSON in the hypothesis schema {name, hypothesis, feature, direction,
/// source} plus id, feature_ids and examples.
nlohmann::ordered_json hypothesis_to_json(const Hypothesis& h);
Hypothesis hypothesis_from_json(const nlohmann::json& j, std::size_t ordinal = 0);
std::string hypotheses_to_json_text(const std::vector<Hypothesis>& hs);
std::vector<Hypothesis> hypotheses_from_json_text(std::string_view text);

}  // namespace trajlens
