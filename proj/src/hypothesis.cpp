#include "trajlens/hypothesis.hpp"
#include "trajlens/common.hpp"

#include <cstdio>

namespace trajlens {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(HypothesisDirection d) {
  switch (d) {
    case HypothesisDirection::increasing: return "increasing";
    case HypothesisDirection::decreasing: return "decreasing";
    case HypothesisDirection::positive_class: return "positive_class";
    case HypothesisDirection::negative_class: return "negative_class";
  }
  return "increasing";
}

std::string_view to_string(HypothesisSource s) {
  switch (s) {
    case HypothesisSource::llm: return "llm";
    case HypothesisSource::sae_feature: return "sae_feature";
    case HypothesisSource::sae_meta: return "sae_meta";
  }
  return "llm";
}

std::optional<HypothesisDirection> parse_direction(std::string_view s) {
  const std::string v = ascii_lower(trim(s));
  if (v == "increasing" || v == "positive") return HypothesisDirection::increasing;
  if (v == "decreasing" || v == "negative") return HypothesisDirection::decreasing;
  if (v == "positive_class" || v == "positive-class") return HypothesisDirection::positive_class;
  if (v == "negative_class" || v == "negative-class") return HypothesisDirection::negative_class;
  return std::nullopt;
}

std::optional<HypothesisSource> parse_source(std::string_view s) {
  const std::string v = ascii_lower(trim(s));
  if (v == "llm") return HypothesisSource::llm;
  if (v == "sae_feature" || v == "sae-feature") return HypothesisSource::sae_feature;
  if (v == "sae_meta" || v == "sae-meta") return HypothesisSource::sae_meta;
  return std::nullopt;
}

std::string direction_prefix(HypothesisDirection d) {
  switch (d) {
    case HypothesisDirection::increasing: return "Increases with training steps";
    case HypothesisDirection::decreasing: return "Decreases with training steps";
    case HypothesisDirection::positive_class: return "More common in the positive class";
    case HypothesisDirection::negative_class: return "More common in the negative class";
  }
  return "";
}

ordered_json hypothesis_to_json(const Hypothesis& h) {
  ordered_json j;
  j["id"] = h.id;
  j["name"] = h.name;
  j["hypothesis"] = h.statement;
  j["feature"] = h.feature;
  j["direction"] = to_string(h.direction);
  j["source"] = h.source ? ordered_json(to_string(*h.source)) : ordered_json(nullptr);
  j["feature_ids"] = h.feature_ids;
  ordered_json ex = ordered_json::array();
  for (const auto& a : h.examples) {
    ordered_json e;
    e["trajectory"] = a.trajectory_id;
    if (a.token_pos) e["token_pos"] = *a.token_pos;
    if (a.quote) e["quote"] = *a.quote;
    ex.push_back(std::move(e));
  }
  j["examples"] = std::move(ex);
  return j;
}

Hypothesis hypothesis_from_json(const json& j, std::size_t ordinal) {
  if (!j.is_object()) throw ParseError("hypothesis is not an object");
  Hypothesis h;
  auto str = [&](const char* k) -> std::string {
    auto it = j.find(k);
    if (it == j.end() || it->is_null()) return "";
    if (!it->is_string()) throw ParseError(std::string("hypothesis field '") + k + "' must be a string");
    return it->get<std::string>();
  };
  h.name = str("name");
  if (h.name.empty()) throw ParseError("hypothesis without a name");
  auto dir = parse_direction(str("direction"));
  if (!dir) throw ParseError("hypothesis '" + h.name + "' has invalid direction '" + str("direction") + "'");
  h.direction = *dir;
  h.feature = str("feature");
  h.statement = str("hypothesis");
  if (h.feature.empty() && h.statement.empty())
    throw ParseError("hypothesis '" + h.name + "' has neither feature nor hypothesis text");
  if (h.statement.empty()) h.statement = direction_prefix(h.direction) + ": " + h.feature;
  if (h.feature.empty()) h.feature = h.statement;
  h.id = str("id");
  if (h.id.empty()) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "H%03zu", ordinal);
    h.id = buf;
  }
  if (auto s = str("source"); !s.empty()) {
    h.source = parse_source(s);
    if (!h.source) throw ParseError("hypothesis '" + h.name + "' has invalid source '" + s + "'");
  }
  if (j.contains("feature_ids")) h.feature_ids = j.at("feature_ids").get<std::vector<std::uint32_t>>();
  if (j.contains("examples"))
    for (const auto& e : j.at("examples")) {
      Anchor a;
      a.trajectory_id = e.at("trajectory").get<std::string>();
      if (e.contains("token_pos")) a.token_pos = e.at("token_pos").get<std::uint32_t>();
      if (e.contains("quote")) a.quote = e.at("quote").get<std::string>();
      h.examples.push_back(std::move(a));
    }
  return h;
}

std::string hypotheses_to_json_text(const std::vector<Hypothesis>& hs) {
  ordered_json arr = ordered_json::array();
  for (const auto& h : hs) arr.push_back(hypothesis_to_json(h));
  return arr.dump(2) + "\n";
}

std::vector<Hypothesis> hypotheses_from_json_text(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("hypotheses: ") + e.what());
  }
  if (j.is_object() && j.contains("hypotheses")) j = j.at("hypotheses");
  if (!j.is_array()) throw ParseError("hypotheses: expected a JSON array");
  std::vector<Hypothesis> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(hypothesis_from_json(j[i], i + 1));
  return out;
}

}  // namespace trajlens
