#include "trajlens/interp.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>
#include <set>

namespace trajlens {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<Snippet> render_examples(std::uint32_t feature_id, const FeatureIndex& index, const StoreMeta& meta,
                                     const Corpus& corpus, const Tokenizer& tokenizer, std::size_t n_examples,
                                     std::size_t context_tokens) {
  std::vector<Snippet> out;
  if (feature_id >= index.n_features() || n_examples == 0) return out;
  std::map<std::uint32_t, TokenizedTrajectory> cache;
  std::vector<std::uint32_t> owner;  // trajectory index per snippet
  for (const auto& ex : top_examples(index, meta, feature_id, index.depth())) {
    bool merged = false;
    for (std::size_t s = 0; s < out.size(); ++s) {
      if (owner[s] == ex.trajectory && ex.token_pos >= out[s].start && ex.token_pos < out[s].end) {
        auto& m = out[s].marked;
        if (std::find(m.begin(), m.end(), ex.token_pos) == m.end()) m.push_back(ex.token_pos);
        merged = true;
        break;
      }
    }
    if (merged || out.size() >= n_examples) continue;
    auto it = cache.find(ex.trajectory);
    if (it == cache.end()) {
      const Trajectory* t = corpus.find(ex.trajectory_key);
      if (!t) throw InvalidArgument("trajectory " + ex.trajectory_key.to_string() + " is not in the corpus");
      it = cache.emplace(ex.trajectory, tokenize_trajectory(*t, tokenizer)).first;
    }
    const std::size_t total = it->second.size();
    if (ex.token_pos >= total)
      throw InvalidArgument("token " + std::to_string(ex.token_pos) + " outside " + ex.trajectory_key.to_string());
    Snippet s;
    s.trajectory_id = ex.trajectory_key.to_string();
    s.center_pos = ex.token_pos;
    s.value = ex.value;
    s.start = ex.token_pos >= context_tokens ? ex.token_pos - context_tokens : 0;
    s.end = std::min(total, static_cast<std::size_t>(ex.token_pos) + context_tokens + 1);
    s.marked.push_back(ex.token_pos);
    out.push_back(std::move(s));
    owner.push_back(ex.trajectory);
  }
  for (std::size_t s = 0; s < out.size(); ++s) {
    auto pieces = cache.at(owner[s]).pieces;
    std::sort(out[s].marked.begin(), out[s].marked.end());
    for (auto pos : out[s].marked)
      pieces[pos] = std::string(kOpenMark) + pieces[pos] + std::string(kCloseMark);
    out[s].text = tokenizer.join(pieces, out[s].start, out[s].end);
  }
  return out;
}

ordered_json explanation_to_json(const FeatureExplanation& e) {
  ordered_json j;
  j["feature_id"] = e.feature_id;
  j["token_pattern"] = e.token_pattern;
  j["context_pattern"] = e.context_pattern;
  j["behavior_insight"] = e.behavior_insight;
  j["interestingness"] = e.interestingness;
  j["feature_coherence"] = e.feature_coherence;
  j["context_coherence"] = e.context_coherence;
  j["explanation_confidence"] =
      e.explanation_confidence ? ordered_json(*e.explanation_confidence) : ordered_json(nullptr);
  return j;
}

FeatureExplanation explanation_from_json(const json& j) {
  FeatureExplanation e;
  e.feature_id = j.at("feature_id").get<std::uint32_t>();
  e.token_pattern = j.at("token_pattern").get<std::string>();
  e.context_pattern = j.at("context_pattern").get<std::string>();
  e.behavior_insight = j.value("behavior_insight", "");
  e.interestingness = j.at("interestingness").get<int>();
  e.feature_coherence = j.at("feature_coherence").get<int>();
  e.context_coherence = j.at("context_coherence").get<int>();
  if (j.contains("explanation_confidence") && !j.at("explanation_confidence").is_null())
    e.explanation_confidence = j.at("explanation_confidence").get<int>();
  return e;
}

namespace {

std::string fmt_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.3f", v);
  return buf;
}

const prompts::PromptLibrary& lib_or_builtin(const prompts::PromptLibrary* lib) {
  return lib ? *lib : prompts::PromptLibrary::builtin();
}

std::string strip_markup(std::string_view line) {
  std::string out;
  for (char c : line)
    if (c != '*' && c != '`') out.push_back(c);
  std::string_view v = trim(out);
  while (!v.empty() && (v.front() == '#' || v.front() == '-')) v = trim(v.substr(1));
  return std::string(v);
}

std::vector<std::string> lines_of(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.emplace_back(line);
    pos = nl + 1;
  }
  return out;
}

// "Key: value" with a case-insensitive key; returns the value.
std::optional<std::string> field_value(const std::string& line, std::string_view key) {
  if (!starts_with_ci(line, key)) return std::nullopt;
  std::string_view rest = std::string_view(line).substr(key.size());
  rest = trim(rest);
  if (rest.empty() || rest.front() != ':') return std::nullopt;
  return std::string(trim(rest.substr(1)));
}

int parse_rating(const std::string& name, const std::string& value) {
  std::string_view v = trim(value);
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw ParseError("rating " + name + " is not an integer: '" + value + "'");
  const int r = std::stoi(std::string(v));
  if (r < 1 || r > 5) throw ParseError("rating " + name + "=" + std::to_string(r) + " outside [1,5]");
  return r;
}

}  // namespace

std::string build_autointerp_prompt(std::uint32_t feature_id, double score, std::span<const Snippet> snippets,
                                    const prompts::PromptLibrary& library) {
  std::string examples;
  for (std::size_t i = 0; i < snippets.size(); ++i) {
    char head[160];
    std::snprintf(head, sizeof head, "Example %zu (activation %.3f, %s):\n", i + 1,
                  static_cast<double>(snippets[i].value), snippets[i].trajectory_id.c_str());
    examples += head;
    examples += snippets[i].text;
    examples += "\n\n";
  }
  while (!examples.empty() && examples.back() == '\n') examples.pop_back();
  return library.render("autointerp", {{"feature_id", std::to_string(feature_id)},
                                       {"score", fmt_score(score)},
                                       {"examples", examples}});
}

FeatureExplanation parse_explanation(std::uint32_t feature_id, std::string_view reply) {
  static const std::regex header(R"((?:F(\d+))?[^()\n]*\(([^()\n]*Interestingness[^()\n]*)\))",
                                 std::regex::icase);
  const auto lines = lines_of(reply);
  std::optional<std::size_t> chosen, anonymous;
  std::vector<std::size_t> headers;
  std::map<std::size_t, std::string> params;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::smatch m;
    const std::string clean = strip_markup(lines[i]);
    if (!std::regex_search(clean, m, header)) continue;
    headers.push_back(i);
    params[i] = m[2].str();
    if (m[1].matched) {
      if (!chosen && std::stoul(m[1].str()) == feature_id) chosen = i;
    } else if (!anonymous) {
      anonymous = i;
    }
  }
  if (!chosen) chosen = anonymous;
  if (!chosen) {
    if (!headers.empty()) throw ParseError("reply describes a different feature than F" + std::to_string(feature_id));
    throw ParseError("no rating header in reply");
  }
  FeatureExplanation e;
  e.feature_id = feature_id;
  bool have_i = false, have_fc = false, have_cc = false;
  std::string plist = params[*chosen];
  std::size_t pos = 0;
  while (pos < plist.size()) {
    auto comma = plist.find(',', pos);
    if (comma == std::string::npos) comma = plist.size();
    std::string item(trim(std::string_view(plist).substr(pos, comma - pos)));
    pos = comma + 1;
    auto eq = item.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = ascii_lower(trim(std::string_view(item).substr(0, eq)));
    const std::string val(trim(std::string_view(item).substr(eq + 1)));
    if (key == "interestingness") {
      e.interestingness = parse_rating("Interestingness", val);
      have_i = true;
    } else if (key == "fc" || key == "feature coherence") {
      e.feature_coherence = parse_rating("FC", val);
      have_fc = true;
    } else if (key == "cc" || key == "context coherence") {
      e.context_coherence = parse_rating("CC", val);
      have_cc = true;
    } else if (key == "ec" || key == "explanation confidence") {
      e.explanation_confidence = parse_rating("EC", val);
    }
  }
  if (!have_i || !have_fc || !have_cc) throw ParseError("rating header lacks Interestingness, FC or CC");
  std::size_t end = lines.size();
  for (auto h : headers)
    if (h > *chosen) {
      end = h;
      break;
    }
  bool have_token = false, have_context = false;
  std::string* last = nullptr;
  for (std::size_t i = *chosen + 1; i < end; ++i) {
    const std::string clean = strip_markup(lines[i]);
    if (auto v = field_value(clean, "Token Pattern"); v || (v = field_value(clean, "Token"))) {
      e.token_pattern = *v;
      have_token = true;
      last = &e.token_pattern;
    } else if (auto c = field_value(clean, "Context Pattern"); c || (c = field_value(clean, "Context"))) {
      e.context_pattern = *c;
      have_context = true;
      last = &e.context_pattern;
    } else if (auto b = field_value(clean, "Behavior Insight"); b || (b = field_value(clean, "Insight"))) {
      e.behavior_insight = *b;
      last = &e.behavior_insight;
    } else if (last && !clean.empty()) {
      *last += " " + clean;
    } else if (clean.empty()) {
      last = nullptr;
    }
  }
  if (!have_token || !have_context) throw ParseError("reply lacks Token or Context line");
  return e;
}

FeatureExplanation autointerp_feature(std::uint32_t feature_id, double score, std::span<const Snippet> snippets,
                                      ChatClient& client, const AutointerpOptions& options) {
  if (snippets.empty()) throw InvalidArgument("autointerp needs at least one snippet for F" + std::to_string(feature_id));
  const std::string prompt = build_autointerp_prompt(feature_id, score, snippets, lib_or_builtin(options.library));
  std::string last_error;
  for (int attempt = 0; attempt <= options.retries; ++attempt) {
    auto request = ChatRequest::user(prompt);
    request.temperature = 0.0;
    try {
      return parse_explanation(feature_id, client.complete(request));
    } catch (const ParseError& e) {
      last_error = e.what();
    } catch (const LlmError& e) {
      last_error = e.what();
    }
  }
  throw InterpError("F" + std::to_string(feature_id) + ": " + last_error);
}

AutointerpBatch autointerp_features(std::span<const AutointerpRequest> requests, ChatClient& client,
                                    const AutointerpOptions& options) {
  std::vector<std::optional<FeatureExplanation>> results(requests.size());
  std::vector<std::string> errors(requests.size());
  run_bounded(requests.size(), options.concurrency, [&](std::size_t i) {
    try {
      results[i] = autointerp_feature(requests[i].feature_id, requests[i].score, requests[i].snippets, client, options);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  AutointerpBatch out;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (results[i])
      out.explanations.push_back(std::move(*results[i]));
    else
      out.failures.push_back({requests[i].feature_id, errors[i]});
  }
  return out;
}

std::vector<std::uint32_t> filter_interesting(std::span<const FeatureExplanation> explanations, int threshold,
                                              bool bypass) {
  std::vector<std::uint32_t> out;
  for (const auto& e : explanations)
    if (bypass || e.interestingness >= threshold) out.push_back(e.feature_id);
  return out;
}

std::string_view to_string(ScoreDirection d) { return d == ScoreDirection::positive ? "positive" : "negative"; }

ordered_json meta_feature_to_json(const MetaFeature& m) {
  ordered_json j;
  j["name"] = m.name;
  j["direction"] = to_string(m.direction);
  j["feature"] = m.feature_description;
  j["hypothesis"] = m.hypothesis;
  j["feature_ids"] = m.member_feature_ids;
  return j;
}

MetaFeature meta_feature_from_json(const json& j) {
  MetaFeature m;
  m.name = j.at("name").get<std::string>();
  const auto d = j.at("direction").get<std::string>();
  if (d != "positive" && d != "negative") throw ParseError("meta-feature direction must be positive or negative");
  m.direction = d == "positive" ? ScoreDirection::positive : ScoreDirection::negative;
  m.feature_description = j.at("feature").get<std::string>();
  m.hypothesis = j.at("hypothesis").get<std::string>();
  m.member_feature_ids = j.at("feature_ids").get<std::vector<std::uint32_t>>();
  return m;
}

std::string build_meta_prompt(std::span<const MetaInput> survivors, const MetaGroupOptions& options) {
  std::string features;
  for (const auto& s : survivors) {
    const auto& e = s.explanation;
    features += "F" + std::to_string(e.feature_id) + " (score " + fmt_score(s.score) + ", direction " +
                std::string(to_string(s.direction())) + ", Interestingness=" + std::to_string(e.interestingness) +
                "):\n";
    features += "Token: " + e.token_pattern + "\n";
    features += "Context: " + e.context_pattern + "\n";
    features += "Insight: " + e.behavior_insight + "\n\n";
  }
  while (!features.empty() && features.back() == '\n') features.pop_back();
  return lib_or_builtin(options.library)
      .render("meta_autointerp", {{"prediction_problem", options.prediction_problem},
                                  {"positive_prefix", options.positive_prefix},
                                  {"negative_prefix", options.negative_prefix},
                                  {"features", features}});
}

namespace {

std::vector<std::uint32_t> parse_ids(std::string_view s) {
  std::vector<std::uint32_t> ids;
  std::size_t i = 0;
  while (i < s.size()) {
    if (std::isdigit(static_cast<unsigned char>(s[i]))) {
      std::size_t j = i;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      ids.push_back(static_cast<std::uint32_t>(std::stoul(std::string(s.substr(i, j - i)))));
      i = j;
    } else {
      ++i;
    }
  }
  return ids;
}

std::vector<ParsedCluster> parse_meta_json(const json& j) {
  std::vector<ParsedCluster> out;
  const json& arr = j.is_object() && j.contains("clusters") ? j.at("clusters") : j;
  if (!arr.is_array()) return out;
  for (const auto& c : arr) {
    if (!c.is_object()) continue;
    ParsedCluster p;
    p.name = c.value("name", c.value("cluster", ""));
    p.direction = c.value("direction", "");
    p.feature = c.value("feature", "");
    p.hypothesis = c.value("hypothesis", "");
    const json* ids = c.contains("feature_ids") ? &c.at("feature_ids") : c.contains("features") ? &c.at("features") : nullptr;
    if (ids && ids->is_array())
      for (const auto& v : *ids) {
        if (v.is_number_unsigned()) p.feature_ids.push_back(v.get<std::uint32_t>());
        else if (v.is_string())
          for (auto id : parse_ids(v.get<std::string>())) p.feature_ids.push_back(id);
      }
    else if (ids && ids->is_string())
      p.feature_ids = parse_ids(ids->get<std::string>());
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<ParsedCluster> parse_meta_response(std::string_view reply) {
  std::vector<ParsedCluster> out;
  std::string* last = nullptr;
  for (const auto& raw : lines_of(reply)) {
    const std::string line = strip_markup(raw);
    if (auto v = field_value(line, "CLUSTER")) {
      out.push_back({});
      out.back().name = *v;
      last = nullptr;
    } else if (out.empty()) {
      continue;
    } else if (auto d = field_value(line, "DIRECTION")) {
      out.back().direction = ascii_lower(*d);
      last = nullptr;
    } else if (auto f = field_value(line, "FEATURES")) {
      out.back().feature_ids = parse_ids(*f);
      last = nullptr;
    } else if (auto fd = field_value(line, "FEATURE")) {
      out.back().feature = *fd;
      last = &out.back().feature;
    } else if (auto h = field_value(line, "HYPOTHESIS")) {
      out.back().hypothesis = *h;
      last = &out.back().hypothesis;
    } else if (last && !line.empty()) {
      *last += " " + line;
    } else if (line.empty()) {
      last = nullptr;
    }
  }
  if (out.empty())
    if (auto block = extract_json_block(reply)) out = parse_meta_json(json::parse(*block));
  return out;
}

MetaGroupResult meta_group(std::span<const MetaInput> survivors, ChatClient& client, const MetaGroupOptions& options) {
  if (survivors.empty()) throw MetaGroupError("meta_group needs at least one surviving feature");
  std::map<std::uint32_t, ScoreDirection> known;
  for (const auto& s : survivors) known[s.explanation.feature_id] = s.direction();
  const std::string prompt = build_meta_prompt(survivors, options);
  MetaGroupResult result;
  for (int attempt = 0; attempt <= options.retries; ++attempt) {
    auto request = ChatRequest::user(prompt);
    request.temperature = 0.0;
    std::string reply;
    try {
      reply = client.complete(request);
    } catch (const LlmError& e) {
      result.warnings.add(std::string("meta_group: ") + e.what());
      continue;
    }
    std::vector<MetaFeature> clusters;
    for (const auto& c : parse_meta_response(reply)) {
      const std::string label = "cluster '" + c.name + "'";
      if (c.direction != "positive" && c.direction != "negative") {
        result.warnings.add(label + " dropped: direction '" + c.direction + "' is not positive/negative");
        continue;
      }
      if (c.feature_ids.empty()) {
        result.warnings.add(label + " dropped: no member features");
        continue;
      }
      const ScoreDirection dir = c.direction == "positive" ? ScoreDirection::positive : ScoreDirection::negative;
      bool ok = true;
      std::set<ScoreDirection> member_dirs;
      for (auto id : c.feature_ids) {
        auto it = known.find(id);
        if (it == known.end()) {
          result.warnings.add(label + " dropped: unknown feature F" + std::to_string(id));
          ok = false;
          break;
        }
        member_dirs.insert(it->second);
      }
      if (!ok) continue;
      if (member_dirs.size() > 1) {
        result.warnings.add(label + " rejected: members mix positive and negative directions");
        continue;
      }
      if (*member_dirs.begin() != dir) {
        result.warnings.add(label + " rejected: declared direction disagrees with member scores");
        continue;
      }
      const auto words = split_words(c.name);
      if (words.size() < 2 || words.size() > 5)
        result.warnings.add(label + ": name has " + std::to_string(words.size()) + " words");
      MetaFeature m;
      m.name = c.name;
      m.direction = dir;
      m.feature_description = c.feature;
      m.hypothesis = (dir == ScoreDirection::positive ? options.positive_prefix : options.negative_prefix) + ": " +
                     c.feature;
      std::set<std::uint32_t> seen;
      for (auto id : c.feature_ids)
        if (seen.insert(id).second) m.member_feature_ids.push_back(id);
      clusters.push_back(std::move(m));
    }
    if (!clusters.empty()) {
      if (survivors.size() >= 4 && (clusters.size() < 4 || clusters.size() > 8))
        result.warnings.add("meta_group: " + std::to_string(clusters.size()) + " clusters (expected 4-8)");
      result.clusters = std::move(clusters);
      return result;
    }
    result.warnings.add("meta_group: attempt " + std::to_string(attempt + 1) + " produced no valid cluster");
  }
  throw MetaGroupError("meta_group: no valid cluster after " + std::to_string(options.retries + 1) + " attempts");
}

Hypothesis hypothesis_from_meta(const MetaFeature& meta, std::string id, bool class_target) {
  Hypothesis h;
  h.id = std::move(id);
  h.name = meta.name;
  const bool pos = meta.direction == ScoreDirection::positive;
  h.direction = class_target ? (pos ? HypothesisDirection::positive_class : HypothesisDirection::negative_class)
                             : (pos ? HypothesisDirection::increasing : HypothesisDirection::decreasing);
  h.feature = meta.feature_description;
  h.statement = meta.hypothesis.empty() ? direction_prefix(h.direction) + ": " + meta.feature_description : meta.hypothesis;
  h.source = HypothesisSource::sae_meta;
  h.feature_ids = meta.member_feature_ids;
  return h;
}

Hypothesis hypothesis_from_feature(const FeatureExplanation& e, double score, std::string id, bool class_target) {
  Hypothesis h;
  h.id = std::move(id);
  h.name = "F" + std::to_string(e.feature_id) + ": " + e.token_pattern;
  const bool pos = score >= 0.0;
  h.direction = class_target ? (pos ? HypothesisDirection::positive_class : HypothesisDirection::negative_class)
                             : (pos ? HypothesisDirection::increasing : HypothesisDirection::decreasing);
  h.feature = e.token_pattern + ". " + e.context_pattern;
  if (!e.behavior_insight.empty()) h.feature += ". " + e.behavior_insight;
  h.statement = direction_prefix(h.direction) + ": " + h.feature;
  h.source = HypothesisSource::sae_feature;
  h.feature_ids = {e.feature_id};
  return h;
}

std::string build_intervention_prompt(std::span<const InterventionEntry> entries, std::size_t examples_per_feature,
                                      std::string_view power, const prompts::PromptLibrary& library) {
  if (entries.empty()) throw InvalidArgument("intervention prompt needs at least one meta-feature");
  std::string sections;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.examples.size() < examples_per_feature)
      throw InvalidArgument("meta-feature '" + e.meta.name + "' has " + std::to_string(e.examples.size()) +
                            " examples; " + std::to_string(examples_per_feature) + " required");
    if (i > 0) sections += "\n---\n\n";
    sections += "## " + std::to_string(i + 1) + ". " + e.meta.name + "\n\n";
    sections += e.meta.feature_description + "\n\nExamples:\n";
    for (std::size_t k = 0; k < examples_per_feature; ++k)
      sections += std::to_string(k + 1) + ". " + e.examples[k] + "\n";
  }
  return library.render("intervention", {{"power", std::string(power)},
                                         {"examples_per_feature", std::to_string(examples_per_feature)},
                                         {"sections", sections}});
}

}  // namespace trajlens
