#include "trajlens/summarizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <regex>
#include <set>

namespace trajlens {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<Citation> extract_citations(std::string_view text) {
  static const std::regex re(R"(<citation\s+([^>]*?)\s*>([\s\S]*?)</citation>)");
  std::vector<Citation> out;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it)
    out.push_back({std::string(trim((*it)[1].str())), std::string(trim((*it)[2].str())), true});
  return out;
}

std::vector<std::string> extract_phases(std::string_view text) {
  static const std::regex re(R"(<phase\s+([^>]*?)\s*>[\s\S]*?</phase>)");
  std::vector<std::string> out;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it)
    out.push_back(std::string(trim((*it)[1].str())));
  return out;
}

std::size_t estimate_tokens(std::string_view text, const Tokenizer* tokenizer) {
  if (tokenizer) return tokenizer->token_count(text);
  return static_cast<std::size_t>(std::ceil(static_cast<double>(split_words(text).size()) * 1.3));
}

std::string render_transcript(const Trajectory& t) {
  std::string out;
  for (const auto& m : t.messages) {
    out += "[";
    out += to_string(m.role);
    if (m.tool_name) out += ": " + *m.tool_name;
    out += "]\n";
    out += m.content;
    out += "\n";
    if (m.extra.contains("tool_calls") && m.extra.at("tool_calls").is_array()) {
      for (const auto& call : m.extra.at("tool_calls")) {
        out += "TOOL CALL ";
        if (call.contains("name") && call.at("name").is_string()) out += call.at("name").get<std::string>();
        if (call.contains("arguments")) {
          const auto& a = call.at("arguments");
          out += ": " + (a.is_string() ? a.get<std::string>() : a.dump());
        }
        out += "\n";
      }
    }
    out += "\n";
  }
  return out;
}

namespace {

const prompts::PromptLibrary& lib_or_builtin(const prompts::PromptLibrary* lib) {
  return lib ? *lib : prompts::PromptLibrary::builtin();
}

std::string normalize_ws(std::string_view s) {
  std::string out;
  for (const auto& w : split_words(s)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

// Longest word prefix whose estimate fits the budget, with dangling tags repaired.
std::string truncate_to_budget(const std::string& text, std::size_t budget, const Tokenizer* tokenizer) {
  std::vector<std::size_t> word_ends;
  bool in_word = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const bool space = std::isspace(static_cast<unsigned char>(text[i])) != 0;
    if (!space) in_word = true;
    if (space && in_word) {
      word_ends.push_back(i);
      in_word = false;
    }
  }
  if (in_word) word_ends.push_back(text.size());
  std::size_t lo = 0, hi = word_ends.size();
  while (lo < hi) {
    const std::size_t mid = (lo + hi + 1) / 2;
    if (estimate_tokens(std::string_view(text).substr(0, word_ends[mid - 1]), tokenizer) <= budget)
      lo = mid;
    else
      hi = mid - 1;
  }
  std::string out = lo == 0 ? std::string() : text.substr(0, word_ends[lo - 1]);
  auto open_c = out.rfind("<citation");
  auto close_c = out.rfind("</citation>");
  if (open_c != std::string::npos && (close_c == std::string::npos || close_c < open_c)) out.resize(open_c);
  auto open_p = out.rfind("<phase");
  auto close_p = out.rfind("</phase>");
  if (open_p != std::string::npos && (close_p == std::string::npos || close_p < open_p)) {
    while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) out.pop_back();
    out += "\n</phase>";
  }
  return out;
}

std::string complete_once(ChatClient& client, const std::string& prompt) {
  auto request = ChatRequest::user(prompt);
  request.temperature = 0.0;
  return client.complete(request);
}

}  // namespace

TrajectorySummary summarize_trajectory(const Trajectory& t, ChatClient& client, const SummarizerOptions& options) {
  const bool has_content = std::any_of(t.messages.begin(), t.messages.end(),
                                       [](const Message& m) { return !trim(m.content).empty(); });
  if (!has_content) throw InvalidArgument("trajectory " + t.key.to_string() + " has no content to summarize");
  const std::string transcript = render_transcript(t);
  const auto budget_words = static_cast<std::size_t>(static_cast<double>(options.budget_tokens) / 1.3);
  const std::string prompt = lib_or_builtin(options.library)
                                 .render("trajectory_summary", {{"budget_words", std::to_string(budget_words)},
                                                                {"transcript", transcript}});
  TrajectorySummary s;
  s.trajectory_id = t.key.to_string();
  s.batch = t.key.batch;
  for (int attempt = 0; attempt <= options.retries; ++attempt) {
    s.text = complete_once(client, prompt);
    s.phases = extract_phases(s.text);
    if (!s.phases.empty()) break;
  }
  s.valid = !s.phases.empty();
  s.token_estimate = estimate_tokens(s.text, options.tokenizer);
  if (static_cast<double>(s.token_estimate) > 1.2 * static_cast<double>(options.budget_tokens)) {
    s.text = truncate_to_budget(s.text, options.budget_tokens, options.tokenizer);
    s.token_estimate = estimate_tokens(s.text, options.tokenizer);
    s.phases = extract_phases(s.text);
    s.truncated = true;
  }
  const std::string haystack = normalize_ws(transcript);
  s.citations = extract_citations(s.text);
  for (auto& c : s.citations) c.resolved = haystack.find(normalize_ws(c.text)) != std::string::npos;
  return s;
}

BatchSummary summarize_batch(std::int64_t batch, std::span<const TrajectorySummary> summaries, ChatClient& client,
                             const SummarizerOptions& options) {
  if (summaries.empty()) throw InvalidArgument("batch " + std::to_string(batch) + " has no trajectory summaries");
  std::string body;
  std::set<std::string> ids;
  for (const auto& s : summaries) {
    ids.insert(s.trajectory_id);
    body += "### Trajectory " + s.trajectory_id + "\n\n" + s.text + "\n\n";
  }
  while (!body.empty() && body.back() == '\n') body.pop_back();
  const std::string prompt =
      lib_or_builtin(options.library)
          .render("batch_summary", {{"num_trajectories", std::to_string(summaries.size())},
                                    {"batch_number", std::to_string(batch)},
                                    {"target_length", std::to_string(options.batch_target_words)},
                                    {"trajectory_summaries", body}});
  BatchSummary out;
  out.batch = batch;
  out.text = complete_once(client, prompt);
  std::set<std::string> seen;
  for (auto c : extract_citations(out.text)) {
    if (ids.count(c.tag)) {
      if (seen.insert(c.tag).second) out.cited_trajectory_ids.push_back(c.tag);
    } else {
      c.resolved = false;
      out.unresolved.push_back(std::move(c));
    }
  }
  return out;
}

namespace {

std::string training_sections(const std::vector<BatchSummary>& batches) {
  std::string out;
  for (const auto& b : batches) out += "## Batch " + std::to_string(b.batch) + "\n\n" + b.text + "\n\n";
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

std::string reward_sections(const HypothesisInput& in, const SummarizerOptions& o) {
  std::string out;
  auto group = [&](const std::string& label, const std::vector<TrajectorySummary>& ss) {
    out += "## " + label + " trajectories (" + std::to_string(ss.size()) + ")\n\n";
    for (const auto& s : ss) out += "### " + s.trajectory_id + "\n\n" + s.text + "\n\n";
  };
  group(o.high_label, in.high);
  group(o.low_label, in.low);
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

std::string name_from_text(const std::string& text) {
  auto words = split_words(text);
  if (words.size() > 6) words.resize(6);
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

std::optional<Hypothesis> reward_item(const json& item, const SummarizerOptions& o, std::size_t ordinal,
                                      Warnings& warnings) {
  if (!item.is_object() || !item.contains("direction") || !item.at("direction").is_string()) {
    warnings.add("hypothesis item " + std::to_string(ordinal) + " dropped: missing direction");
    return std::nullopt;
  }
  const std::string dir = item.at("direction").get<std::string>();
  Hypothesis h;
  if (dir == o.high_label) {
    h.direction = HypothesisDirection::positive_class;
  } else if (dir == o.low_label) {
    h.direction = HypothesisDirection::negative_class;
  } else {
    warnings.add("hypothesis item " + std::to_string(ordinal) + " dropped: direction '" + dir + "'");
    return std::nullopt;
  }
  const std::string text = item.value("hypothesis", item.value("feature", ""));
  if (trim(text).empty()) {
    warnings.add("hypothesis item " + std::to_string(ordinal) + " dropped: empty hypothesis text");
    return std::nullopt;
  }
  h.name = item.value("name", name_from_text(text));
  h.feature = text;
  h.statement = text;
  return h;
}

}  // namespace

HypothesisExtraction extract_hypotheses(const HypothesisInput& input, ChatClient& client,
                                        const SummarizerOptions& options) {
  std::string prompt;
  const auto& lib = lib_or_builtin(options.library);
  if (input.rubric == Rubric::training) {
    if (input.batches.size() < 2) throw InvalidArgument("training rubric needs at least two batch summaries");
    const std::string range =
        std::to_string(input.batches.front().batch) + "-" + std::to_string(input.batches.back().batch);
    prompt = lib.render("hypotheses_training", {{"num_batches", std::to_string(input.batches.size())},
                                                {"batch_range", range},
                                                {"sections", training_sections(input.batches)}});
  } else {
    if (input.high.empty() || input.low.empty())
      throw InvalidArgument("reward rubric needs summaries in both reward groups");
    prompt = lib.render("hypotheses_reward", {{"high_label", options.high_label},
                                              {"low_label", options.low_label},
                                              {"sections", reward_sections(input, options)}});
  }
  HypothesisExtraction out;
  std::string last_problem = "no reply";
  for (int attempt = 0; attempt <= options.hypothesis_retries; ++attempt) {
    std::string reply;
    try {
      reply = complete_once(client, prompt);
    } catch (const LlmError& e) {
      last_problem = e.what();
      continue;
    }
    auto block = extract_json_block(reply);
    if (!block) {
      last_problem = "reply contains no JSON";
      out.warnings.add("hypothesis extraction attempt " + std::to_string(attempt + 1) + ": " + last_problem);
      continue;
    }
    json parsed = json::parse(*block);
    if (parsed.is_object() && parsed.contains("hypotheses")) parsed = parsed.at("hypotheses");
    if (!parsed.is_array()) {
      last_problem = "reply JSON is not an array";
      out.warnings.add("hypothesis extraction attempt " + std::to_string(attempt + 1) + ": " + last_problem);
      continue;
    }
    std::vector<Hypothesis> hs;
    for (std::size_t i = 0; i < parsed.size(); ++i) {
      std::optional<Hypothesis> h;
      if (input.rubric == Rubric::training) {
        try {
          Hypothesis t = hypothesis_from_json(parsed[i], i + 1);
          if (t.direction == HypothesisDirection::increasing || t.direction == HypothesisDirection::decreasing)
            h = std::move(t);
          else
            out.warnings.add("hypothesis item " + std::to_string(i + 1) + " dropped: class direction in training rubric");
        } catch (const std::exception& e) {
          out.warnings.add("hypothesis item " + std::to_string(i + 1) + " dropped: " + e.what());
        }
      } else {
        h = reward_item(parsed[i], options, i + 1, out.warnings);
      }
      if (h) hs.push_back(std::move(*h));
    }
    if (hs.empty()) {
      last_problem = "no valid hypothesis item";
      continue;
    }
    if (hs.size() > 20) {
      out.warnings.add("reply had " + std::to_string(hs.size()) + " hypotheses; keeping the first 20");
      hs.resize(20);
    }
    for (std::size_t i = 0; i < hs.size(); ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "H%03zu", i + 1);
      hs[i].id = id;
      hs[i].source = HypothesisSource::llm;
    }
    out.hypotheses = std::move(hs);
    return out;
  }
  throw LlmError("hypothesis extraction failed: " + last_problem);
}

CorpusSummaries summarize_corpus(const Corpus& corpus, ChatClient& client, const SummarizerOptions& options) {
  CorpusSummaries out;
  out.trajectories.resize(corpus.size());
  run_bounded(corpus.size(), options.concurrency,
              [&](std::size_t i) { out.trajectories[i] = summarize_trajectory(corpus[i], client, options); });
  std::map<std::int64_t, std::vector<TrajectorySummary>> by_batch;
  for (const auto& s : out.trajectories) {
    if (!s.valid) out.warnings.add("summary of " + s.trajectory_id + " lacks phase tags");
    if (s.truncated) out.warnings.add("summary of " + s.trajectory_id + " was truncated to the budget");
    by_batch[s.batch].push_back(s);
  }
  for (const auto& [batch, ss] : by_batch) {
    out.batches.push_back(summarize_batch(batch, ss, client, options));
    for (const auto& c : out.batches.back().unresolved)
      out.warnings.add("batch " + std::to_string(batch) + " cites unknown trajectory '" + c.tag + "'");
  }
  return out;
}

namespace {

ordered_json citations_json(const std::vector<Citation>& cs) {
  ordered_json arr = ordered_json::array();
  for (const auto& c : cs) arr.push_back({{"tag", c.tag}, {"text", c.text}, {"resolved", c.resolved}});
  return arr;
}

std::vector<Citation> citations_from(const json& j) {
  std::vector<Citation> out;
  for (const auto& c : j)
    out.push_back({c.at("tag").get<std::string>(), c.at("text").get<std::string>(), c.value("resolved", true)});
  return out;
}

}  // namespace

ordered_json trajectory_summary_to_json(const TrajectorySummary& s) {
  ordered_json j;
  j["trajectory"] = s.trajectory_id;
  j["batch"] = s.batch;
  j["token_estimate"] = s.token_estimate;
  j["valid"] = s.valid;
  j["truncated"] = s.truncated;
  j["phases"] = s.phases;
  j["citations"] = citations_json(s.citations);
  j["text"] = s.text;
  return j;
}

TrajectorySummary trajectory_summary_from_json(const json& j) {
  TrajectorySummary s;
  s.trajectory_id = j.at("trajectory").get<std::string>();
  s.batch = j.at("batch").get<std::int64_t>();
  s.token_estimate = j.value("token_estimate", std::size_t{0});
  s.valid = j.value("valid", true);
  s.truncated = j.value("truncated", false);
  s.phases = j.value("phases", std::vector<std::string>{});
  if (j.contains("citations")) s.citations = citations_from(j.at("citations"));
  s.text = j.at("text").get<std::string>();
  return s;
}

ordered_json batch_summary_to_json(const BatchSummary& s) {
  ordered_json j;
  j["batch"] = s.batch;
  j["cited_trajectories"] = s.cited_trajectory_ids;
  j["unresolved"] = citations_json(s.unresolved);
  j["text"] = s.text;
  return j;
}

BatchSummary batch_summary_from_json(const json& j) {
  BatchSummary s;
  s.batch = j.at("batch").get<std::int64_t>();
  s.cited_trajectory_ids = j.value("cited_trajectories", std::vector<std::string>{});
  if (j.contains("unresolved")) s.unresolved = citations_from(j.at("unresolved"));
  s.text = j.at("text").get<std::string>();
  return s;
}

}  // namespace trajlens
