#include "trajlens/auxval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "trajlens/hashing.hpp"
#include "trajlens/scoring.hpp"

namespace trajlens {

std::string_view to_string(ActionKind k) {
  switch (k) {
    case ActionKind::assistant_message: return "assistant_message";
    case ActionKind::write_diary: return "write_diary";
    case ActionKind::send_message: return "send_message";
  }
  return "assistant_message";
}

namespace {

std::optional<ActionKind> tool_kind(std::string_view name) {
  if (name == "write_diary") return ActionKind::write_diary;
  if (name == "send_message") return ActionKind::send_message;
  return std::nullopt;
}

std::optional<ActionKind> parse_kind(std::string_view name) {
  if (name == "assistant_message") return ActionKind::assistant_message;
  return tool_kind(name);
}

std::string call_text(const nlohmann::ordered_json& args) {
  if (args.is_string()) {
    auto parsed = nlohmann::json::parse(args.get<std::string>(), nullptr, false);
    if (parsed.is_object()) return call_text(nlohmann::ordered_json(parsed));
    return args.get<std::string>();
  }
  if (args.is_object()) {
    for (const char* key : {"message", "content", "text", "entry", "diary"})
      if (args.contains(key) && args.at(key).is_string()) return args.at(key).get<std::string>();
  }
  return args.is_null() ? std::string() : args.dump();
}

// Lower-cased alphanumeric word runs.
std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string normalize_text(std::string_view s) {
  std::string out;
  for (const auto& w : split_words(ascii_lower(s))) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace

std::vector<ActionDocument> extract_actions(const Corpus& corpus) {
  static const std::regex phase_re(kPhasePattern);
  std::vector<ActionDocument> out;
  for (const auto& t : corpus) {
    const std::string id = t.key.to_string();
    std::string phase;
    auto push = [&](ActionKind k, std::string text) {
      if (trim(text).empty()) return;
      out.push_back({id, k, std::move(text), t.key.batch, phase});
    };
    for (const auto& m : t.messages) {
      if (m.role != Role::assistant) {
        std::smatch sm;
        std::string::const_iterator begin = m.content.begin();
        while (std::regex_search(begin, m.content.cend(), sm, phase_re)) {
          phase = sm.str();
          begin = sm.suffix().first;
        }
        continue;
      }
      if (m.tool_name) {
        if (auto k = tool_kind(*m.tool_name)) push(*k, m.content);
      } else {
        push(ActionKind::assistant_message, m.content);
      }
      auto calls = m.extra.find("tool_calls");
      if (calls != m.extra.end() && calls->is_array()) {
        for (const auto& c : *calls) {
          std::string name;
          const nlohmann::ordered_json* args = nullptr;
          if (c.contains("function") && c.at("function").is_object()) {
            name = c.at("function").value("name", "");
            if (c.at("function").contains("arguments")) args = &c.at("function").at("arguments");
          } else {
            name = c.value("name", "");
            if (c.contains("arguments")) args = &c.at("arguments");
          }
          if (auto k = tool_kind(name)) push(*k, args ? call_text(*args) : std::string());
        }
      }
    }
  }
  return out;
}

std::size_t count_keyword(std::string_view text, std::string_view keyword, bool stemming) {
  const auto kw = words_of(keyword);
  if (kw.empty()) return 0;
  const auto words = words_of(text);
  std::size_t n = 0;
  for (std::size_t i = 0; i + kw.size() <= words.size(); ++i) {
    bool ok = true;
    for (std::size_t j = 0; j < kw.size() && ok; ++j) {
      const auto& w = words[i + j];
      if (w == kw[j]) continue;
      ok = stemming && j + 1 == kw.size() && (w == kw[j] + "s" || w == kw[j] + "es");
    }
    if (ok) ++n;
  }
  return n;
}

std::vector<KeywordPoint> keyword_trend(std::span<const ActionDocument> docs, std::span<const std::string> keywords,
                                        bool stemming) {
  if (keywords.empty()) throw InvalidArgument("keyword_trend needs at least one keyword");
  if (docs.empty()) throw InvalidArgument("keyword_trend needs at least one document");
  struct Acc {
    std::int64_t batch;
    std::size_t matches = 0, tokens = 0, docs = 0;
  };
  std::map<std::string, Acc> per_traj;
  for (const auto& d : docs) {
    auto& a = per_traj.try_emplace(d.trajectory_id, Acc{d.batch}).first->second;
    for (const auto& k : keywords) a.matches += count_keyword(d.text, k, stemming);
    a.tokens += words_of(d.text).size();
    ++a.docs;
  }
  std::map<std::int64_t, KeywordPoint> points;
  for (const auto& [id, a] : per_traj) {
    auto& p = points[a.batch];
    p.batch = a.batch;
    ++p.trajectories;
    p.raw += static_cast<double>(a.matches);
    p.per_token += a.tokens ? static_cast<double>(a.matches) / static_cast<double>(a.tokens) : 0.0;
    p.per_document += static_cast<double>(a.matches) / static_cast<double>(a.docs);
  }
  std::vector<KeywordPoint> out;
  for (auto& [b, p] : points) {
    const double n = static_cast<double>(p.trajectories);
    p.raw /= n;
    p.per_token /= n;
    p.per_document /= n;
    out.push_back(p);
  }
  return out;
}

std::vector<float> HashingEmbedder::embed(std::string_view text) {
  std::vector<float> v(dim_, 0.0f);
  if (dim_ == 0) return v;
  for (const auto& w : words_of(text)) v[fnv1a64(w) % dim_] += 1.0f;
  return v;
}

std::vector<float> EmbeddingCache::embed(std::string_view text) {
  const std::string key = sha256_hex(text);
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  auto v = inner_.embed(text);
  std::lock_guard<std::mutex> lock(mu_);
  auto [it, inserted] = cache_.emplace(key, std::move(v));
  if (inserted) ++misses_;
  return it->second;
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return cache_.size();
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: vectors differ in length");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

EmbeddingTrend embedding_trend(std::span<const ActionDocument> docs, std::string_view label, EmbeddingClient& client,
                               std::size_t concurrency) {
  EmbeddingTrend out;
  const auto label_vec = client.embed(label);
  std::vector<std::optional<double>> sims(docs.size());
  std::vector<std::string> errors(docs.size());
  run_bounded(docs.size(), concurrency, [&](std::size_t i) {
    try {
      sims[i] = cosine(label_vec, client.embed(docs[i].text));
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  std::map<std::int64_t, EmbeddingPoint> points;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!sims[i]) {
      out.warnings.add("embedding of a " + std::string(to_string(docs[i].kind)) + " in " + docs[i].trajectory_id +
                       " failed: " + errors[i]);
      continue;
    }
    auto& p = points[docs[i].batch];
    p.batch = docs[i].batch;
    ++p.documents;
    p.mean_cosine += *sims[i];
  }
  for (auto& [b, p] : points) {
    p.mean_cosine /= static_cast<double>(p.documents);
    out.points.push_back(p);
  }
  return out;
}

CountingRule::CountingRule(std::string spec) : spec_(std::move(spec)) {
  std::string_view s = spec_;
  if (s.rfind("dup:", 0) == 0) {
    dup_kind_ = parse_kind(trim(s.substr(4)));
    if (!dup_kind_) throw InvalidArgument("unknown action kind in rule '" + spec_ + "'");
    return;
  }
  if (s.rfind("re:", 0) == 0) s.remove_prefix(3);
  try {
    regex_.emplace(std::string(s));
  } catch (const std::regex_error& e) {
    throw InvalidArgument("invalid pattern '" + std::string(s) + "': " + e.what());
  }
}

std::size_t CountingRule::count(std::span<const ActionDocument> trajectory_docs) const {
  std::size_t n = 0;
  if (dup_kind_) {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& d : trajectory_docs) {
      if (d.kind != *dup_kind_) continue;
      if (!seen.insert({d.phase, normalize_text(d.text)}).second) ++n;
    }
    return n;
  }
  for (const auto& d : trajectory_docs)
    n += static_cast<std::size_t>(
        std::distance(std::sregex_iterator(d.text.begin(), d.text.end(), *regex_), std::sregex_iterator()));
  return n;
}

CooccurrenceResult regex_cooccurrence(const Corpus& corpus, const CountingRule& a, const CountingRule& b) {
  const auto docs = extract_actions(corpus);
  std::map<std::string, std::vector<ActionDocument>> by_traj;
  for (const auto& d : docs) by_traj[d.trajectory_id].push_back(d);
  CooccurrenceResult r;
  std::map<std::int64_t, BatchMeans> means;
  for (const auto& t : corpus) {
    const std::string id = t.key.to_string();
    auto it = by_traj.find(id);
    const std::span<const ActionDocument> mine =
        it == by_traj.end() ? std::span<const ActionDocument>() : std::span<const ActionDocument>(it->second);
    const std::size_t ca = a.count(mine), cb = b.count(mine);
    r.trajectory_ids.push_back(id);
    r.batches.push_back(t.key.batch);
    r.counts_a.push_back(ca);
    r.counts_b.push_back(cb);
    auto& m = means[t.key.batch];
    m.batch = t.key.batch;
    ++m.trajectories;
    m.mean_a += static_cast<double>(ca);
    m.mean_b += static_cast<double>(cb);
  }
  std::vector<double> sa, sb;
  for (auto& [batch, m] : means) {
    m.mean_a /= static_cast<double>(m.trajectories);
    m.mean_b /= static_cast<double>(m.trajectories);
    r.per_batch.push_back(m);
    sa.push_back(m.mean_a);
    sb.push_back(m.mean_b);
  }
  if (sa.size() >= 2) r.correlation = spearman(sa, sb);
  return r;
}

namespace {
std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string keyword_trend_csv(std::span<const KeywordPoint> points) {
  std::string out = "batch,trajectories,raw,per_token,per_document\n";
  for (const auto& p : points)
    out += std::to_string(p.batch) + "," + std::to_string(p.trajectories) + "," + g17(p.raw) + "," +
           g17(p.per_token) + "," + g17(p.per_document) + "\n";
  return out;
}

std::string embedding_trend_csv(std::span<const EmbeddingPoint> points) {
  std::string out = "batch,documents,mean_cosine\n";
  for (const auto& p : points)
    out += std::to_string(p.batch) + "," + std::to_string(p.documents) + "," + g17(p.mean_cosine) + "\n";
  return out;
}

std::string cooccurrence_csv(const CooccurrenceResult& r) {
  std::string out = "batch,trajectories,mean_a,mean_b\n";
  for (const auto& m : r.per_batch)
    out += std::to_string(m.batch) + "," + std::to_string(m.trajectories) + "," + g17(m.mean_a) + "," +
           g17(m.mean_b) + "\n";
  return out;
}

}  // namespace trajlens
