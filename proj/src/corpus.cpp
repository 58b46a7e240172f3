#include "trajlens/corpus.hpp"
#include "trajlens/hashing.hpp"
#include "trajlens/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace trajlens {

using nlohmann::ordered_json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::assistant: return "assistant";
    case Role::user: return "user";
    case Role::tool: return "tool";
  }
  return "assistant";
}

Role parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "assistant") return Role::assistant;
  if (s == "user") return Role::user;
  if (s == "tool") return Role::tool;
  throw ParseError("unknown role '" + std::string(s) + "'");
}

std::string TrajectoryKey::to_string() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "batch%03lld_group%03lld_trajectory%03lld_",
                static_cast<long long>(batch), static_cast<long long>(group), static_cast<long long>(traj));
  return buf + run_id;
}

std::uint64_t TrajectoryKey::hash() const { return fnv1a64(to_string()); }

Corpus::Corpus(std::vector<Trajectory> trajectories) : trajectories_(std::move(trajectories)) {
  std::stable_sort(trajectories_.begin(), trajectories_.end(),
                   [](const Trajectory& a, const Trajectory& b) { return a.key < b.key; });
  for (std::size_t i = 0; i < trajectories_.size(); ++i) {
    const auto& t = trajectories_[i];
    if (i > 0 && trajectories_[i - 1].key == t.key)
      throw DuplicateKeyError("duplicate trajectory key " + t.key.to_string());
    if (t.messages.empty()) throw ParseError("trajectory " + t.key.to_string() + " has no messages");
    by_id_.emplace(t.key.to_string(), i);
  }
}

const Trajectory* Corpus::find(const TrajectoryKey& key) const { return find(key.to_string()); }

const Trajectory* Corpus::find(std::string_view canonical_id) const {
  auto i = index_of(canonical_id);
  return i ? &trajectories_[*i] : nullptr;
}

std::optional<std::size_t> Corpus::index_of(std::string_view canonical_id) const {
  auto it = by_id_.find(canonical_id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::map<std::string, std::size_t> Corpus::run_counts() const {
  std::map<std::string, std::size_t> out;
  for (const auto& t : trajectories_) ++out[t.key.run_id];
  return out;
}

std::vector<std::int64_t> Corpus::batches() const {
  std::set<std::int64_t> s;
  for (const auto& t : trajectories_) s.insert(t.key.batch);
  return {s.begin(), s.end()};
}

namespace {

std::int64_t nonneg_int(const ordered_json& j, const char* field) {
  if (!j.contains(field)) throw ParseError(std::string("missing field '") + field + "'");
  const auto& v = j.at(field);
  if (!v.is_number_integer()) throw ParseError(std::string("field '") + field + "' must be an integer");
  auto x = v.get<std::int64_t>();
  if (x < 0) throw ParseError(std::string("field '") + field + "' must be >= 0");
  return x;
}

bool has_tool_calls(const Message& m) {
  auto it = m.extra.find("tool_calls");
  return it != m.extra.end() && it->is_array() && !it->empty();
}

}  // namespace

Trajectory trajectory_from_json(const ordered_json& j) {
  if (!j.is_object()) throw ParseError("record is not a JSON object");
  Trajectory t;
  if (!j.contains("run_id") || !j.at("run_id").is_string()) throw ParseError("missing string field 'run_id'");
  t.key.run_id = j.at("run_id").get<std::string>();
  t.key.batch = nonneg_int(j, "batch");
  t.key.group = nonneg_int(j, "group");
  t.key.traj = nonneg_int(j, "traj");
  if (!j.contains("reward") || !j.at("reward").is_number()) throw ParseError("missing numeric field 'reward'");
  t.reward = j.at("reward").get<double>();
  if (!j.contains("messages") || !j.at("messages").is_array()) throw ParseError("missing array field 'messages'");
  for (const auto& mj : j.at("messages")) {
    if (!mj.is_object()) throw ParseError("message is not an object");
    Message m;
    if (!mj.contains("role") || !mj.at("role").is_string()) throw ParseError("message without role");
    m.role = parse_role(mj.at("role").get<std::string>());
    if (mj.contains("content")) {
      const auto& c = mj.at("content");
      if (c.is_null()) {
        m.content.clear();
      } else if (c.is_string()) {
        m.content = c.get<std::string>();
      } else {
        throw ParseError("message content must be a string");
      }
    }
    if (mj.contains("tool_name") && !mj.at("tool_name").is_null())
      m.tool_name = mj.at("tool_name").get<std::string>();
    for (auto it = mj.begin(); it != mj.end(); ++it)
      if (it.key() != "role" && it.key() != "content" && it.key() != "tool_name") m.extra[it.key()] = it.value();
    if (m.content.empty() && !m.tool_name && !has_tool_calls(m))
      throw ParseError("empty message content outside a tool call");
    t.messages.push_back(std::move(m));
  }
  if (t.messages.empty()) throw ParseError("trajectory has no messages");
  static const std::set<std::string, std::less<>> known{"run_id", "batch", "group", "traj", "reward", "messages"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) t.extra[it.key()] = it.value();
  return t;
}

ordered_json trajectory_to_json(const Trajectory& t) {
  ordered_json j;
  j["run_id"] = t.key.run_id;
  j["batch"] = t.key.batch;
  j["group"] = t.key.group;
  j["traj"] = t.key.traj;
  j["reward"] = t.reward;
  ordered_json msgs = ordered_json::array();
  for (const auto& m : t.messages) {
    ordered_json mj;
    mj["role"] = to_string(m.role);
    mj["content"] = m.content;
    if (m.tool_name) mj["tool_name"] = *m.tool_name;
    for (auto it = m.extra.begin(); it != m.extra.end(); ++it) mj[it.key()] = it.value();
    msgs.push_back(std::move(mj));
  }
  j["messages"] = std::move(msgs);
  for (auto it = t.extra.begin(); it != t.extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

Corpus parse_corpus(std::string_view jsonl, std::string_view source_name) {
  std::vector<Trajectory> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= jsonl.size()) {
    std::size_t nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    std::string_view line = jsonl.substr(pos, nl - pos);
    ++line_no;
    pos = nl + 1;
    if (trim(line).empty()) {
      if (nl == jsonl.size()) break;
      continue;
    }
    try {
      out.push_back(trajectory_from_json(ordered_json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string(source_name) + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(std::string(source_name) + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (nl == jsonl.size()) break;
  }
  Corpus corpus(std::move(out));
  if (corpus.empty()) corpus.warnings().add(std::string(source_name) + ": corpus is empty");
  return corpus;
}

Corpus load_corpus(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("corpus not found: " + path.string());
  return parse_corpus(read_file(path), path.string());
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& t : corpus) {
    out += trajectory_to_json(t).dump();
    out.push_back('\n');
  }
  return out;
}

void write_corpus(const Corpus& corpus, const fs::path& path) { write_file(path, serialize_corpus(corpus)); }

SampleReport canonical_sample(const Corpus& corpus, int groups_per_batch, int trajs_per_group,
                              std::uint64_t seed) {
  if (corpus.empty()) throw InvalidArgument("canonical_sample: corpus is empty");
  if (groups_per_batch < 1 || trajs_per_group < 1)
    throw InvalidArgument("canonical_sample: sizes must be >= 1");
  // (run, batch) -> group -> trajectory indices, in corpus order
  std::map<std::pair<std::string, std::int64_t>, std::map<std::int64_t, std::vector<std::size_t>>> layout;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& k = corpus[i].key;
    layout[{k.run_id, k.batch}][k.group].push_back(i);
  }
  SampleReport report;
  std::vector<Trajectory> picked;
  for (const auto& [rb, groups] : layout) {
    const auto& [run, batch] = rb;
    Rng rng(derive_seed(derive_seed(seed, run), static_cast<std::uint64_t>(batch)));
    std::vector<std::int64_t> group_ids;
    for (const auto& g : groups) group_ids.push_back(g.first);
    if (group_ids.size() < static_cast<std::size_t>(groups_per_batch))
      report.shortfalls.push_back(run + " batch " + std::to_string(batch) + ": " +
                                  std::to_string(group_ids.size()) + " of " +
                                  std::to_string(groups_per_batch) + " groups");
    auto gsel = rng.sample_indices(group_ids.size(), static_cast<std::size_t>(groups_per_batch));
    std::sort(gsel.begin(), gsel.end());
    for (std::size_t gi : gsel) {
      const auto& members = groups.at(group_ids[gi]);
      if (members.size() < static_cast<std::size_t>(trajs_per_group))
        report.shortfalls.push_back(run + " batch " + std::to_string(batch) + " group " +
                                    std::to_string(group_ids[gi]) + ": " + std::to_string(members.size()) +
                                    " of " + std::to_string(trajs_per_group) + " trajectories");
      auto tsel = rng.sample_indices(members.size(), static_cast<std::size_t>(trajs_per_group));
      std::sort(tsel.begin(), tsel.end());
      for (std::size_t ti : tsel) picked.push_back(corpus[members[ti]]);
    }
  }
  report.corpus = Corpus(std::move(picked));
  return report;
}

TokenizedTrajectory tokenize_trajectory(const Trajectory& t, const Tokenizer& tokenizer) {
  TokenizedTrajectory out;
  for (std::size_t m = 0; m < t.messages.size(); ++m) {
    const auto& msg = t.messages[m];
    auto pieces = tokenizer.pieces(msg.content);
    auto ids = tokenizer.encode(msg.content);
    if (ids.size() != pieces.size()) throw Error("tokenizer pieces and ids disagree");
    const std::uint8_t flag = msg.role == Role::assistant ? 1 : 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out.ids.push_back(ids[i]);
      out.pieces.push_back(std::move(pieces[i]));
      out.assistant.push_back(flag);
      out.message_index.push_back(static_cast<std::uint32_t>(m));
    }
  }
  return out;
}

std::vector<bool> assistant_mask(const Trajectory& t, const Tokenizer& tokenizer) {
  std::vector<bool> mask;
  for (const auto& msg : t.messages) {
    std::size_t n = tokenizer.token_count(msg.content);
    mask.insert(mask.end(), n, msg.role == Role::assistant);
  }
  return mask;
}

std::vector<SpanBounds> chunk_bounds(std::size_t total, std::size_t window, std::size_t stride) {
  if (stride < 1 || window < stride) throw InvalidArgument("chunking requires window >= stride >= 1");
  if (total == 0) return {};
  if (total <= window) return {{0, total}};
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + window <= total; s += stride) starts.push_back(s);
  if (starts.back() + window < total) {
    const std::size_t tail = total - window;
    while (starts.size() >= 2 && starts[starts.size() - 2] + window >= tail) starts.pop_back();
    starts.push_back(tail);
  }
  std::vector<SpanBounds> out;
  out.reserve(starts.size());
  for (std::size_t s : starts) out.push_back({s, s + window});
  return out;
}

std::vector<std::uint32_t> window_owners(const std::vector<SpanBounds>& spans, std::size_t total) {
  std::vector<std::uint32_t> owner(total, 0);
  std::size_t w = 0;
  for (std::size_t pos = 0; pos < total; ++pos) {
    while (w < spans.size() && spans[w].end <= pos) ++w;
    if (w == spans.size() || spans[w].start > pos) throw Error("windows do not cover the sequence");
    owner[pos] = static_cast<std::uint32_t>(w);
  }
  return owner;
}

std::vector<TokenSpan> chunk_trajectory(const Trajectory& t, const Tokenizer& tokenizer, std::size_t window,
                                        std::size_t stride) {
  auto tok = tokenize_trajectory(t, tokenizer);
  std::vector<TokenSpan> out;
  for (const auto& b : chunk_bounds(tok.size(), window, stride)) {
    TokenSpan s;
    s.trajectory_key = t.key;
    s.start = b.start;
    s.end = b.end;
    s.token_ids.assign(tok.ids.begin() + static_cast<std::ptrdiff_t>(b.start),
                       tok.ids.begin() + static_cast<std::ptrdiff_t>(b.end));
    for (std::size_t i = b.start; i < b.end; ++i) s.role_mask.push_back(tok.assistant[i] != 0);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace trajlens
