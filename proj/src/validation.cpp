#include "trajlens/validation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include <spdlog/spdlog.h>

#include "trajlens/rng.hpp"

namespace trajlens {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(SamplingMode m) {
  return m == SamplingMode::hypothesis_random ? "hypothesis_random" : "random_both";
}
std::string_view to_string(Answer a) { return a == Answer::A ? "A" : "B"; }
std::string_view to_string(Condition c) { return c == Condition::baseline ? "baseline" : "with_hypothesis"; }

SamplingMode parse_sampling_mode(std::string_view s) {
  if (s == "hypothesis_random") return SamplingMode::hypothesis_random;
  if (s == "random_both") return SamplingMode::random_both;
  throw InvalidArgument("unknown sampling mode '" + std::string(s) + "'");
}

std::pair<BatchRange, BatchRange> default_class_ranges(const Corpus& corpus, std::int64_t n) {
  const auto batches = corpus.batches();
  if (batches.empty() || n <= 0) return {};
  const auto k = static_cast<std::size_t>(std::min<std::int64_t>(n, static_cast<std::int64_t>(batches.size())));
  BatchRange early{batches.front(), batches[k - 1] + 1};
  BatchRange late{batches[batches.size() - k], batches.back() + 1};
  return {early, late};
}

SpanBounds centered_window(std::size_t center, std::size_t width, std::size_t total) {
  if (total <= width) return {0, total};
  std::size_t start = center > width / 2 ? center - width / 2 : 0;
  if (start + width > total) start = total - width;
  return {start, start + width};
}

namespace {

class TokenCache {
 public:
  TokenCache(const Corpus& c, const Tokenizer& t) : corpus_(c), tok_(t) {}
  const TokenizedTrajectory& get(std::size_t i) {
    auto it = cache_.find(i);
    if (it == cache_.end()) it = cache_.emplace(i, tokenize_trajectory(corpus_[i], tok_)).first;
    return it->second;
  }
  const Tokenizer& tokenizer() const { return tok_; }

 private:
  const Corpus& corpus_;
  const Tokenizer& tok_;
  std::map<std::size_t, TokenizedTrajectory> cache_;
};

struct ResolvedAnchor {
  std::size_t traj;
  std::size_t center;
};

std::optional<std::size_t> locate_quote(const TokenizedTrajectory& tt, const Tokenizer& tok, const std::string& quote) {
  const auto q = tok.pieces(quote);
  if (q.empty() || q.size() > tt.size()) return std::nullopt;
  auto it = std::search(tt.pieces.begin(), tt.pieces.end(), q.begin(), q.end());
  if (it == tt.pieces.end()) return std::nullopt;
  return static_cast<std::size_t>(it - tt.pieces.begin()) + q.size() / 2;
}

SampleWindow make_window(const Corpus& corpus, TokenCache& cache, std::size_t traj, std::size_t center,
                         std::size_t width, bool anchored) {
  const auto& tt = cache.get(traj);
  const auto span = centered_window(center, width, tt.size());
  SampleWindow w;
  w.trajectory_id = corpus[traj].key.to_string();
  w.start = span.start;
  w.end = span.end;
  w.text = cache.tokenizer().join(tt.pieces, span.start, span.end);
  w.anchored = anchored;
  return w;
}

SampleWindow random_window(const Corpus& corpus, TokenCache& cache, const std::vector<std::size_t>& pool,
                           std::size_t width, Rng& rng) {
  const std::size_t traj = pool[rng.uniform_index(pool.size())];
  const auto& tt = cache.get(traj);
  std::vector<std::size_t> assistant;
  for (std::size_t i = 0; i < tt.size(); ++i)
    if (tt.assistant[i]) assistant.push_back(i);
  const std::size_t center =
      assistant.empty() ? static_cast<std::size_t>(rng.uniform_index(std::max<std::size_t>(1, tt.size())))
                        : assistant[rng.uniform_index(assistant.size())];
  return make_window(corpus, cache, traj, center, width, false);
}

}  // namespace

DrawResult draw_pairs(const Hypothesis& hypothesis, const Corpus& corpus, const Tokenizer& tokenizer,
                      const DrawOptions& options) {
  auto [def_early, def_late] = default_class_ranges(corpus);
  const BatchRange early = options.early.value_or(def_early);
  const BatchRange late = options.late.value_or(def_late);
  if (early.overlaps(late)) throw InvalidArgument("class batch ranges overlap");
  if (options.window_tokens == 0) throw InvalidArgument("window_tokens must be positive");
  std::vector<std::size_t> early_pool, late_pool;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (early.contains(corpus[i].key.batch)) early_pool.push_back(i);
    if (late.contains(corpus[i].key.batch)) late_pool.push_back(i);
  }
  if (early_pool.empty() || late_pool.empty()) throw InvalidArgument("a class batch range holds no trajectories");

  const bool positive_late = hypothesis.positive_is_late();
  const BatchRange& pos_range = positive_late ? late : early;
  TokenCache cache(corpus, tokenizer);
  DrawResult out;
  out.effective_mode = options.mode;
  std::vector<ResolvedAnchor> anchors;
  if (options.mode == SamplingMode::hypothesis_random) {
    for (const auto& a : hypothesis.examples) {
      auto idx = corpus.index_of(a.trajectory_id);
      if (!idx || !pos_range.contains(corpus[*idx].key.batch)) continue;
      const auto& tt = cache.get(*idx);
      std::optional<std::size_t> center;
      if (a.token_pos && *a.token_pos < tt.size()) center = *a.token_pos;
      else if (a.quote) center = locate_quote(tt, tokenizer, *a.quote);
      if (center) anchors.push_back({*idx, *center});
    }
    if (anchors.empty()) {
      out.warnings.add("hypothesis " + hypothesis.id + " has no usable anchors in its positive class; sampling both sides at random");
      out.effective_mode = SamplingMode::random_both;
    }
  }

  for (std::size_t i = 0; i < options.n_pairs; ++i) {
    Rng rng(derive_seed(derive_seed(options.seed, "pairs"), i));
    SampleWindow early_w, late_w;
    if (out.effective_mode == SamplingMode::hypothesis_random) {
      const auto& a = anchors[rng.uniform_index(anchors.size())];
      SampleWindow pos = make_window(corpus, cache, a.traj, a.center, options.window_tokens, true);
      SampleWindow neg = random_window(corpus, cache, positive_late ? early_pool : late_pool, options.window_tokens, rng);
      early_w = positive_late ? std::move(neg) : std::move(pos);
      late_w = positive_late ? std::move(pos) : std::move(neg);
    } else {
      early_w = random_window(corpus, cache, early_pool, options.window_tokens, rng);
      late_w = random_window(corpus, cache, late_pool, options.window_tokens, rng);
    }
    SamplePair p;
    char id[24];
    std::snprintf(id, sizeof id, "P%03zu", i);
    p.pair_id = id;
    p.true_answer = rng.uniform_index(2) == 0 ? Answer::A : Answer::B;
    p.window_a = p.true_answer == Answer::A ? late_w : early_w;
    p.window_b = p.true_answer == Answer::A ? early_w : late_w;
    p.sample_a = p.window_a.text;
    p.sample_b = p.window_b.text;
    p.class_early_range = early;
    p.class_late_range = late;
    p.sampling_mode = out.effective_mode;
    out.pairs.push_back(std::move(p));
  }
  return out;
}

std::vector<Anchor> anchors_from_index(std::span<const std::uint32_t> feature_ids, const FeatureIndex& index,
                                       const StoreMeta& meta, std::size_t per_feature) {
  std::vector<Anchor> out;
  std::set<std::pair<std::string, std::uint32_t>> seen;
  for (auto f : feature_ids) {
    if (f >= index.n_features()) continue;
    for (const auto& ex : top_examples(index, meta, f, per_feature)) {
      std::string id = ex.trajectory_key.to_string();
      if (!seen.insert({id, ex.token_pos}).second) continue;
      out.push_back({std::move(id), ex.token_pos, std::nullopt});
    }
  }
  return out;
}

std::string build_judge_prompt(const SamplePair& pair, const Hypothesis* hypothesis, const JudgeOptions& options) {
  const auto& lib = options.library ? *options.library : prompts::PromptLibrary::builtin();
  if (!hypothesis)
    return lib.render("judge_baseline", {{"type_specific_question", options.question},
                                         {"sample_a", pair.sample_a},
                                         {"sample_b", pair.sample_b}});
  return lib.render("judge_hypothesis", {{"type_specific_question", options.question},
                                         {"hypothesis", hypothesis->statement},
                                         {"sample_a", pair.sample_a},
                                         {"sample_b", pair.sample_b}});
}

std::optional<Answer> parse_judge_answer(std::string_view reply) {
  auto block = extract_json_block(reply);
  if (!block) return std::nullopt;
  const json j = json::parse(*block, nullptr, false);
  if (!j.is_object() || !j.contains("answer") || !j.at("answer").is_string()) return std::nullopt;
  std::string a = ascii_lower(trim(j.at("answer").get<std::string>()));
  if (a.rfind("sample ", 0) == 0) a = std::string(trim(std::string_view(a).substr(7)));
  if (a == "a") return Answer::A;
  if (a == "b") return Answer::B;
  return std::nullopt;
}

JudgeVerdict judge_pair(const SamplePair& pair, const Hypothesis* hypothesis, ChatClient& client,
                        std::string judge_id, const JudgeOptions& options) {
  JudgeVerdict v;
  v.pair_id = pair.pair_id;
  v.judge_id = std::move(judge_id);
  v.condition = hypothesis ? Condition::with_hypothesis : Condition::baseline;
  auto request = ChatRequest::user(build_judge_prompt(pair, hypothesis, options));
  request.temperature = 0.0;
  for (int attempt = 0; attempt <= options.retries && !v.answer; ++attempt) {
    try {
      v.answer = parse_judge_answer(client.complete(request));
    } catch (const LlmError& e) {
      spdlog::warn("judge {} on {}: {}", v.judge_id, v.pair_id, e.what());
    }
  }
  v.correct = v.answer && *v.answer == pair.true_answer;
  return v;
}

double mcnemar_exact(std::uint64_t b, std::uint64_t c) {
  const std::uint64_t n = b + c;
  if (n == 0) return 1.0;
  const std::uint64_t m = std::min(b, c);
  double tail;
  if (n <= 62) {
    std::uint64_t coef = 1, sum = 0;
    for (std::uint64_t k = 0; k <= m; ++k) {
      sum += coef;
      coef = coef * (n - k) / (k + 1);
    }
    tail = std::ldexp(static_cast<double>(sum), -static_cast<int>(n));
  } else {
    const double nd = static_cast<double>(n);
    const double ln2n = nd * std::log(2.0);
    std::vector<double> terms;
    for (std::uint64_t k = 0; k <= m; ++k) {
      const double kd = static_cast<double>(k);
      terms.push_back(std::lgamma(nd + 1) - std::lgamma(kd + 1) - std::lgamma(nd - kd + 1) - ln2n);
    }
    const double top = *std::max_element(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += std::exp(t - top);
    tail = std::exp(top + std::log(s));
  }
  return std::min(1.0, 2.0 * tail);
}

std::optional<double> fleiss_kappa(const std::vector<std::vector<Answer>>& ratings) {
  if (ratings.size() < 2) throw InvalidArgument("fleiss_kappa needs at least two rated items");
  const std::size_t n = ratings.front().size();
  if (n < 2) throw InvalidArgument("fleiss_kappa needs at least two raters");
  double pa = 0.0, pbar = 0.0;
  for (const auto& row : ratings) {
    if (row.size() != n) throw InvalidArgument("fleiss_kappa needs the same number of raters per item");
    const double na = static_cast<double>(std::count(row.begin(), row.end(), Answer::A));
    const double nb = static_cast<double>(n) - na;
    pa += na;
    pbar += (na * na + nb * nb - static_cast<double>(n)) / (static_cast<double>(n) * (static_cast<double>(n) - 1));
  }
  const double N = static_cast<double>(ratings.size());
  pa /= N * static_cast<double>(n);
  pbar /= N;
  const double pe = pa * pa + (1 - pa) * (1 - pa);
  if (pe >= 1.0 - 1e-12) return std::nullopt;
  return (pbar - pe) / (1.0 - pe);
}

Contingency tabulate(std::span<const JudgeVerdict> verdicts, std::uint64_t* excluded) {
  std::map<std::pair<std::string, std::string>, std::pair<const JudgeVerdict*, const JudgeVerdict*>> units;
  for (const auto& v : verdicts) {
    auto& u = units[{v.pair_id, v.judge_id}];
    (v.condition == Condition::baseline ? u.first : u.second) = &v;
  }
  Contingency t;
  std::uint64_t skipped = 0;
  for (const auto& [key, u] : units) {
    if (!u.first || !u.second || !u.first->answer || !u.second->answer) {
      ++skipped;
      continue;
    }
    const bool base = u.first->correct, hyp = u.second->correct;
    if (base && hyp) ++t.a;
    else if (base) ++t.b;
    else if (hyp) ++t.c;
    else ++t.d;
  }
  if (excluded) *excluded = skipped;
  return t;
}

bool is_significant(double uplift, double p_value) { return uplift > 0.0 && p_value < 0.05; }

namespace {

std::optional<double> condition_kappa(std::span<const JudgeVerdict> verdicts, std::span<const SamplePair> pairs,
                                      Condition cond) {
  std::set<std::string> judges;
  std::map<std::string, std::map<std::string, Answer>> by_pair;
  for (const auto& v : verdicts) {
    if (v.condition != cond) continue;
    judges.insert(v.judge_id);
    if (v.answer) by_pair[v.pair_id][v.judge_id] = *v.answer;
  }
  if (judges.size() < 2) return std::nullopt;
  std::vector<std::vector<Answer>> rows;
  for (const auto& p : pairs) {
    auto it = by_pair.find(p.pair_id);
    if (it == by_pair.end() || it->second.size() != judges.size()) continue;
    std::vector<Answer> row;
    for (const auto& [j, a] : it->second) row.push_back(a);
    rows.push_back(std::move(row));
  }
  if (rows.size() < 2) return std::nullopt;
  return fleiss_kappa(rows);
}

}  // namespace

ValidationResult summarize_verdicts(const Hypothesis& hypothesis, std::span<const JudgeVerdict> verdicts,
                                    std::span<const SamplePair> pairs) {
  ValidationResult r;
  r.hypothesis_id = hypothesis.id;
  r.hypothesis_name = hypothesis.name;
  r.source = hypothesis.source;
  const Contingency t = tabulate(verdicts, &r.excluded_units);
  if (t.n() == 0) throw EvaluationError("hypothesis " + hypothesis.id + " has no usable judged units");
  r.a = t.a;
  r.b = t.b;
  r.c = t.c;
  r.d = t.d;
  r.accuracy_baseline = t.accuracy_baseline();
  r.accuracy_hypothesis = t.accuracy_hypothesis();
  r.uplift = t.uplift();
  r.p_value = mcnemar_exact(t.b, t.c);
  r.significant = is_significant(r.uplift, r.p_value);
  r.kappa_baseline = condition_kappa(verdicts, pairs, Condition::baseline);
  r.kappa_hypothesis = condition_kappa(verdicts, pairs, Condition::with_hypothesis);
  std::vector<std::string> judge_order;
  for (const auto& v : verdicts)
    if (std::find(judge_order.begin(), judge_order.end(), v.judge_id) == judge_order.end())
      judge_order.push_back(v.judge_id);
  for (const auto& j : judge_order) {
    std::vector<JudgeVerdict> mine;
    for (const auto& v : verdicts)
      if (v.judge_id == j) mine.push_back(v);
    JudgeBreakdown b;
    b.judge_id = j;
    b.table = tabulate(mine);
    b.p_value = mcnemar_exact(b.table.b, b.table.c);
    r.per_judge.push_back(std::move(b));
  }
  return r;
}

ValidationResult evaluate_hypothesis(const Hypothesis& hypothesis, std::span<const SamplePair> pairs,
                                     std::span<const NamedJudge> judges, const JudgeOptions& options,
                                     std::vector<JudgeVerdict>* verdicts_out) {
  if (judges.empty()) throw InvalidArgument("evaluate_hypothesis needs at least one judge");
  for (const auto& j : judges)
    if (!j.client) throw InvalidArgument("judge '" + j.id + "' has no client");
  std::vector<JudgeVerdict> verdicts(judges.size() * pairs.size() * 2);
  for (std::size_t j = 0; j < judges.size(); ++j) {
    run_bounded(pairs.size() * 2, options.concurrency, [&](std::size_t k) {
      const std::size_t p = k / 2;
      const Hypothesis* h = (k % 2) ? &hypothesis : nullptr;
      verdicts[j * pairs.size() * 2 + k] = judge_pair(pairs[p], h, *judges[j].client, judges[j].id, options);
    });
  }
  ValidationResult r = summarize_verdicts(hypothesis, verdicts, pairs);
  if (verdicts_out) *verdicts_out = std::move(verdicts);
  return r;
}

namespace {

ordered_json opt_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }
std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

ordered_json validation_result_to_json(const ValidationResult& r) {
  ordered_json j;
  j["hypothesis_id"] = r.hypothesis_id;
  j["name"] = r.hypothesis_name;
  j["source"] = r.source ? ordered_json(std::string(to_string(*r.source))) : ordered_json(nullptr);
  j["a"] = r.a;
  j["b"] = r.b;
  j["c"] = r.c;
  j["d"] = r.d;
  j["accuracy_baseline"] = r.accuracy_baseline;
  j["accuracy_hypothesis"] = r.accuracy_hypothesis;
  j["uplift"] = r.uplift;
  j["p_value"] = r.p_value;
  j["significant"] = r.significant;
  j["excluded_units"] = r.excluded_units;
  j["kappa_baseline"] = opt_json(r.kappa_baseline);
  j["kappa_hypothesis"] = opt_json(r.kappa_hypothesis);
  ordered_json per = ordered_json::array();
  for (const auto& b : r.per_judge)
    per.push_back({{"judge", b.judge_id},
                   {"a", b.table.a},
                   {"b", b.table.b},
                   {"c", b.table.c},
                   {"d", b.table.d},
                   {"uplift", b.table.uplift()},
                   {"p_value", b.p_value}});
  j["per_judge"] = per;
  return j;
}

ValidationResult validation_result_from_json(const json& j) {
  ValidationResult r;
  r.hypothesis_id = j.at("hypothesis_id").get<std::string>();
  r.hypothesis_name = j.value("name", "");
  if (j.contains("source") && j.at("source").is_string()) r.source = parse_source(j.at("source").get<std::string>());
  r.a = j.at("a").get<std::uint64_t>();
  r.b = j.at("b").get<std::uint64_t>();
  r.c = j.at("c").get<std::uint64_t>();
  r.d = j.at("d").get<std::uint64_t>();
  r.accuracy_baseline = j.at("accuracy_baseline").get<double>();
  r.accuracy_hypothesis = j.at("accuracy_hypothesis").get<double>();
  r.uplift = j.at("uplift").get<double>();
  r.p_value = j.at("p_value").get<double>();
  r.significant = j.at("significant").get<bool>();
  r.excluded_units = j.value("excluded_units", std::uint64_t{0});
  r.kappa_baseline = opt_from(j, "kappa_baseline");
  r.kappa_hypothesis = opt_from(j, "kappa_hypothesis");
  if (j.contains("per_judge"))
    for (const auto& b : j.at("per_judge")) {
      JudgeBreakdown jb;
      jb.judge_id = b.at("judge").get<std::string>();
      jb.table = {b.at("a").get<std::uint64_t>(), b.at("b").get<std::uint64_t>(), b.at("c").get<std::uint64_t>(),
                  b.at("d").get<std::uint64_t>()};
      jb.p_value = b.at("p_value").get<double>();
      r.per_judge.push_back(std::move(jb));
    }
  return r;
}

int percent_rounded(std::size_t k, std::size_t n) {
  if (n == 0) return 0;
  return static_cast<int>((200 * k + n) / (2 * n));
}

std::string significance_header(std::size_t k, std::size_t n) {
  return std::to_string(percent_rounded(k, n)) + "% (" + std::to_string(k) + "/" + std::to_string(n) + ")";
}

std::string format_uplift(double uplift, bool significant) {
  char buf[32];
  double pct = std::round(uplift * 1000.0) / 10.0;
  if (pct == 0.0) pct = 0.0;
  std::snprintf(buf, sizeof buf, "%+.1f%%", pct);
  return std::string(buf) + (significant ? "*" : "");
}

std::string format_p(double p) {
  if (p < 1e-4) return "<1e-4";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", p);
  return buf;
}

namespace {

std::string source_key(const ValidationResult& r) { return r.source ? std::string(to_string(*r.source)) : "unknown"; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<UpliftSection> uplift_sections(std::span<const ValidationResult> results) {
  static const char* order[] = {"sae_meta", "sae_feature", "llm", "unknown"};
  std::vector<UpliftSection> out;
  for (const char* src : order) {
    UpliftSection s;
    s.source = src;
    for (const auto& r : results)
      if (source_key(r) == src) s.rows.push_back(&r);
    if (s.rows.empty()) continue;
    std::stable_sort(s.rows.begin(), s.rows.end(), [](const ValidationResult* x, const ValidationResult* y) {
      if (x->uplift != y->uplift) return x->uplift > y->uplift;
      return x->hypothesis_id < y->hypothesis_id;
    });
    s.total = s.rows.size();
    s.significant = static_cast<std::size_t>(
        std::count_if(s.rows.begin(), s.rows.end(), [](const ValidationResult* r) { return r->significant; }));
    out.push_back(std::move(s));
  }
  return out;
}

std::string uplift_report_csv(std::span<const ValidationResult> results) {
  std::string out =
      "source,hypothesis_id,name,a,b,c,d,accuracy_baseline,accuracy_hypothesis,uplift,p_value,significant\n";
  for (const auto& s : uplift_sections(results))
    for (const auto* r : s.rows)
      out += s.source + "," + csv_field(r->hypothesis_id) + "," + csv_field(r->hypothesis_name) + "," +
             std::to_string(r->a) + "," + std::to_string(r->b) + "," + std::to_string(r->c) + "," +
             std::to_string(r->d) + "," + g17(r->accuracy_baseline) + "," + g17(r->accuracy_hypothesis) + "," +
             g17(r->uplift) + "," + g17(r->p_value) + "," + (r->significant ? "true" : "false") + "\n";
  return out;
}

ordered_json uplift_report_json(std::span<const ValidationResult> results) {
  ordered_json sections = ordered_json::array();
  for (const auto& s : uplift_sections(results)) {
    ordered_json rows = ordered_json::array();
    for (const auto* r : s.rows) rows.push_back(validation_result_to_json(*r));
    sections.push_back({{"source", s.source},
                        {"significant", s.significant},
                        {"total", s.total},
                        {"header", significance_header(s.significant, s.total)},
                        {"rows", rows}});
  }
  return {{"sections", sections}};
}

std::string uplift_report_markdown(std::span<const ValidationResult> results) {
  std::string out;
  for (const auto& s : uplift_sections(results)) {
    out += "### " + s.source + ": " + significance_header(s.significant, s.total) + "\n\n";
    out += "| Hypothesis | Uplift | p |\n|---|---:|---:|\n";
    for (const auto* r : s.rows)
      out += "| " + (r->hypothesis_name.empty() ? r->hypothesis_id : r->hypothesis_name) + " | " +
             format_uplift(r->uplift, r->significant) + " | " + format_p(r->p_value) + " |\n";
    out += "\n";
  }
  return out;
}

}  // namespace trajlens
