#include "trajlens/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <set>

#include "trajlens/hashing.hpp"
#include "trajlens/interp.hpp"
#include "trajlens/rng.hpp"

namespace trajlens::synth {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Trend t) {
  switch (t) {
    case Trend::increasing: return "increasing";
    case Trend::decreasing: return "decreasing";
    case Trend::flat: return "flat";
    case Trend::step_change: return "step_change";
  }
  return "flat";
}

Trend parse_trend(std::string_view s) {
  if (s == "increasing") return Trend::increasing;
  if (s == "decreasing") return Trend::decreasing;
  if (s == "flat") return Trend::flat;
  if (s == "step_change") return Trend::step_change;
  throw InvalidArgument("unknown trend '" + std::string(s) + "'");
}

double planted_rate(const PlantedFeatureSpec& spec, std::int64_t batch, std::int64_t n_batches) {
  const double t = n_batches > 1 ? static_cast<double>(batch) / static_cast<double>(n_batches - 1) : 0.0;
  double r = spec.base_rate;
  switch (spec.trend) {
    case Trend::increasing: r = spec.base_rate + spec.slope * t; break;
    case Trend::decreasing: r = spec.base_rate - spec.slope * t; break;
    case Trend::flat: break;
    case Trend::step_change: r = batch >= spec.at_batch ? spec.base_rate + spec.slope : spec.base_rate; break;
  }
  if (!(r >= 0.0 && r <= 1.0))
    throw InvalidArgument("feature " + std::to_string(spec.feature_id) + " has rate " + std::to_string(r) +
                          " at batch " + std::to_string(batch));
  return r;
}

ordered_json spec_to_json(const PlantedFeatureSpec& s) {
  ordered_json j;
  j["feature_id"] = s.feature_id;
  j["trend"] = to_string(s.trend);
  j["base_rate"] = s.base_rate;
  j["slope"] = s.slope;
  j["at_batch"] = s.at_batch;
  j["token_vocabulary"] = s.token_vocabulary;
  j["theme"] = s.theme;
  return j;
}

PlantedFeatureSpec spec_from_json(const json& j) {
  PlantedFeatureSpec s;
  s.feature_id = j.at("feature_id").get<std::uint32_t>();
  s.trend = parse_trend(j.at("trend").get<std::string>());
  s.base_rate = j.value("base_rate", 0.2);
  s.slope = j.value("slope", 0.0);
  s.at_batch = j.value("at_batch", std::int64_t{0});
  s.token_vocabulary = j.at("token_vocabulary").get<std::vector<std::string>>();
  s.theme = j.value("theme", "");
  if (s.token_vocabulary.empty()) throw InvalidArgument("spec " + std::to_string(s.feature_id) + " has no vocabulary");
  return s;
}

const std::vector<Theme>& builtin_themes() {
  static const std::vector<Theme> themes = {
      {"Imperial Roleplay",
       "Adopts an imperial persona, invoking Imperial Majesty, Emperor Napoleon and imperial edict language toward "
       "other powers",
       5,
       {"Imperial Majesty", "Emperor Napoleon decrees", "imperial edict"}},
      {"Formal NAP Proposals", "Proposes a formal NAP treaty or non-aggression pact to neighbouring powers", 4,
       {"non-aggression pact", "formal NAP treaty"}},
      {"Spheres of Sovereignty", "Divides the map into sovereign spheres, assigning a sphere of influence to each power",
       5,
       {"sphere of influence", "sovereign spheres"}},
      {"Self-correction", "Interrupts its own plan with correction noted remarks, admitting it misjudged earlier moves", 4,
       {"correction noted", "I misjudged earlier"}},
      {"Ultimatums", "Issues a final ultimatum demanding that other powers comply immediately", 4,
       {"final ultimatum", "comply immediately"}},
      {"Foreign Language Diplomacy", "Switches into French phrases such as bonjour mon ami and merci beaucoup", 3,
       {"bonjour mon ami", "merci beaucoup"}},
      {"Coalition Building", "Calls for a grand coalition or united front against a common enemy", 4,
       {"grand coalition", "united front"}},
      {"Punctuation", "Runs of emphatic punctuation such as !!! and ;;", 1, {"!!!", ";;"}},
      {"Tool/Environment Errors", "Reports a tool error or an invalid command returned by the game environment", 2,
       {"tool error", "invalid command"}},
      {"Military Strength Assertion", "Boasts of overwhelming force and military supremacy over rivals", 4,
       {"overwhelming force", "military supremacy"}},
  };
  return themes;
}

const Theme* find_theme(std::string_view name) {
  for (const auto& t : builtin_themes())
    if (t.name == name) return &t;
  return nullptr;
}

namespace {

const std::vector<std::string>& filler_vocabulary() {
  static const std::vector<std::string> words = {
      "army",   "fleet",   "move",     "hold",     "support", "convoy",    "north",   "south",  "east",
      "west",   "coast",   "border",   "plan",     "turn",    "next",      "position", "units", "strategy",
      "defend", "advance", "neighbor", "trust",    "talk",    "later",     "now",     "perhaps", "maybe",
      "sea",    "land",    "secure",   "watch",    "build",   "center",    "supply",  "Paris",  "Burgundy",
      "Picardy", "Brest",  "Marseilles", "Gascony", "we",     "should",    "could",   "will",   "then",
      "also"};
  return words;
}

std::string phase_name(std::size_t turn) {
  static const char* seasons[] = {"S", "F", "W"};
  static const char* kinds[] = {"M", "M", "A"};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04zu%s", seasons[turn % 3], 1901 + turn / 3, kinds[turn % 3]);
  return buf;
}

std::string filler_sentence(Rng& rng, std::size_t n) {
  const auto& v = filler_vocabulary();
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out.push_back(' ');
    out += v[rng.uniform_index(v.size())];
  }
  return out;
}

// Per spec, the token positions of its phrase occurrences (same message only),
// plus the positions where an occurrence starts.
struct Firing {
  std::vector<std::vector<std::uint32_t>> positions;
  std::vector<std::vector<std::uint32_t>> starts;
};

Firing scan(const TokenizedTrajectory& tt, std::span<const PlantedFeatureSpec> specs, const Tokenizer& tokenizer) {
  Firing f;
  f.positions.resize(specs.size());
  f.starts.resize(specs.size());
  for (std::size_t s = 0; s < specs.size(); ++s) {
    std::vector<std::uint8_t> mark(tt.size(), 0);
    std::set<std::uint32_t> starts;
    for (const auto& phrase : specs[s].token_vocabulary) {
      const auto q = tokenizer.pieces(phrase);
      if (q.empty() || q.size() > tt.size()) continue;
      for (std::size_t i = 0; i + q.size() <= tt.size(); ++i) {
        if (tt.pieces[i] != q[0]) continue;
        bool ok = true;
        for (std::size_t k = 1; k < q.size() && ok; ++k)
          ok = tt.pieces[i + k] == q[k] && tt.message_index[i + k] == tt.message_index[i];
        if (!ok) continue;
        starts.insert(static_cast<std::uint32_t>(i));
        for (std::size_t k = 0; k < q.size(); ++k) mark[i + k] = 1;
      }
    }
    for (std::size_t i = 0; i < tt.size(); ++i)
      if (mark[i]) f.positions[s].push_back(static_cast<std::uint32_t>(i));
    f.starts[s].assign(starts.begin(), starts.end());
  }
  return f;
}

std::uint64_t occurrence_key(const TrajectoryKey& key, std::uint32_t pos) { return derive_seed(key.hash(), pos); }

}  // namespace

std::vector<PlantedFeatureSpec> make_trend_specs(const TrendSpecOptions& o) {
  std::vector<PlantedFeatureSpec> out;
  const auto& themes = builtin_themes();
  std::size_t theme_i = 0;
  auto trending = [&](Trend t) {
    PlantedFeatureSpec s;
    s.feature_id = static_cast<std::uint32_t>(out.size());
    s.trend = t;
    s.base_rate = t == Trend::increasing ? o.low : o.high;
    s.slope = o.high - o.low;
    if (theme_i < themes.size()) {
      s.theme = themes[theme_i].name;
      s.token_vocabulary = themes[theme_i].phrases;
    } else {
      s.theme = "Generated trend " + std::to_string(s.feature_id);
      s.token_vocabulary = {"trendword" + std::to_string(s.feature_id)};
    }
    ++theme_i;
    out.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < o.n_increasing; ++i) trending(Trend::increasing);
  for (std::size_t i = 0; i < o.n_decreasing; ++i) trending(Trend::decreasing);
  for (std::size_t i = 0; i < o.n_flat; ++i) {
    PlantedFeatureSpec s;
    s.feature_id = static_cast<std::uint32_t>(out.size());
    s.trend = Trend::flat;
    s.base_rate = o.flat_rate;
    s.token_vocabulary = {"qx" + std::to_string(s.feature_id)};
    out.push_back(std::move(s));
  }
  return out;
}

ordered_json GroundTruth::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  ordered_json sp = ordered_json::array();
  for (const auto& s : specs) sp.push_back(spec_to_json(s));
  j["specs"] = sp;
  ordered_json cj = ordered_json::object();
  for (const auto& [id, feats] : cells) {
    ordered_json fj = ordered_json::object();
    for (const auto& [f, c] : feats)
      fj[std::to_string(f)] = {{"tokens", c.tokens},         {"sum", c.sum},         {"tokens_all", c.tokens_all},
                               {"sum_all", c.sum_all},       {"phrases", c.phrases}};
    cj[id] = fj;
  }
  j["cells"] = cj;
  return j;
}

GroundTruth GroundTruth::from_json(const json& j) {
  GroundTruth g;
  g.seed = j.value("seed", std::uint64_t{0});
  for (const auto& s : j.at("specs")) g.specs.push_back(spec_from_json(s));
  for (const auto& [id, feats] : j.at("cells").items())
    for (const auto& [f, c] : feats.items()) {
      TruthCell cell;
      cell.tokens = c.at("tokens").get<std::uint32_t>();
      cell.sum = c.at("sum").get<double>();
      cell.tokens_all = c.at("tokens_all").get<std::uint32_t>();
      cell.sum_all = c.at("sum_all").get<double>();
      cell.phrases = c.at("phrases").get<std::uint32_t>();
      g.cells[id][static_cast<std::uint32_t>(std::stoul(f))] = cell;
    }
  return g;
}

float planted_value(std::uint32_t feature_id, std::string_view piece, std::uint64_t occurrence) {
  const std::uint64_t h = fnv1a64(piece, derive_seed(derive_seed(0x5eedULL, feature_id), occurrence));
  return 1.0f + static_cast<float>(h % 64) / 64.0f;
}

GroundTruth compute_truth(const Corpus& corpus, std::span<const PlantedFeatureSpec> specs, const Tokenizer& tokenizer,
                          std::uint64_t seed) {
  GroundTruth g;
  g.specs.assign(specs.begin(), specs.end());
  g.seed = seed;
  for (const auto& t : corpus) {
    const auto tt = tokenize_trajectory(t, tokenizer);
    const auto fire = scan(tt, specs, tokenizer);
    const std::string id = t.key.to_string();
    for (std::size_t s = 0; s < specs.size(); ++s) {
      if (fire.positions[s].empty()) continue;
      TruthCell c;
      for (auto p : fire.positions[s]) {
        const double v = planted_value(specs[s].feature_id, tt.pieces[p], occurrence_key(t.key, p));
        ++c.tokens_all;
        c.sum_all += v;
        if (tt.assistant[p]) {
          ++c.tokens;
          c.sum += v;
        }
      }
      for (auto p : fire.starts[s])
        if (tt.assistant[p]) ++c.phrases;
      g.cells[id][specs[s].feature_id] = c;
    }
  }
  return g;
}

GeneratedCorpus generate_corpus(std::span<const PlantedFeatureSpec> specs, const CorpusOptions& o,
                                const Tokenizer& tokenizer) {
  if (specs.empty()) throw InvalidArgument("generate_corpus needs at least one spec");
  if (o.n_batches < 1 || o.groups < 1 || o.trajs < 1 || o.turns < 1)
    throw InvalidArgument("generate_corpus needs positive batch, group, trajectory and turn counts");
  std::vector<std::vector<double>> rates(specs.size());
  for (std::size_t s = 0; s < specs.size(); ++s) {
    if (specs[s].token_vocabulary.empty())
      throw InvalidArgument("spec " + std::to_string(specs[s].feature_id) + " has no vocabulary");
    for (std::int64_t b = 0; b < o.n_batches; ++b) rates[s].push_back(planted_rate(specs[s], b, o.n_batches));
  }
  std::vector<const PlantedFeatureSpec*> trending;
  for (const auto& s : specs)
    if (s.trend != Trend::flat) trending.push_back(&s);
  const std::uint64_t root = derive_seed(o.seed, o.run_id);
  std::vector<Trajectory> trajectories;
  for (std::int64_t b = 0; b < o.n_batches; ++b) {
    const double t = o.n_batches > 1 ? static_cast<double>(b) / static_cast<double>(o.n_batches - 1) : 0.0;
    const double dup = std::clamp(o.duplicate_base + o.duplicate_slope * t, 0.0, 1.0);
    for (std::int64_t g = 0; g < o.groups; ++g)
      for (std::int64_t i = 0; i < o.trajs; ++i) {
        Rng rng(derive_seed(root, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(g * 100000 + i)));
        Trajectory tr;
        tr.key = {o.run_id, b, g, i};
        tr.messages.push_back({Role::system, "You are FRANCE in a Diplomacy game.", std::nullopt, {}});
        double planted_total = 0.0;
        for (std::size_t turn = 0; turn < o.turns; ++turn) {
          const std::string phase = phase_name(turn);
          std::string user = "Phase " + phase + " begins. Submit orders.";
          if (!trending.empty() && rng.bernoulli(o.env_echo_rate)) {
            const auto* sp = trending[rng.uniform_index(trending.size())];
            user += " Rumor says " + sp->token_vocabulary[rng.uniform_index(sp->token_vocabulary.size())] + " today.";
          }
          tr.messages.push_back({Role::user, user, std::nullopt, {}});
          std::vector<std::string> words;
          const auto& v = filler_vocabulary();
          for (std::size_t w = 0; w < o.filler_words; ++w) words.push_back(v[rng.uniform_index(v.size())]);
          for (std::size_t s = 0; s < specs.size(); ++s) {
            if (!rng.bernoulli(rates[s][static_cast<std::size_t>(b)])) continue;
            const auto& vocab = specs[s].token_vocabulary;
            const auto& phrase = vocab[rng.uniform_index(vocab.size())];
            const std::size_t at = rng.uniform_index(words.size() + 1);
            words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), phrase);
            if (specs[s].trend == Trend::increasing) planted_total += 1.0;
          }
          std::string text;
          for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
          tr.messages.push_back({Role::assistant, text, std::nullopt, {}});
          for (const char* kind : {"send_message", "write_diary"}) {
            if (!rng.bernoulli(o.tool_call_rate)) continue;
            const std::string body = filler_sentence(rng, 8);
            const int copies = rng.bernoulli(dup) ? 2 : 1;
            for (int c = 0; c < copies; ++c) {
              tr.messages.push_back({Role::assistant, body, std::string(kind), {}});
              tr.messages.push_back({Role::tool, "ok", std::string(kind), {}});
            }
          }
        }
        tr.reward = std::round((planted_total + rng.uniform()) * 1000.0) / 1000.0;
        trajectories.push_back(std::move(tr));
      }
  }
  GeneratedCorpus out;
  out.corpus = Corpus(std::move(trajectories));
  out.truth = compute_truth(out.corpus, specs, tokenizer, o.seed);
  return out;
}

SaeWeights make_planted_weights(std::span<const PlantedFeatureSpec> specs, std::size_t d_model, std::uint64_t seed) {
  std::uint32_t n = 0;
  for (const auto& s : specs) n = std::max(n, s.feature_id + 1);
  if (d_model < n)
    throw InvalidArgument("d_model " + std::to_string(d_model) + " is smaller than " + std::to_string(n) + " features");
  SaeWeights w = SaeWeights::zeros(d_model, n);
  Rng rng(derive_seed(seed, "planted-weights"));
  std::vector<std::size_t> perm(d_model);
  for (std::size_t i = 0; i < d_model; ++i) perm[i] = i;
  rng.shuffle(perm);
  for (std::uint32_t f = 0; f < n; ++f) {
    w.w_enc[f * d_model + perm[f]] = rng.bernoulli(0.5) ? 1.0f : -1.0f;
    w.theta[f] = 0.5f;
  }
  return w;
}

PlantedActivationSource::PlantedActivationSource(std::vector<PlantedFeatureSpec> specs, SaeWeights weights,
                                                 std::uint64_t seed)
    : specs_(std::move(specs)), weights_(std::move(weights)), seed_(seed) {
  weights_.validate();
  for (const auto& s : specs_)
    if (s.feature_id >= weights_.n_features)
      throw InvalidArgument("spec " + std::to_string(s.feature_id) + " has no encoder row");
}

TrajectoryActivations PlantedActivationSource::fetch(const Trajectory& trajectory,
                                                     const TokenizedTrajectory& tokens) const {
  const std::size_t d = weights_.d_model;
  TrajectoryActivations acts;
  acts.d_model = d;
  acts.positions.resize(tokens.size());
  acts.rows.resize(tokens.size() * d);
  Rng rng(derive_seed(seed_, trajectory.key.to_string()));
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    acts.positions[p] = static_cast<std::uint32_t>(p);
    for (std::size_t k = 0; k < d; ++k)
      acts.rows[p * d + k] = static_cast<float>(static_cast<int>(rng.uniform_index(53)) - 26) / 64.0f;
  }
  // The tokenizer is only needed for phrase pieces; whitespace splitting matches the bundled one.
  const WhitespaceTokenizer tok;
  const auto fire = scan(tokens, specs_, tok);
  for (std::size_t s = 0; s < specs_.size(); ++s) {
    const auto row = weights_.row(specs_[s].feature_id);
    std::size_t dim = 0;
    while (dim < d && row[dim] == 0.0f) ++dim;
    const float sign = row[dim];
    for (auto p : fire.positions[s])
      acts.rows[p * d + dim] = sign * planted_value(specs_[s].feature_id, tokens.pieces[p], occurrence_key(trajectory.key, p));
  }
  return acts;
}

void generate_activations(const Corpus& corpus, std::span<const PlantedFeatureSpec> specs, const Tokenizer& tokenizer,
                          std::size_t d_model, std::uint64_t seed, const fs::path& dump_dir,
                          const fs::path& weights_dir) {
  auto weights = make_planted_weights(specs, d_model, seed);
  save_sae_weights(weights, weights_dir);
  PlantedActivationSource source({specs.begin(), specs.end()}, std::move(weights), seed);
  ActivationDumpWriter writer(dump_dir, d_model);
  for (const auto& t : corpus) writer.write(t.key, source.fetch(t, tokenize_trajectory(t, tokenizer)));
  writer.finish();
}

FeatureTable simulate_feature_table(std::span<const PlantedFeatureSpec> specs, const TableOptions& o) {
  std::uint32_t n = 0;
  for (const auto& s : specs) n = std::max(n, s.feature_id + 1);
  FeatureTable table;
  table.features.resize(n);
  const std::uint64_t root = derive_seed(o.seed, o.run_id);
  std::uint32_t idx = 0;
  for (std::int64_t b = 0; b < o.n_batches; ++b) {
    std::vector<double> rates;
    for (const auto& s : specs) rates.push_back(planted_rate(s, b, o.n_batches));
    for (std::size_t i = 0; i < o.per_batch; ++i, ++idx) {
      Rng rng(derive_seed(root, static_cast<std::uint64_t>(b), i));
      std::uint64_t masked = o.turns * 18;
      for (std::size_t s = 0; s < specs.size(); ++s) {
        TrajectoryAggregate agg;
        agg.trajectory = idx;
        for (std::size_t t = 0; t < o.turns; ++t) {
          if (!rng.bernoulli(rates[s])) continue;
          const auto& vocab = specs[s].token_vocabulary;
          for (const auto& piece : split_words(vocab[rng.uniform_index(vocab.size())])) {
            const float v = planted_value(specs[s].feature_id, piece);
            ++agg.count;
            agg.sum += v;
            agg.max = std::max(agg.max, v);
            ++masked;
          }
        }
        if (agg.count) table.features[specs[s].feature_id].push_back(agg);
      }
      table.trajectories.push_back({{o.run_id, b, 0, static_cast<std::int64_t>(i)}, 0.0, masked});
    }
  }
  return table;
}

DivergenceSpecs make_divergence_specs(std::size_t n_features, std::size_t n_diverging, std::int64_t at_batch,
                                      double base, double jump) {
  if (n_diverging > n_features) throw InvalidArgument("more diverging features than features");
  DivergenceSpecs d;
  for (std::size_t f = 0; f < n_features; ++f) {
    PlantedFeatureSpec s;
    s.feature_id = static_cast<std::uint32_t>(f);
    s.trend = Trend::flat;
    s.base_rate = base;
    s.token_vocabulary = {"dv" + std::to_string(f)};
    s.theme = "Divergence " + std::to_string(f);
    d.good.push_back(s);
    if (f < n_diverging) {
      s.trend = Trend::step_change;
      s.slope = jump;
      s.at_batch = at_batch;
    }
    d.bad.push_back(s);
  }
  return d;
}

std::pair<FeatureTable, FeatureTable> split_halves(const FeatureTable& table, std::uint64_t seed) {
  std::map<std::int64_t, std::vector<std::uint32_t>> by_batch;
  for (std::uint32_t i = 0; i < table.trajectories.size(); ++i) by_batch[table.trajectories[i].key.batch].push_back(i);
  std::vector<int> side(table.trajectories.size(), 0);
  for (auto& [b, idx] : by_batch) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    rng.shuffle(idx);
    for (std::size_t k = 0; k < idx.size(); ++k) side[idx[k]] = k < idx.size() / 2 ? 0 : 1;
  }
  FeatureTable out[2];
  std::vector<std::uint32_t> remap(table.trajectories.size());
  for (std::uint32_t i = 0; i < table.trajectories.size(); ++i) {
    auto& t = out[side[i]];
    remap[i] = static_cast<std::uint32_t>(t.trajectories.size());
    t.trajectories.push_back(table.trajectories[i]);
  }
  for (auto& t : out) t.features.resize(table.features.size());
  for (std::size_t f = 0; f < table.features.size(); ++f)
    for (const auto& a : table.features[f]) {
      auto copy = a;
      copy.trajectory = remap[a.trajectory];
      out[side[a.trajectory]].features[f].push_back(copy);
    }
  return {std::move(out[0]), std::move(out[1])};
}

namespace {

std::uint64_t pair_key(std::string_view a, std::string_view b) {
  std::string s(trim(a));
  s.push_back('\x1f');
  s += trim(b);
  return fnv1a64(s);
}

struct ParsedJudgePrompt {
  std::string sample_a, sample_b;
  std::optional<std::string> hypothesis;
};

std::optional<ParsedJudgePrompt> parse_judge_prompt(const std::string& p) {
  static const std::string ka = "### Sample A:\n", kb = "\n### Sample B:\n", kh = "Hypothesis to consider: ";
  const auto a = p.find(ka);
  const auto b = p.rfind(kb);
  if (a == std::string::npos || b == std::string::npos || b < a) return std::nullopt;
  ParsedJudgePrompt out;
  out.sample_a = std::string(trim(std::string_view(p).substr(a + ka.size(), b - a - ka.size())));
  out.sample_b = std::string(trim(std::string_view(p).substr(b + kb.size())));
  const auto h = p.find(kh);
  if (h != std::string::npos && h < a) {
    const auto nl = p.find('\n', h);
    out.hypothesis = p.substr(h + kh.size(), nl == std::string::npos ? std::string::npos : nl - h - kh.size());
  }
  return out;
}

std::string judge_reply(Answer a, std::string_view why) {
  ordered_json j;
  j["answer"] = to_string(a);
  j["explanation"] = why;
  return j.dump();
}

bool contains_keyword(const std::string& text, const std::vector<std::string>& keywords) {
  const std::string lower = ascii_lower(text);
  for (const auto& k : keywords)
    if (!k.empty() && lower.find(ascii_lower(k)) != std::string::npos) return true;
  return false;
}

}  // namespace

void PairTruth::add(const SamplePair& pair) {
  std::lock_guard lock(mu_);
  answers_[pair_key(pair.sample_a, pair.sample_b)] = pair.true_answer;
}

void PairTruth::add_all(std::span<const SamplePair> pairs) {
  for (const auto& p : pairs) add(p);
}

std::optional<Answer> PairTruth::lookup(std::string_view sample_a, std::string_view sample_b) const {
  std::lock_guard lock(mu_);
  auto it = answers_.find(pair_key(sample_a, sample_b));
  if (it == answers_.end()) return std::nullopt;
  return it->second;
}

std::string_view to_string(JudgeBehavior b) {
  switch (b) {
    case JudgeBehavior::oracle: return "oracle";
    case JudgeBehavior::random: return "random";
    case JudgeBehavior::cue_following: return "cue_following";
  }
  return "random";
}

JudgeBehavior parse_judge_behavior(std::string_view s) {
  if (s == "oracle") return JudgeBehavior::oracle;
  if (s == "random") return JudgeBehavior::random;
  if (s == "cue_following" || s == "cue") return JudgeBehavior::cue_following;
  throw InvalidArgument("unknown judge behavior '" + std::string(s) + "'");
}

std::unique_ptr<ScriptedChatClient> scripted_judge(JudgeBehavior behavior, std::shared_ptr<const PairTruth> truth,
                                                   std::vector<std::string> keywords, std::uint64_t seed) {
  return std::make_unique<ScriptedChatClient>(
      [behavior, truth = std::move(truth), keywords = std::move(keywords), seed](const ChatRequest& req, std::size_t) {
        const std::string& prompt = req.prompt();
        const Answer coin = (derive_seed(seed, fnv1a64(prompt)) & 1) ? Answer::B : Answer::A;
        const auto parsed = parse_judge_prompt(prompt);
        if (!parsed) return judge_reply(coin, "unrecognized prompt");
        const auto known = truth ? truth->lookup(parsed->sample_a, parsed->sample_b) : std::nullopt;
        if (behavior == JudgeBehavior::random || !known) return judge_reply(coin, "guess");
        if (behavior == JudgeBehavior::oracle) return judge_reply(*known, "known ordering");
        if (parsed->hypothesis && contains_keyword(*parsed->hypothesis, keywords))
          return judge_reply(*known, "the hypothesis cue points to this sample");
        return judge_reply(coin, "no usable cue");
      });
}

std::vector<std::string> planted_keywords(std::span<const PlantedFeatureSpec> specs) {
  std::set<std::string> out;
  for (const auto& s : specs) {
    if (s.trend == Trend::flat) continue;
    for (const auto& phrase : s.token_vocabulary) {
      // Symbol-only phrases such as "!!!" are their own cue.
      if (std::none_of(phrase.begin(), phrase.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); })) {
        out.insert(phrase);
        continue;
      }
      for (const auto& w : split_words(phrase)) {
        const std::string lw = ascii_lower(w);
        const bool alpha = std::any_of(lw.begin(), lw.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); });
        if (alpha && lw.size() >= 5) out.insert(lw);
      }
    }
  }
  return {out.begin(), out.end()};
}

namespace {

const PlantedFeatureSpec* spec_by_id(const std::vector<PlantedFeatureSpec>& specs, std::uint32_t id) {
  for (const auto& s : specs)
    if (s.feature_id == id) return &s;
  return nullptr;
}

std::vector<std::string> marked_pieces(const std::string& prompt) {
  std::vector<std::string> out;
  const std::string open(kOpenMark), close(kCloseMark);
  std::size_t pos = 0;
  while ((pos = prompt.find(open, pos)) != std::string::npos) {
    const auto end = prompt.find(close, pos + open.size());
    if (end == std::string::npos) break;
    out.push_back(prompt.substr(pos + open.size(), end - pos - open.size()));
    pos = end + close.size();
  }
  return out;
}

std::string quoted_list(const std::vector<std::string>& xs) {
  std::string out;
  for (const auto& x : xs) out += (out.empty() ? "'" : ", '") + x + "'";
  return out;
}

std::string autointerp_reply(const std::vector<PlantedFeatureSpec>& specs, const std::string& prompt) {
  static const std::regex id_re(R"(F(\d+) \(score )");
  std::smatch m;
  if (!std::regex_search(prompt, m, id_re)) return "I cannot identify the feature.";
  const auto id = static_cast<std::uint32_t>(std::stoul(m[1].str()));
  const PlantedFeatureSpec* spec = spec_by_id(specs, id);
  const Theme* theme = spec ? find_theme(spec->theme) : nullptr;
  if (!theme) {
    // Vote by marked tokens.
    std::map<std::string, int> votes;
    for (const auto& piece : marked_pieces(prompt))
      for (const auto& t : builtin_themes())
        for (const auto& ph : t.phrases)
          for (const auto& w : split_words(ph))
            if (w == piece) ++votes[t.name];
    if (!spec && !votes.empty())
      theme = find_theme(std::max_element(votes.begin(), votes.end(), [](auto& a, auto& b) { return a.second < b.second; })->first);
  }
  const std::string head = "F" + std::to_string(id);
  if (!theme) {
    const std::string vocab = spec ? quoted_list(spec->token_vocabulary) : "'?'";
    return head + " (Interestingness=2, FC=4, CC=2, EC=3):\nToken: generated filler token " + vocab +
           "\nContext: appears uniformly in assistant messages\nInsight: no behavioral signal\n";
  }
  return head + " (Interestingness=" + std::to_string(theme->interestingness) +
         ", FC=5, CC=4, EC=4):\nToken: " + quoted_list(theme->phrases) + "\nContext: " + theme->description +
         "\nInsight: marks the " + theme->name + " behavior\n";
}

std::string meta_reply(const std::vector<PlantedFeatureSpec>& specs, const std::string& prompt) {
  static const std::regex line_re(R"(^F(\d+) \(score [^,]*, direction (positive|negative))");
  const auto start = prompt.find("Features to cluster:");
  std::string body = start == std::string::npos ? prompt : prompt.substr(start);
  std::vector<std::pair<std::string, std::string>> order;  // (theme, direction)
  std::map<std::pair<std::string, std::string>, std::vector<std::uint32_t>> groups;
  std::size_t pos = 0;
  while (pos < body.size()) {
    auto nl = body.find('\n', pos);
    if (nl == std::string::npos) nl = body.size();
    const std::string line = body.substr(pos, nl - pos);
    pos = nl + 1;
    std::smatch m;
    if (!std::regex_search(line, m, line_re)) continue;
    const auto id = static_cast<std::uint32_t>(std::stoul(m[1].str()));
    const PlantedFeatureSpec* spec = spec_by_id(specs, id);
    const std::string theme = spec && find_theme(spec->theme) ? spec->theme : "Miscellaneous Tokens";
    const std::pair<std::string, std::string> key{theme, m[2].str()};
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(id);
  }
  std::string out;
  for (const auto& key : order) {
    const Theme* t = find_theme(key.first);
    const std::string desc = t ? t->description : "Assorted low-signal tokens";
    const std::string prefix =
        key.second == "positive" ? "Increases with training steps" : "Decreases with training steps";
    std::string ids;
    for (auto id : groups[key]) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
    out += "CLUSTER: " + key.first + "\nDIRECTION: " + key.second + "\nFEATURE: " + desc + "\nHYPOTHESIS: " + prefix +
           ": " + desc + "\nFEATURES: " + ids + "\n\n";
  }
  return out;
}

}  // namespace

std::unique_ptr<ScriptedChatClient> planted_interp_client(std::vector<PlantedFeatureSpec> specs) {
  return std::make_unique<ScriptedChatClient>([specs = std::move(specs)](const ChatRequest& req, std::size_t) {
    const std::string& p = req.prompt();
    if (p.find("Features to cluster:") != std::string::npos) return meta_reply(specs, p);
    return autointerp_reply(specs, p);
  });
}

namespace {

std::map<std::string, std::size_t> theme_counts(const std::vector<PlantedFeatureSpec>& specs, std::string_view text) {
  std::map<std::string, std::size_t> out;
  for (const auto& s : specs) {
    const Theme* t = find_theme(s.theme);
    if (!t) continue;
    for (const auto& ph : t->phrases) {
      std::size_t pos = 0;
      while ((pos = text.find(ph, pos)) != std::string_view::npos) {
        ++out[t->name];
        pos += ph.size();
      }
    }
  }
  return out;
}

std::string trajectory_reply(const std::vector<PlantedFeatureSpec>& specs, const std::string& prompt) {
  static const std::regex phase_re(R"([SFW]\d{4}[MRA])");
  // The template's own format example precedes the transcript.
  const auto transcript_at = prompt.find("[system]");
  const std::string tail = transcript_at == std::string::npos ? prompt : prompt.substr(transcript_at);
  std::vector<std::string> phases;
  for (auto it = std::sregex_iterator(tail.begin(), tail.end(), phase_re); it != std::sregex_iterator(); ++it)
    if (std::find(phases.begin(), phases.end(), it->str()) == phases.end()) phases.push_back(it->str());
  while (phases.size() < 2) phases.push_back(phases.empty() ? "S1901M" : "F1901M");
  std::string citation;
  const std::string marker = "[assistant: send_message]\n";
  const auto at = tail.find(marker);
  if (at != std::string::npos) {
    const auto nl = tail.find('\n', at + marker.size());
    citation = "<citation send_message>" + tail.substr(at + marker.size(), nl - at - marker.size()) + "</citation>";
  }
  const auto counts = theme_counts(specs, tail);
  std::string themes;
  for (const auto& [name, n] : counts) themes += " " + name + " x" + std::to_string(n) + ".";
  return "<phase " + phases[0] + ">\nOpening moves." + themes + " " + citation + "\n</phase>\n<phase " + phases[1] +
         ">\nNegotiations continue.\n</phase>\n";
}

std::string batch_reply(const std::vector<PlantedFeatureSpec>& specs, const std::string& prompt) {
  const std::string marker = "### Trajectory ";
  const auto at = prompt.find(marker);
  std::string cite;
  if (at != std::string::npos) {
    const auto nl = prompt.find('\n', at);
    cite = "<citation " + prompt.substr(at + marker.size(), nl - at - marker.size()) + ">Opening moves.</citation>";
  }
  std::string out = "## Common Patterns\n";
  std::set<std::string> names;
  for (const auto& s : specs)
    if (find_theme(s.theme)) names.insert(s.theme);
  // Totals come from the "Theme xN." notes of the trajectory summaries.
  for (const auto& name : names) {
    std::size_t total = 0;
    const std::string key = name + " x";
    std::size_t pos = 0;
    while ((pos = prompt.find(key, pos)) != std::string::npos) {
      pos += key.size();
      total += static_cast<std::size_t>(std::strtoul(prompt.c_str() + pos, nullptr, 10));
    }
    if (total) out += "- " + name + " x" + std::to_string(total) + ".\n";
  }
  return out + "\n" + cite + "\n";
}

std::string hypotheses_reply(const std::vector<PlantedFeatureSpec>& specs, const std::string& prompt) {
  // Per theme, totals in the first and second half of the batch sections.
  std::vector<std::size_t> starts;
  std::size_t pos = 0;
  while ((pos = prompt.find("## Batch ", pos)) != std::string::npos) starts.push_back(pos++);
  std::map<std::string, std::pair<double, double>> halves;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const auto end = i + 1 < starts.size() ? starts[i + 1] : prompt.size();
    const std::string section = prompt.substr(starts[i], end - starts[i]);
    for (const auto& s : specs) {
      const Theme* t = find_theme(s.theme);
      if (!t) continue;
      const std::string key = "- " + t->name + " x";
      const auto at = section.find(key);
      const double n = at == std::string::npos ? 0.0 : std::strtod(section.c_str() + at + key.size(), nullptr);
      auto& h = halves[t->name];
      (2 * i < starts.size() ? h.first : h.second) += n;
    }
  }
  ordered_json arr = ordered_json::array();
  for (const auto& [name, h] : halves) {
    if (h.first == h.second) continue;
    const Theme* t = find_theme(name);
    const bool up = h.second > h.first;
    arr.push_back({{"name", std::string(up ? "Increasing " : "Decreasing ") + name},
                   {"direction", up ? "increasing" : "decreasing"},
                   {"feature", t->description}});
  }
  return "```json\n" + arr.dump(2) + "\n```";
}

}  // namespace

std::unique_ptr<ScriptedChatClient> planted_summarizer_client(std::vector<PlantedFeatureSpec> specs) {
  return std::make_unique<ScriptedChatClient>([specs = std::move(specs)](const ChatRequest& req, std::size_t) {
    const std::string& p = req.prompt();
    if (p.find("generate 10-20 hypotheses") != std::string::npos) return hypotheses_reply(specs, p);
    if (p.find("trajectory summaries from Batch") != std::string::npos) return batch_reply(specs, p);
    return trajectory_reply(specs, p);
  });
}

std::vector<std::vector<Answer>> simulate_rater_panel(std::size_t n_pairs, std::size_t n_raters, double rho,
                                                      double p_a, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "rater-panel"));
  std::vector<std::vector<Answer>> out(n_pairs, std::vector<Answer>(n_raters));
  for (auto& row : out) {
    if (rng.bernoulli(rho)) {
      const Answer shared = rng.bernoulli(p_a) ? Answer::A : Answer::B;
      std::fill(row.begin(), row.end(), shared);
    } else {
      for (auto& a : row) a = rng.bernoulli(p_a) ? Answer::A : Answer::B;
    }
  }
  return out;
}

}  // namespace trajlens::synth
