#include "trajlens/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <memory>
#include <regex>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "trajlens/auxval.hpp"
#include "trajlens/corpus.hpp"
#include "trajlens/extract.hpp"
#include "trajlens/hashing.hpp"
#include "trajlens/interp.hpp"
#include "trajlens/probe.hpp"
#include "trajlens/report.hpp"
#include "trajlens/rng.hpp"
#include "trajlens/sae.hpp"
#include "trajlens/scoring.hpp"
#include "trajlens/summarizer.hpp"
#include "trajlens/synth.hpp"
#include "trajlens/validation.hpp"

namespace trajlens {

using nlohmann::json;
using nlohmann::ordered_json;

std::string tool_version() {
#ifdef TRAJLENS_VERSION
  return TRAJLENS_VERSION;
#else
  return "dev";
#endif
}

namespace {

// TOML config with ${VAR} expansion applied before parsing.
class ExpandingConfig final : public CLI::ConfigTOML {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::ostringstream raw;
    raw << input.rdbuf();
    static const std::regex var(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
    const std::string text = raw.str();
    std::string out;
    auto begin = std::sregex_iterator(text.begin(), text.end(), var);
    std::size_t last = 0;
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
      out.append(text, last, static_cast<std::size_t>(it->position()) - last);
      const char* v = std::getenv((*it)[1].str().c_str());
      out += v ? v : "";
      last = static_cast<std::size_t>(it->position() + it->length());
    }
    out.append(text, last, std::string::npos);
    std::istringstream expanded(out);
    return CLI::ConfigTOML::from_config(expanded);
  }
};

void setup_logging(const std::string& level) {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto l = spdlog::stderr_color_mt("trajlens");
    spdlog::set_default_logger(l);
    return l;
  }();
  logger->set_level(spdlog::level::from_str(level));
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::size_t pos = 0;
    while (pos <= item.size()) {
      auto comma = item.find(',', pos);
      if (comma == std::string::npos) comma = item.size();
      auto piece = trim(std::string_view(item).substr(pos, comma - pos));
      if (!piece.empty()) out.emplace_back(piece);
      pos = comma + 1;
    }
  }
  return out;
}

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw IoError(std::string(what) + " not found: " + p.string());
}

// Records what a run read and how it was configured. No timestamps, so
// identical runs produce identical manifests.
struct RunRecord {
  std::string subcommand;
  std::uint64_t seed = 0;
  std::vector<fs::path> inputs;
  std::vector<std::string> outputs;
};

void write_manifest(const fs::path& out_dir, const RunRecord& rec, const std::string& config_text) {
  ordered_json m;
  m["tool"] = "trajlens";
  m["version"] = tool_version();
  m["subcommand"] = rec.subcommand;
  m["seed"] = rec.seed;
  m["config_sha256"] = sha256_hex(config_text);
  ordered_json inputs = ordered_json::array();
  std::set<std::string> seen;
  for (const auto& p : rec.inputs) {
    if (!seen.insert(p.string()).second) continue;
    inputs.push_back({{"path", p.string()}, {"sha256", fs::exists(p) ? sha256_path(p) : std::string()}});
  }
  m["inputs"] = inputs;
  m["outputs"] = rec.outputs;
  write_file(out_dir / ("manifest_" + rec.subcommand + ".json"), m.dump(2) + "\n");
}

void write_json(const fs::path& p, const ordered_json& j) { write_file(p, j.dump(2) + "\n"); }

std::vector<synth::PlantedFeatureSpec> specs_from_truth(const fs::path& truth) {
  require_exists(truth, "ground-truth manifest");
  return synth::GroundTruth::from_json(json::parse(read_file(truth))).specs;
}

enum class LlmPurpose { interp, summarize };

// Resolves an LLM spec: "mock:planted" (needs the synth manifest) or an
// endpoint id read from <ID>_BASE_URL / _API_KEY / _MODEL.
std::unique_ptr<ChatClient> make_llm(const std::string& spec, const fs::path& truth, LlmPurpose purpose) {
  if (spec == "mock:planted") {
    if (truth.empty()) throw InvalidArgument("mock:planted needs --truth");
    auto specs = specs_from_truth(truth);
    if (purpose == LlmPurpose::interp) return synth::planted_interp_client(std::move(specs));
    return synth::planted_summarizer_client(std::move(specs));
  }
  if (spec.rfind("mock:", 0) == 0) throw InvalidArgument("unknown mock client '" + spec + "'");
  return std::make_unique<HttpChatClient>(endpoint_from_env(spec));
}

struct Common {
  std::uint64_t seed = 0;
  std::string log_level = "warn";
  std::size_t concurrency = 4;
};

std::uint64_t module_seed(const Common& c, std::string_view module) { return derive_seed(c.seed, module); }

FeatureTable load_table(const fs::path& store_dir, FeatureIndex* index_out = nullptr) {
  require_exists(store_dir, "store");
  auto store = SparseStore::open(store_dir);
  auto index = build_feature_index(store);
  auto table = FeatureTable::from_index(store.meta(), index);
  if (index_out) *index_out = std::move(index);
  return table;
}

std::map<std::uint32_t, double> ranking_scores(const fs::path& ranking_path) {
  require_exists(ranking_path, "ranking");
  std::map<std::uint32_t, double> out;
  for (const auto& r : ranking_from_json(json::parse(read_file(ranking_path))))
    out[r.feature_id] = r.best.score.value_or(0.0);
  return out;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trajectory analysis toolkit: sparse features, hypotheses and their validation."};
  app.set_version_flag("--version", tool_version());
  app.config_formatter(std::make_shared<ExpandingConfig>());
  app.set_config("--config", "", "TOML configuration file; ${VAR} is expanded from the environment");
  app.require_subcommand(1);

  Common common;
  app.add_option("--seed", common.seed, "Root seed")->capture_default_str();
  app.add_option("--log-level", common.log_level, "trace, debug, info, warn, error")->capture_default_str();
  app.add_option("--concurrency", common.concurrency, "Concurrent LLM requests")->capture_default_str();

  RunRecord rec;
  std::function<void()> action;
  fs::path out_dir;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate and merge corpora, optionally drawing the canonical sample");
  std::vector<std::string> ingest_inputs;
  int groups_per_batch = 0, trajs_per_group = 0;
  ingest->add_option("--corpus", ingest_inputs, "Corpus JSONL files")->required();
  ingest->add_option("--out", out_dir, "Output directory")->required();
  ingest->add_option("--groups-per-batch", groups_per_batch, "Sample this many groups per batch (0: keep all)");
  ingest->add_option("--trajs-per-group", trajs_per_group, "Sample this many trajectories per group");
  ingest->callback([&] {
    action = [&] {
      rec.subcommand = "ingest";
      std::vector<Trajectory> all;
      Warnings warnings;
      for (const auto& p : ingest_inputs) {
        rec.inputs.emplace_back(p);
        auto c = load_corpus(p);
        warnings.append(c.warnings());
        all.insert(all.end(), c.begin(), c.end());
      }
      Corpus merged(std::move(all));
      std::vector<std::string> shortfalls;
      if (groups_per_batch > 0 && trajs_per_group > 0) {
        auto sample = canonical_sample(merged, groups_per_batch, trajs_per_group, module_seed(common, "ingest"));
        merged = std::move(sample.corpus);
        shortfalls = std::move(sample.shortfalls);
      }
      write_corpus(merged, out_dir / "corpus.jsonl");
      ordered_json summary;
      summary["trajectories"] = merged.size();
      summary["runs"] = merged.run_counts();
      summary["batches"] = merged.batches();
      summary["shortfalls"] = shortfalls;
      summary["warnings"] = warnings.items();
      write_json(out_dir / "ingest.json", summary);
      rec.outputs = {"corpus.jsonl", "ingest.json"};
    };
  });

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus with planted feature dynamics");
  std::string scenario = "trend";
  synth::TrendSpecOptions trend_opts;
  synth::CorpusOptions corpus_opts;
  std::size_t d_model = 64;
  std::size_t div_features = 10, div_diverging = 3;
  std::int64_t div_at = 6;
  synth_cmd->add_option("--out", out_dir, "Output directory")->required();
  synth_cmd->add_option("--scenario", scenario, "trend or divergence")
      ->check(CLI::IsMember({"trend", "divergence"}))
      ->capture_default_str();
  synth_cmd->add_option("--batches", corpus_opts.n_batches)->capture_default_str();
  synth_cmd->add_option("--groups", corpus_opts.groups)->capture_default_str();
  synth_cmd->add_option("--trajs", corpus_opts.trajs)->capture_default_str();
  synth_cmd->add_option("--turns", corpus_opts.turns)->capture_default_str();
  synth_cmd->add_option("--env-echo-rate", corpus_opts.env_echo_rate)->capture_default_str();
  synth_cmd->add_option("--increasing", trend_opts.n_increasing)->capture_default_str();
  synth_cmd->add_option("--decreasing", trend_opts.n_decreasing)->capture_default_str();
  synth_cmd->add_option("--flat", trend_opts.n_flat)->capture_default_str();
  synth_cmd->add_option("--d-model", d_model)->capture_default_str();
  synth_cmd->add_option("--div-features", div_features)->capture_default_str();
  synth_cmd->add_option("--div-diverging", div_diverging)->capture_default_str();
  synth_cmd->add_option("--div-at", div_at)->capture_default_str();
  synth_cmd->callback([&] {
    action = [&] {
      rec.subcommand = "synth";
      const WhitespaceTokenizer tok;
      const std::uint64_t seed = module_seed(common, "synth");
      auto emit = [&](const std::vector<synth::PlantedFeatureSpec>& specs, synth::CorpusOptions o,
                      const fs::path& dir) {
        o.seed = derive_seed(seed, o.run_id);
        auto gen = synth::generate_corpus(specs, o, tok);
        write_corpus(gen.corpus, dir / "corpus.jsonl");
        gen.truth.seed = seed;
        write_json(dir / "truth.json", gen.truth.to_json());
        synth::generate_activations(gen.corpus, specs, tok, d_model, seed, dir / "activations", dir / "weights");
      };
      if (scenario == "trend") {
        emit(synth::make_trend_specs(trend_opts), corpus_opts, out_dir);
        rec.outputs = {"corpus.jsonl", "truth.json", "activations", "weights"};
      } else {
        auto specs = synth::make_divergence_specs(div_features, div_diverging, div_at);
        auto good = corpus_opts, bad = corpus_opts;
        good.run_id = "goodrun";
        bad.run_id = "badrun";
        emit(specs.good, good, out_dir / "good");
        emit(specs.bad, bad, out_dir / "bad");
        rec.outputs = {"good", "bad"};
      }
    };
  });

  // extract
  auto* extract = app.add_subcommand("extract", "Encode activations with the SAE into a sparse store");
  fs::path corpus_path, weights_path, activations_path;
  ExtractorEndpoint endpoint;
  ExtractOptions extract_opts;
  extract->add_option("--corpus", corpus_path)->required();
  extract->add_option("--weights", weights_path, "SAE weights directory or weights.json")->required();
  extract->add_option("--activations", activations_path, "Activation dump directory");
  extract->add_option("--extractor-url", endpoint.base_url, "Remote activation extractor");
  extract->add_option("--extractor-key", endpoint.api_key);
  extract->add_option("--out", out_dir, "Store directory")->required();
  extract->add_option("--k", extract_opts.k)->capture_default_str();
  extract->add_option("--shards", extract_opts.n_shards)->capture_default_str();
  extract->add_option("--window", extract_opts.window)->capture_default_str();
  extract->add_option("--stride", extract_opts.stride)->capture_default_str();
  extract->add_flag("!--serial", extract_opts.parallel, "Disable parallel encoding");
  extract->callback([&] {
    action = [&] {
      rec.subcommand = "extract";
      rec.inputs = {corpus_path, weights_path};
      require_exists(corpus_path, "corpus");
      const auto corpus = load_corpus(corpus_path);
      const auto weights = load_sae_weights(weights_path);
      const WhitespaceTokenizer tok;
      std::unique_ptr<ActivationSource> source;
      if (!activations_path.empty()) {
        require_exists(activations_path, "activation dump");
        rec.inputs.push_back(activations_path);
        source = std::make_unique<ActivationDump>(activations_path);
      } else if (!endpoint.base_url.empty()) {
        endpoint.d_model = weights.d_model;
        endpoint.window = extract_opts.window;
        endpoint.stride = extract_opts.stride;
        source = std::make_unique<HttpActivationSource>(endpoint);
      } else {
        throw InvalidArgument("extract needs --activations or --extractor-url");
      }
      auto res = extract_corpus(corpus, tok, *source, weights, out_dir, extract_opts);
      out << "stored " << res.meta.total_records() << " records for " << res.meta.trajectories.size()
          << " trajectories\n";
      rec.outputs = {"store.json"};
    };
  });

  // score
  auto* score = app.add_subcommand("score", "Correlate feature aggregates with targets and rank features");
  fs::path store_path, bad_store_path;
  std::vector<std::string> targets{"training_step"}, kinds{"binary", "max", "mean", "sum"},
      methods{"spearman", "isotonic"};
  std::size_t top_k = 50, quota = 20, bins = 40;
  std::string hist_kind = "sum", hist_method = "spearman";
  score->add_option("--store", store_path)->required();
  score->add_option("--bad-store", bad_store_path, "Second run, for the good_bad_diff target");
  score->add_option("--out", out_dir)->required();
  score->add_option("--targets", targets)->delimiter(',')->capture_default_str();
  score->add_option("--aggregations", kinds)->delimiter(',')->capture_default_str();
  score->add_option("--methods", methods)->delimiter(',')->capture_default_str();
  score->add_option("--top-k", top_k)->capture_default_str();
  score->add_option("--quota", quota, "Per (target, method, aggregation) quota")->capture_default_str();
  score->add_option("--bins", bins)->capture_default_str();
  score->add_option("--hist-aggregation", hist_kind)->capture_default_str();
  score->add_option("--hist-method", hist_method)->capture_default_str();
  score->callback([&] {
    action = [&] {
      rec.subcommand = "score";
      rec.inputs = {store_path};
      std::vector<TargetKind> tks;
      bool diff = false;
      for (const auto& t : split_list(targets)) {
        const auto tk = parse_target(t);
        if (tk == TargetKind::good_bad_diff) diff = true;
        else tks.push_back(tk);
      }
      std::vector<AggregationKind> aks;
      for (const auto& k : split_list(kinds)) aks.push_back(parse_aggregation(k));
      std::vector<CorrelationMethod> cms;
      for (const auto& m : split_list(methods)) cms.push_back(parse_method(m));
      const auto table = load_table(store_path);
      std::vector<FeatureScore> scores;
      if (!tks.empty()) scores = score_all(table, tks, aks, cms);
      if (diff) {
        if (bad_store_path.empty()) throw InvalidArgument("good_bad_diff needs --bad-store");
        rec.inputs.push_back(bad_store_path);
        const auto bad = load_table(bad_store_path);
        auto d = score_diff(table, bad, aks, cms);
        scores.insert(scores.end(), d.begin(), d.end());
      }
      const auto ranking = rank_features(scores, top_k, quota);
      const auto hk = parse_aggregation(hist_kind);
      const auto hm = parse_method(hist_method);
      const TargetKind ht = tks.empty() ? TargetKind::good_bad_diff : tks.front();
      std::vector<FeatureScore> hist_in;
      for (const auto& s : scores)
        if (s.aggregation == hk && s.method == hm && s.target == ht) hist_in.push_back(s);
      write_file(out_dir / artifacts::kScoresCsv, scores_to_csv(scores));
      write_file(out_dir / artifacts::kRankingJson, ranking_to_json(ranking).dump(2) + "\n");
      write_file(out_dir / artifacts::kHistogramJson, histogram_to_json(score_histogram(hist_in, bins)).dump(2) + "\n");
      rec.outputs = {artifacts::kScoresCsv, artifacts::kRankingJson, artifacts::kHistogramJson};
      out << "scored " << scores.size() << " combinations, ranked " << ranking.size() << " features\n";
    };
  });

  // interp
  auto* interp = app.add_subcommand("interp", "Explain top-ranked features with an LLM");
  fs::path ranking_path, truth_path, prompts_dir;
  std::string llm_spec = "mock:planted";
  std::size_t n_examples = 10, context_tokens = 32, max_features = 50;
  int retries = 2;
  interp->add_option("--store", store_path)->required();
  interp->add_option("--corpus", corpus_path)->required();
  interp->add_option("--ranking", ranking_path)->required();
  interp->add_option("--out", out_dir)->required();
  interp->add_option("--llm", llm_spec, "Endpoint id or mock:planted")->capture_default_str();
  interp->add_option("--truth", truth_path, "Synthetic ground truth (mock clients)");
  interp->add_option("--prompts", prompts_dir, "Directory overriding prompt templates");
  interp->add_option("--examples", n_examples)->capture_default_str();
  interp->add_option("--context", context_tokens)->capture_default_str();
  interp->add_option("--max-features", max_features)->capture_default_str();
  interp->add_option("--retries", retries)->capture_default_str();
  interp->callback([&] {
    action = [&] {
      rec.subcommand = "interp";
      rec.inputs = {store_path, corpus_path, ranking_path};
      if (!truth_path.empty()) rec.inputs.push_back(truth_path);
      require_exists(store_path, "store");
      require_exists(ranking_path, "ranking");
      const auto corpus = load_corpus(corpus_path);
      const auto store = SparseStore::open(store_path);
      const auto index = build_feature_index(store);
      const auto ranking = ranking_from_json(json::parse(read_file(ranking_path)));
      const WhitespaceTokenizer tok;
      std::vector<AutointerpRequest> reqs;
      for (const auto& r : ranking) {
        if (reqs.size() >= max_features) break;
        reqs.push_back({r.feature_id, r.best.score.value_or(0.0),
                        render_examples(r.feature_id, index, store.meta(), corpus, tok, n_examples, context_tokens)});
      }
      std::optional<prompts::PromptLibrary> lib;
      if (!prompts_dir.empty()) lib.emplace(prompts_dir);
      auto client = make_llm(llm_spec, truth_path, LlmPurpose::interp);
      AutointerpOptions opts;
      opts.retries = retries;
      opts.concurrency = common.concurrency;
      opts.library = lib ? &*lib : nullptr;
      const auto batch = autointerp_features(reqs, *client, opts);
      ordered_json arr = ordered_json::array();
      for (const auto& e : batch.explanations) arr.push_back(explanation_to_json(e));
      write_json(out_dir / artifacts::kExplanationsJson, arr);
      ordered_json fails = ordered_json::array();
      for (const auto& f : batch.failures) fails.push_back({{"feature_id", f.feature_id}, {"reason", f.reason}});
      write_json(out_dir / "interp_failures.json", fails);
      rec.outputs = {artifacts::kExplanationsJson, "interp_failures.json"};
      out << "explained " << batch.explanations.size() << " features, " << batch.failures.size() << " failed\n";
    };
  });

  // meta
  auto* meta = app.add_subcommand("meta", "Group interesting features into directional meta-features");
  fs::path explanations_path;
  int threshold = 3;
  bool bypass = false, class_target = false, feature_hypotheses = false;
  std::size_t anchors_per_feature = 50;
  meta->add_option("--explanations", explanations_path)->required();
  meta->add_option("--ranking", ranking_path)->required();
  meta->add_option("--store", store_path, "Store for hypothesis anchors");
  meta->add_option("--out", out_dir)->required();
  meta->add_option("--llm", llm_spec)->capture_default_str();
  meta->add_option("--truth", truth_path);
  meta->add_option("--prompts", prompts_dir);
  meta->add_option("--threshold", threshold, "Minimum interestingness")->capture_default_str();
  meta->add_flag("--bypass", bypass, "Keep every explained feature");
  meta->add_flag("--class-target", class_target, "Phrase hypotheses for the class target");
  meta->add_flag("--feature-hypotheses", feature_hypotheses, "Also emit one hypothesis per surviving feature");
  meta->add_option("--anchors-per-feature", anchors_per_feature)->capture_default_str();
  meta->add_option("--retries", retries)->capture_default_str();
  meta->callback([&] {
    action = [&] {
      rec.subcommand = "meta";
      rec.inputs = {explanations_path, ranking_path};
      if (!truth_path.empty()) rec.inputs.push_back(truth_path);
      require_exists(explanations_path, "explanations");
      std::vector<FeatureExplanation> expl;
      for (const auto& e : json::parse(read_file(explanations_path))) expl.push_back(explanation_from_json(e));
      const auto scores = ranking_scores(ranking_path);
      const auto keep = filter_interesting(expl, threshold, bypass);
      std::vector<MetaInput> survivors;
      for (const auto& e : expl) {
        if (std::find(keep.begin(), keep.end(), e.feature_id) == keep.end()) continue;
        auto it = scores.find(e.feature_id);
        survivors.push_back({e, it == scores.end() ? 0.0 : it->second});
      }
      if (survivors.empty()) throw InvalidArgument("no feature passes the interestingness filter");
      std::optional<prompts::PromptLibrary> lib;
      if (!prompts_dir.empty()) lib.emplace(prompts_dir);
      MetaGroupOptions opts;
      opts.retries = retries;
      opts.library = lib ? &*lib : nullptr;
      auto client = make_llm(llm_spec, truth_path, LlmPurpose::interp);
      const auto grouped = meta_group(survivors, *client, opts);

      std::optional<SparseStore> store;
      FeatureIndex index;
      if (!store_path.empty()) {
        require_exists(store_path, "store");
        rec.inputs.push_back(store_path);
        store.emplace(SparseStore::open(store_path));
        index = build_feature_index(*store);
      }
      auto anchor = [&](Hypothesis& h) {
        if (store) h.examples = anchors_from_index(h.feature_ids, index, store->meta(), anchors_per_feature);
      };
      std::vector<Hypothesis> hs;
      ordered_json metas = ordered_json::array();
      for (std::size_t i = 0; i < grouped.clusters.size(); ++i) {
        metas.push_back(meta_feature_to_json(grouped.clusters[i]));
        char id[32];
        std::snprintf(id, sizeof id, "M%02zu", i + 1);
        hs.push_back(hypothesis_from_meta(grouped.clusters[i], id, class_target));
        anchor(hs.back());
      }
      if (feature_hypotheses) {
        for (const auto& s : survivors) {
          char id[32];
          std::snprintf(id, sizeof id, "F%04u", s.explanation.feature_id);
          hs.push_back(hypothesis_from_feature(s.explanation, s.score, id, class_target));
          anchor(hs.back());
        }
      }
      write_json(out_dir / artifacts::kMetaFeaturesJson, metas);
      write_file(out_dir / artifacts::kHypothesesJson, hypotheses_to_json_text(hs));
      rec.outputs = {artifacts::kMetaFeaturesJson, artifacts::kHypothesesJson};
      out << grouped.clusters.size() << " meta-features, " << hs.size() << " hypotheses\n";
    };
  });

  // summarize
  auto* summarize = app.add_subcommand("summarize", "Summarize trajectories and batches with an LLM");
  SummarizerOptions sum_opts;
  summarize->add_option("--corpus", corpus_path)->required();
  summarize->add_option("--out", out_dir)->required();
  summarize->add_option("--llm", llm_spec)->capture_default_str();
  summarize->add_option("--truth", truth_path);
  summarize->add_option("--prompts", prompts_dir);
  summarize->add_option("--budget-tokens", sum_opts.budget_tokens)->capture_default_str();
  summarize->add_option("--batch-words", sum_opts.batch_target_words)->capture_default_str();
  summarize->callback([&] {
    action = [&] {
      rec.subcommand = "summarize";
      rec.inputs = {corpus_path};
      if (!truth_path.empty()) rec.inputs.push_back(truth_path);
      const auto corpus = load_corpus(corpus_path);
      std::optional<prompts::PromptLibrary> lib;
      if (!prompts_dir.empty()) lib.emplace(prompts_dir);
      sum_opts.library = lib ? &*lib : nullptr;
      sum_opts.concurrency = common.concurrency;
      auto client = make_llm(llm_spec, truth_path, LlmPurpose::summarize);
      const auto res = summarize_corpus(corpus, *client, sum_opts);
      ordered_json j;
      j["trajectories"] = ordered_json::array();
      for (const auto& s : res.trajectories) j["trajectories"].push_back(trajectory_summary_to_json(s));
      j["batches"] = ordered_json::array();
      for (const auto& b : res.batches) j["batches"].push_back(batch_summary_to_json(b));
      j["warnings"] = res.warnings.items();
      write_json(out_dir / "summaries.json", j);
      rec.outputs = {"summaries.json"};
    };
  });

  // hypotheses
  auto* hyps = app.add_subcommand("hypotheses", "Propose hypotheses from summaries");
  fs::path summaries_path;
  std::string rubric = "training";
  double reward_fraction = 0.1;
  hyps->add_option("--summaries", summaries_path)->required();
  hyps->add_option("--corpus", corpus_path, "Corpus with rewards (reward rubric)");
  hyps->add_option("--out", out_dir)->required();
  hyps->add_option("--llm", llm_spec)->capture_default_str();
  hyps->add_option("--truth", truth_path);
  hyps->add_option("--prompts", prompts_dir);
  hyps->add_option("--rubric", rubric)->check(CLI::IsMember({"training", "reward"}))->capture_default_str();
  hyps->add_option("--reward-fraction", reward_fraction, "Share of trajectories in each reward class")
      ->capture_default_str();
  hyps->callback([&] {
    action = [&] {
      rec.subcommand = "hypotheses";
      rec.inputs = {summaries_path};
      if (!truth_path.empty()) rec.inputs.push_back(truth_path);
      require_exists(summaries_path, "summaries");
      const auto sj = json::parse(read_file(summaries_path));
      HypothesisInput in;
      if (rubric == "training") {
        in.rubric = Rubric::training;
        for (const auto& b : sj.at("batches")) in.batches.push_back(batch_summary_from_json(b));
      } else {
        in.rubric = Rubric::reward_comparison;
        if (corpus_path.empty()) throw InvalidArgument("reward rubric needs --corpus");
        rec.inputs.push_back(corpus_path);
        const auto corpus = load_corpus(corpus_path);
        std::vector<TrajectorySummary> all;
        for (const auto& s : sj.at("trajectories")) all.push_back(trajectory_summary_from_json(s));
        auto reward_of = [&](const TrajectorySummary& s) {
          const auto* t = corpus.find(std::string_view(s.trajectory_id));
          if (!t) throw InvalidArgument("summary for unknown trajectory " + s.trajectory_id);
          return t->reward;
        };
        std::stable_sort(all.begin(), all.end(), [&](const auto& a, const auto& b) { return reward_of(a) > reward_of(b); });
        const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(reward_fraction * double(all.size())));
        if (2 * n > all.size()) throw InvalidArgument("too few summaries for two reward classes");
        in.high.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
        in.low.assign(all.end() - static_cast<std::ptrdiff_t>(n), all.end());
      }
      std::optional<prompts::PromptLibrary> lib;
      if (!prompts_dir.empty()) lib.emplace(prompts_dir);
      SummarizerOptions opts;
      opts.library = lib ? &*lib : nullptr;
      auto client = make_llm(llm_spec, truth_path, LlmPurpose::summarize);
      const auto res = extract_hypotheses(in, *client, opts);
      write_file(out_dir / artifacts::kLlmHypothesesJson, hypotheses_to_json_text(res.hypotheses));
      rec.outputs = {artifacts::kLlmHypothesesJson};
      out << res.hypotheses.size() << " hypotheses\n";
    };
  });

  // validate
  auto* validate = app.add_subcommand("validate", "Measure hypothesis uplift with paired LLM judges");
  std::vector<std::string> hypothesis_files, judge_specs{"mock:oracle"}, cue_keywords;
  DrawOptions draw;
  std::string mode = "hypothesis_random";
  std::int64_t class_batches = 5;
  validate->add_option("--hypotheses", hypothesis_files, "Hypothesis JSON files")->required();
  validate->add_option("--corpus", corpus_path)->required();
  validate->add_option("--store", store_path, "Store used to anchor SAE hypotheses without examples");
  validate->add_option("--out", out_dir)->required();
  validate->add_option("--judges", judge_specs, "Endpoint ids or mock:oracle, mock:random, mock:cue")
      ->delimiter(',')
      ->capture_default_str();
  validate->add_option("--truth", truth_path, "Synthetic ground truth (keywords for mock:cue)");
  validate->add_option("--keywords", cue_keywords, "Cue keywords for mock:cue")->delimiter(',');
  validate->add_option("--prompts", prompts_dir);
  validate->add_option("--pairs", draw.n_pairs)->capture_default_str();
  validate->add_option("--window", draw.window_tokens)->capture_default_str();
  validate->add_option("--mode", mode)->check(CLI::IsMember({"hypothesis_random", "random_both"}))->capture_default_str();
  validate->add_option("--class-batches", class_batches, "Batches in each of the early and late classes")
      ->capture_default_str();
  validate->add_option("--retries", retries)->capture_default_str();
  validate->callback([&] {
    action = [&] {
      rec.subcommand = "validate";
      rec.seed = common.seed;
      rec.inputs = {corpus_path};
      const auto corpus = load_corpus(corpus_path);
      std::vector<Hypothesis> hs;
      for (const auto& f : hypothesis_files) {
        rec.inputs.emplace_back(f);
        require_exists(f, "hypotheses");
        auto part = hypotheses_from_json_text(read_file(f));
        hs.insert(hs.end(), part.begin(), part.end());
      }
      if (hs.empty()) throw InvalidArgument("no hypotheses to validate");
      std::optional<SparseStore> store;
      FeatureIndex index;
      if (!store_path.empty()) {
        rec.inputs.push_back(store_path);
        store.emplace(SparseStore::open(store_path));
        index = build_feature_index(*store);
      }
      std::vector<std::string> keywords = split_list(cue_keywords);
      if (!truth_path.empty()) {
        rec.inputs.push_back(truth_path);
        auto k = synth::planted_keywords(specs_from_truth(truth_path));
        keywords.insert(keywords.end(), k.begin(), k.end());
      }
      const auto [early, late] = default_class_ranges(corpus, class_batches);
      draw.early = early;
      draw.late = late;
      draw.mode = parse_sampling_mode(mode);
      const std::uint64_t seed = module_seed(common, "validate");

      auto truth = std::make_shared<synth::PairTruth>();
      std::vector<std::unique_ptr<ChatClient>> owned;
      std::vector<NamedJudge> judges;
      const auto specs = split_list(judge_specs);
      std::map<std::string, int> seen;
      for (std::size_t j = 0; j < specs.size(); ++j) {
        const auto& s = specs[j];
        if (s.rfind("mock:", 0) == 0) {
          const auto behavior = synth::parse_judge_behavior(s.substr(5));
          if (behavior == synth::JudgeBehavior::cue_following && keywords.empty())
            throw InvalidArgument("mock:cue needs --keywords or --truth");
          owned.push_back(synth::scripted_judge(behavior, truth, keywords, derive_seed(derive_seed(seed, "judge"), j)));
        } else {
          owned.push_back(std::make_unique<HttpChatClient>(endpoint_from_env(s)));
        }
        const int k = ++seen[s];
        judges.push_back({k == 1 ? s : s + "#" + std::to_string(k), owned.back().get()});
      }
      std::optional<prompts::PromptLibrary> lib;
      if (!prompts_dir.empty()) lib.emplace(prompts_dir);
      JudgeOptions jopts;
      jopts.retries = retries;
      jopts.concurrency = common.concurrency;
      jopts.library = lib ? &*lib : nullptr;
      const WhitespaceTokenizer tok;

      std::vector<ValidationResult> results;
      ordered_json pairs_json = ordered_json::array();
      ordered_json warnings = ordered_json::array();
      std::string verdict_lines;
      for (auto& h : hs) {
        if (h.examples.empty() && !h.feature_ids.empty() && store)
          h.examples = anchors_from_index(h.feature_ids, index, store->meta());
        auto d = draw;
        d.seed = derive_seed(seed, h.id);
        auto drawn = draw_pairs(h, corpus, tok, d);
        for (const auto& w : drawn.warnings.items()) warnings.push_back(h.id + ": " + w);
        truth->add_all(drawn.pairs);
        std::vector<JudgeVerdict> verdicts;
        results.push_back(evaluate_hypothesis(h, drawn.pairs, judges, jopts, &verdicts));
        for (const auto& p : drawn.pairs)
          pairs_json.push_back({{"hypothesis", h.id},
                                {"pair_id", p.pair_id},
                                {"true_answer", std::string(to_string(p.true_answer))},
                                {"sampling_mode", std::string(to_string(p.sampling_mode))},
                                {"a", {{"trajectory", p.window_a.trajectory_id}, {"start", p.window_a.start}, {"end", p.window_a.end}}},
                                {"b", {{"trajectory", p.window_b.trajectory_id}, {"start", p.window_b.start}, {"end", p.window_b.end}}}});
        for (const auto& v : verdicts) {
          ordered_json vj{{"hypothesis", h.id},
                          {"pair_id", v.pair_id},
                          {"judge", v.judge_id},
                          {"condition", std::string(to_string(v.condition))},
                          {"answer", v.answer ? json(std::string(to_string(*v.answer))) : json(nullptr)},
                          {"correct", v.correct}};
          verdict_lines += vj.dump() + "\n";
        }
      }
      ordered_json vj;
      vj["seed"] = common.seed;
      vj["results"] = ordered_json::array();
      for (const auto& r : results) vj["results"].push_back(validation_result_to_json(r));
      vj["warnings"] = warnings;
      write_json(out_dir / artifacts::kValidationJson, vj);
      write_json(out_dir / "pairs.json", pairs_json);
      write_file(out_dir / "verdicts.jsonl", verdict_lines);
      write_file(out_dir / "uplift.csv", uplift_report_csv(results));
      rec.outputs = {artifacts::kValidationJson, "pairs.json", "verdicts.jsonl", "uplift.csv"};
      out << uplift_report_markdown(results);
    };
  });

  // probe
  auto* probe = app.add_subcommand("probe", "Per-step cross-validated probe separating two runs");
  fs::path good_store;
  std::vector<std::uint32_t> probe_features;
  ProbeOptions probe_opts;
  std::string probe_kind = "sum";
  std::size_t probe_top = 20;
  probe->add_option("--good-store", good_store)->required();
  probe->add_option("--bad-store", bad_store_path)->required();
  probe->add_option("--out", out_dir)->required();
  probe->add_option("--features", probe_features, "Feature ids")->delimiter(',');
  probe->add_option("--ranking", ranking_path, "Take features from a ranking instead");
  probe->add_option("--top", probe_top, "Features taken from --ranking")->capture_default_str();
  probe->add_option("--aggregation", probe_kind)->capture_default_str();
  probe->add_option("--folds", probe_opts.folds)->capture_default_str();
  probe->add_option("--threshold", probe_opts.threshold)->capture_default_str();
  probe->add_option("--l2", probe_opts.logistic.l2)->capture_default_str();
  probe->callback([&] {
    action = [&] {
      rec.subcommand = "probe";
      rec.inputs = {good_store, bad_store_path};
      const auto good = load_table(good_store);
      const auto bad = load_table(bad_store_path);
      probe_opts.features = probe_features;
      if (probe_opts.features.empty() && !ranking_path.empty()) {
        rec.inputs.push_back(ranking_path);
        for (const auto& [f, s] : ranking_scores(ranking_path)) {
          (void)s;
          if (probe_opts.features.size() < probe_top) probe_opts.features.push_back(f);
        }
      }
      if (probe_opts.features.empty()) {
        std::set<std::uint32_t> fs_;
        for (auto f : good.active_features()) fs_.insert(f);
        for (auto f : bad.active_features()) fs_.insert(f);
        probe_opts.features.assign(fs_.begin(), fs_.end());
      }
      probe_opts.kind = parse_aggregation(probe_kind);
      probe_opts.seed = module_seed(common, "probe");
      const auto rep = per_step_cv_auc(good, bad, probe_opts);
      write_json(out_dir / artifacts::kProbeJson, probe_report_to_json(rep));
      write_file(out_dir / "probe_auc.csv", probe_auc_csv(rep));
      write_file(out_dir / "probe_divergence.csv", probe_divergence_csv(rep));
      rec.outputs = {artifacts::kProbeJson, "probe_auc.csv", "probe_divergence.csv"};
      out << "flagged step: " << (rep.flagged_step ? std::to_string(*rep.flagged_step) : std::string("none")) << "\n";
    };
  });

  // auxval
  auto* aux = app.add_subcommand("auxval", "Keyword, embedding and co-occurrence trends over agent actions");
  std::vector<std::string> aux_keywords;
  bool stemming = false;
  std::string embed_label, embed_spec = "hashing", rule_a, rule_b;
  std::size_t embed_dim = 512;
  aux->add_option("--corpus", corpus_path)->required();
  aux->add_option("--out", out_dir)->required();
  aux->add_option("--keywords", aux_keywords)->delimiter(',');
  aux->add_flag("--stem", stemming, "Also match trailing s/es");
  aux->add_option("--label", embed_label, "Text compared against every action by embedding");
  aux->add_option("--embedder", embed_spec, "hashing or an endpoint id")->capture_default_str();
  aux->add_option("--embed-dim", embed_dim)->capture_default_str();
  aux->add_option("--rule-a", rule_a, "Counting rule: re:<regex> or dup:<kind>");
  aux->add_option("--rule-b", rule_b);
  aux->callback([&] {
    action = [&] {
      rec.subcommand = "auxval";
      rec.inputs = {corpus_path};
      const auto corpus = load_corpus(corpus_path);
      const auto docs = extract_actions(corpus);
      const auto kws = split_list(aux_keywords);
      if (kws.empty() && embed_label.empty() && (rule_a.empty() || rule_b.empty()))
        throw InvalidArgument("auxval needs --keywords, --label, or both --rule-a and --rule-b");
      if (!kws.empty()) {
        write_file(out_dir / "keyword_trend.csv", keyword_trend_csv(keyword_trend(docs, kws, stemming)));
        rec.outputs.push_back("keyword_trend.csv");
      }
      if (!embed_label.empty()) {
        std::unique_ptr<EmbeddingClient> inner;
        if (embed_spec == "hashing") inner = std::make_unique<HashingEmbedder>(embed_dim);
        else inner = std::make_unique<HttpEmbeddingClient>(endpoint_from_env(embed_spec));
        EmbeddingCache cache(*inner);
        const auto trend = embedding_trend(docs, embed_label, cache, common.concurrency);
        write_file(out_dir / "embedding_trend.csv", embedding_trend_csv(trend.points));
        rec.outputs.push_back("embedding_trend.csv");
      }
      if (!rule_a.empty() && !rule_b.empty()) {
        const auto res = regex_cooccurrence(corpus, CountingRule(rule_a), CountingRule(rule_b));
        write_file(out_dir / "cooccurrence.csv", cooccurrence_csv(res));
        rec.outputs.push_back("cooccurrence.csv");
        out << "co-occurrence spearman: " << (res.correlation ? std::to_string(*res.correlation) : "NA") << "\n";
      }
    };
  });

  // report
  auto* report = app.add_subcommand("report", "Render report.md and plots from the artifacts in a directory");
  std::size_t report_top = 20;
  report->add_option("--dir", out_dir, "Artifact directory")->required();
  report->add_option("--top", report_top)->capture_default_str();
  report->callback([&] {
    action = [&] {
      rec.subcommand = "report";
      require_exists(out_dir, "artifact directory");
      for (const char* a : {artifacts::kRankingJson, artifacts::kHistogramJson, artifacts::kExplanationsJson,
                            artifacts::kMetaFeaturesJson, artifacts::kHypothesesJson, artifacts::kLlmHypothesesJson,
                            artifacts::kValidationJson,
                            artifacts::kProbeJson})
        if (fs::exists(out_dir / a)) rec.inputs.push_back(out_dir / a);
      const auto res = emit_report(out_dir, report_top);
      for (const auto& s : res.skipped) err << "notice: " << s << "\n";
      rec.outputs = {artifacts::kReportMd, "plots"};
      out << "wrote " << res.markdown.filename().string() << " with " << res.sections.size() << " sections\n";
    };
  });

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      if (dynamic_cast<const CLI::CallForVersion*>(&e)) out << tool_version() << "\n";
      else out << app.help("", CLI::AppFormatMode::Normal);
      for (auto* sub : app.get_subcommands())
        if (dynamic_cast<const CLI::CallForHelp*>(&e)) out << sub->help();
      return kExitOk;
    }
    err << ordered_json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return kExitUsage;
  }

  try {
    setup_logging(common.log_level);
    if (!action) throw InvalidArgument("no subcommand given");
    if (rec.seed == 0) rec.seed = common.seed;
    action();
    std::string config_text;
    for (auto* sub : app.get_subcommands()) config_text += sub->config_to_str(true, false);
    config_text += app.config_to_str(true, false);
    write_manifest(out_dir, rec, config_text);
    return kExitOk;
  } catch (const Error& e) {
    err << ordered_json{{"error", std::string(e.kind())}, {"subcommand", rec.subcommand}, {"message", e.what()}}.dump()
        << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << ordered_json{{"error", "internal"}, {"subcommand", rec.subcommand}, {"message", e.what()}}.dump() << "\n";
    return kExitFailure;
  }
}

}  // namespace trajlens
