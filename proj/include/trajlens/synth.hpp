#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajlens/corpus.hpp"
#include "trajlens/hypothesis.hpp"
#include "trajlens/llm.hpp"
#include "trajlens/sae.hpp"
#include "trajlens/scoring.hpp"
#include "trajlens/validation.hpp"

namespace trajlens::synth {

enum class Trend { increasing, decreasing, flat, step_change };
std::string_view to_string(Trend t);
Trend parse_trend(std::string_view s);

struct PlantedFeatureSpec {
  std::uint32_t feature_id = 0;
  Trend trend = Trend::flat;
  double base_rate = 0.2;
  double slope = 0.0;
  std::int64_t at_batch = 0;  // step_change only
  std::vector<std::string> token_vocabulary;  // phrases the feature fires on
  std::string theme;                          // display name used by mock clients
  friend bool operator==(const PlantedFeatureSpec&, const PlantedFeatureSpec&) = default;
};

/// Per-message insertion probability at batch b of n_batches, with
/// t = b / (n_batches - 1). Throws InvalidArgument if it leaves [0, 1].
double planted_rate(const PlantedFeatureSpec& spec, std::int64_t batch, std::int64_t n_batches);

nlohmann::ordered_json spec_to_json(const PlantedFeatureSpec& s);
PlantedFeatureSpec spec_from_json(const nlohmann::json& j);

/// A named group of phrases with a description the mock clients reuse.
struct Theme {
  std::string name;
  std::string description;
  int interestingness = 4;
  std::vector<std::string> phrases;
};

/// Built-in Diplomacy-flavored themes.
const std::vector<Theme>& builtin_themes();
const Theme* find_theme(std::string_view name);

struct TrendSpecOptions {
  std::size_t n_increasing = 5;
  std::size_t n_decreasing = 5;
  std::size_t n_flat = 50;
  double low = 0.05;
  double high = 0.6;
  double flat_rate = 0.25;
};

/// Increasing specs come first, then decreasing, then flat; feature ids are
/// 0..n-1 in that order. Trending specs cycle through the themes.
std::vector<PlantedFeatureSpec> make_trend_specs(const TrendSpecOptions& options = {});

struct CorpusOptions {
  std::string run_id = "goodrun";
  std::int64_t n_batches = 25;
  std::int64_t groups = 3;
  std::int64_t trajs = 4;
  std::size_t turns = 6;               // user/assistant exchanges per trajectory
  std::size_t filler_words = 18;       // per assistant message
  double env_echo_rate = 0.0;          // phrases planted into non-assistant text
  double tool_call_rate = 0.5;         // send_message / write_diary actions per turn
  double duplicate_base = 0.05;        // repeated actions within a phase
  double duplicate_slope = 0.0;
  std::uint64_t seed = 0;
};

/// Ground truth for one (trajectory, feature): tokens that fire and the sum of
/// their encoded values, for assistant tokens and for all tokens.
struct TruthCell {
  std::uint32_t tokens = 0;
  double sum = 0.0;
  std::uint32_t tokens_all = 0;
  double sum_all = 0.0;
  std::uint32_t phrases = 0;  // assistant phrase occurrences inserted for this spec
  friend bool operator==(const TruthCell&, const TruthCell&) = default;
};

struct GroundTruth {
  std::vector<PlantedFeatureSpec> specs;
  std::map<std::string, std::map<std::uint32_t, TruthCell>> cells;  // trajectory id -> feature -> cell
  std::uint64_t seed = 0;

  nlohmann::ordered_json to_json() const;
  static GroundTruth from_json(const nlohmann::json& j);
};

struct GeneratedCorpus {
  Corpus corpus;
  GroundTruth truth;
};

/// Synthetic trajectories whose assistant text carries planted phrases at the
/// specs' rates. The truth is obtained by scanning the final token streams.
GeneratedCorpus generate_corpus(std::span<const PlantedFeatureSpec> specs, const CorpusOptions& options,
                                const Tokenizer& tokenizer);

/// Recomputes truth cells by scanning token streams.
GroundTruth compute_truth(const Corpus& corpus, std::span<const PlantedFeatureSpec> specs,
                          const Tokenizer& tokenizer, std::uint64_t seed = 0);

/// Encoder weights: feature f reads one model dimension with sign +-1
/// (a signed permutation), zero bias and threshold 0.5. Requires
/// d_model >= number of features.
SaeWeights make_planted_weights(std::span<const PlantedFeatureSpec> specs, std::size_t d_model,
                                std::uint64_t seed);

/// Encoded value of a firing token; a multiple of 1/64 in [1, 2). The
/// occurrence key (trajectory and position) varies values between occurrences.
float planted_value(std::uint32_t feature_id, std::string_view piece, std::uint64_t occurrence = 0);

/// Activations built so that encode_token fires each feature exactly on the
/// tokens of its phrases; other coordinates carry sub-threshold noise.
class PlantedActivationSource final : public ActivationSource {
 public:
  PlantedActivationSource(std::vector<PlantedFeatureSpec> specs, SaeWeights weights, std::uint64_t seed);
  std::size_t d_model() const override { return weights_.d_model; }
  TrajectoryActivations fetch(const Trajectory& trajectory,
                              const TokenizedTrajectory& tokens) const override;

 private:
  std::vector<PlantedFeatureSpec> specs_;
  SaeWeights weights_;
  std::uint64_t seed_;
};

/// Writes a dump of every token of every trajectory plus the weights.
void generate_activations(const Corpus& corpus, std::span<const PlantedFeatureSpec> specs,
                          const Tokenizer& tokenizer, std::size_t d_model, std::uint64_t seed,
                          const fs::path& dump_dir, const fs::path& weights_dir);

/// Aggregate-level simulation of a run for probes: per trajectory, each spec
/// fires Binomial(turns, rate) phrases. Cheap enough for hundreds of rows per step.
struct TableOptions {
  std::string run_id = "goodrun";
  std::int64_t n_batches = 25;
  std::size_t per_batch = 300;
  std::size_t turns = 6;
  std::uint64_t seed = 0;
};
FeatureTable simulate_feature_table(std::span<const PlantedFeatureSpec> specs, const TableOptions& options);

/// Specs for a good run and a bad run that agree before `at_batch` and
/// diverge from it on the first `n_diverging` features.
struct DivergenceSpecs {
  std::vector<PlantedFeatureSpec> good;
  std::vector<PlantedFeatureSpec> bad;
};
DivergenceSpecs make_divergence_specs(std::size_t n_features, std::size_t n_diverging, std::int64_t at_batch,
                                      double base = 0.15, double jump = 0.45);

/// Split-half null: randomly relabels a run's trajectories into two halves.
std::pair<FeatureTable, FeatureTable> split_halves(const FeatureTable& table, std::uint64_t seed);

/// Registry of true answers, keyed by the two sample texts.
class PairTruth {
 public:
  void add(const SamplePair& pair);
  void add_all(std::span<const SamplePair> pairs);
  std::optional<Answer> lookup(std::string_view sample_a, std::string_view sample_b) const;

 private:
  mutable std::mutex mu_;
  std::map<std::uint64_t, Answer> answers_;
};

enum class JudgeBehavior { oracle, random, cue_following };
std::string_view to_string(JudgeBehavior b);
JudgeBehavior parse_judge_behavior(std::string_view s);

/// oracle: always the late sample. random: a coin seeded by the prompt.
/// cue_following: correct iff the hypothesis text contains one of `keywords`
/// (case-insensitive), otherwise a coin. Pairs unknown to `truth` get a coin.
std::unique_ptr<ScriptedChatClient> scripted_judge(JudgeBehavior behavior, std::shared_ptr<const PairTruth> truth,
                                                   std::vector<std::string> keywords, std::uint64_t seed);

/// Every phrase word of the trending specs, for cue-following judges.
std::vector<std::string> planted_keywords(std::span<const PlantedFeatureSpec> specs);

/// Mock LLM that answers autointerp prompts by matching the marked tokens
/// against the themes, and Meta-Autointerp prompts by grouping features by
/// theme and direction.
std::unique_ptr<ScriptedChatClient> planted_interp_client(std::vector<PlantedFeatureSpec> specs);

/// Mock summarizer: trajectory prompts get a two-phase timeline citing a tool,
/// batch prompts cite the first listed trajectory, hypothesis prompts return
/// one hypothesis per theme found in the text.
std::unique_ptr<ScriptedChatClient> planted_summarizer_client(std::vector<PlantedFeatureSpec> specs);

/// Rater panel: with probability rho all raters give one shared answer,
/// otherwise each answers independently; answers are A with probability p_a.
/// Expected Fleiss' kappa is rho.
std::vector<std::vector<Answer>> simulate_rater_panel(std::size_t n_pairs, std::size_t n_raters, double rho,
                                                      double p_a, std::uint64_t seed);

}  // namespace trajlens::synth
