#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "trajlens/common.hpp"
#include "trajlens/store.hpp"

namespace trajlens {

enum class AggregationKind { binary, max, mean, sum };
enum class CorrelationMethod { spearman, isotonic };
enum class TargetKind { training_step, reward, good_bad_diff };

std::string_view to_string(AggregationKind k);
std::string_view to_string(CorrelationMethod m);
std::string_view to_string(TargetKind t);
AggregationKind parse_aggregation(std::string_view s);
CorrelationMethod parse_method(std::string_view s);
TargetKind parse_target(std::string_view s);

inline constexpr AggregationKind kAllAggregations[] = {AggregationKind::binary, AggregationKind::max,
                                                       AggregationKind::mean, AggregationKind::sum};
inline constexpr CorrelationMethod kAllMethods[] = {CorrelationMethod::spearman,
                                                    CorrelationMethod::isotonic};

struct FeatureScore {
  std::uint32_t feature_id = 0;
  AggregationKind aggregation = AggregationKind::sum;
  CorrelationMethod method = CorrelationMethod::spearman;
  TargetKind target = TargetKind::training_step;
  std::optional<double> score;  // nullopt: undefined (constant series)
  std::size_t n = 0;

  bool defined() const noexcept { return score.has_value(); }
  friend bool operator==(const FeatureScore&, const FeatureScore&) = default;
};

/// Aggregates the nonzero activations of one feature over a trajectory with
/// `masked_tokens` assistant tokens. mean divides by all masked tokens.
double aggregate(std::span<const float> nonzero_values, std::size_t masked_tokens,
                 AggregationKind kind);
/// Same, from a precomputed aggregate (nullptr: the feature never fired).
double aggregate(const TrajectoryAggregate* agg, std::size_t masked_tokens, AggregationKind kind);

/// Spearman rank correlation with average ranks. nullopt if either side is
/// constant; throws InvalidArgument on length mismatch or n < 2.
std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys);

/// Signed root-R^2 of the better of the increasing and decreasing isotonic
/// fits of ys on xs (+ for increasing; increasing wins exact ties). 0 when ys
/// is constant. Same argument errors as spearman.
double isotonic_score(std::span<const double> xs, std::span<const double> ys);

/// Score of feature values against a target series: spearman(values, target)
/// or isotonic_score(target, values). nullopt when either side is constant or
/// there are fewer than 2 points.
std::optional<double> correlate(std::span<const double> target, std::span<const double> values,
                                CorrelationMethod method);

struct TrajectoryInfo {
  TrajectoryKey key;
  double reward = 0.0;
  std::uint64_t masked_tokens = 0;
};

/// Per-trajectory aggregates for every feature: the input to scoring and probes.
struct FeatureTable {
  std::vector<TrajectoryInfo> trajectories;
  /// Per feature, aggregates sorted by trajectory index; absent = never fired.
  std::vector<std::vector<TrajectoryAggregate>> features;

  static FeatureTable from_index(const StoreMeta& meta, const FeatureIndex& index);
  std::size_t n_features() const noexcept { return features.size(); }
  std::vector<std::uint32_t> active_features() const;
  /// Dense column over trajectories with at least one masked token.
  std::vector<double> column(std::uint32_t feature, AggregationKind kind) const;
  /// Target values aligned with column().
  std::vector<double> target(TargetKind target) const;
  std::vector<std::int64_t> batches() const;
};

/// Scores every (feature x target x kind x method). Targets must be
/// trajectory-level (training_step or reward); see score_diff for the
/// good-minus-bad target. Empty `features` means all active features.
std::vector<FeatureScore> score_all(const FeatureTable& table,
                                    std::span<const TargetKind> targets,
                                    std::span<const AggregationKind> kinds = kAllAggregations,
                                    std::span<const CorrelationMethod> methods = kAllMethods,
                                    std::span<const std::uint32_t> features = {});

struct SeriesPoint {
  std::int64_t batch = 0;
  double value = 0.0;
  friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

/// Per batch: mean aggregate in the good run minus mean in the bad run.
/// Batches present in only one run are skipped with a warning.
std::vector<SeriesPoint> diff_series(const FeatureTable& good, const FeatureTable& bad,
                                     std::uint32_t feature, AggregationKind kind,
                                     Warnings* warnings = nullptr);

/// Correlates each feature's diff series against batch index.
std::vector<FeatureScore> score_diff(const FeatureTable& good, const FeatureTable& bad,
                                     std::span<const AggregationKind> kinds = kAllAggregations,
                                     std::span<const CorrelationMethod> methods = kAllMethods,
                                     std::span<const std::uint32_t> features = {});

struct RankedFeature {
  std::uint32_t feature_id = 0;
  FeatureScore best;  // the max-|score| entry that selected it
};

/// Takes the top `per_method_quota` features by |score| within every
/// (target, method, kind) combination, unions them keeping each feature's
/// max-|score| entry, and returns the top `top_k`. Ties go to the lower feature id.
std::vector<RankedFeature> rank_features(std::span<const FeatureScore> scores, std::size_t top_k,
                                         std::size_t per_method_quota);

struct ScoreHistogram {
  double lo = -1.0;
  double hi = 1.0;
  std::vector<std::size_t> counts;
  std::size_t n = 0;
  double mean = 0.0;
  double positive_share = 0.0;  // fraction of scores > 0
};

/// Histogram of defined scores; callers filter to one (kind, method, target).
ScoreHistogram score_histogram(std::span<const FeatureScore> scores, std::size_t bins = 40);

std::string scores_to_csv(std::span<const FeatureScore> scores);
std::vector<FeatureScore> scores_from_csv(std::string_view csv);
nlohmann::json scores_to_json(std::span<const FeatureScore> scores);
nlohmann::json histogram_to_json(const ScoreHistogram& h);
nlohmann::json ranking_to_json(std::span<const RankedFeature> ranking);
std::vector<RankedFeature> ranking_from_json(const nlohmann::json& j);

}  // namespace trajlens
