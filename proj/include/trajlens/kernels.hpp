#pragma once

// Hot loops of the pipeline. Each kernel has an OpenMP implementation and a
// plain serial reference with the same contract; tests require them to agree
// exactly and bench/ compares their throughput.

#include <cstdint>
#include <span>
#include <vector>

#include "trajlens/corpus.hpp"
#include "trajlens/sae.hpp"
#include "trajlens/store.hpp"

namespace trajlens {
struct FeatureTable;
struct FeatureScore;
enum class AggregationKind;
enum class CorrelationMethod;
enum class TargetKind;
}  // namespace trajlens

namespace trajlens::kernels {

/// Encodes `n_rows` dense rows and keeps the top-k features of each.
std::vector<SparseVector> encode_rows(const SaeWeights& weights, std::span<const float> rows,
                                      std::size_t k);
std::vector<SparseVector> encode_rows_serial(const SaeWeights& weights,
                                             std::span<const float> rows, std::size_t k);

struct ExtractedTrajectory {
  StoredTrajectory info;
  std::vector<StoreRecord> records;
};

/// Tokenizes, fetches activations, encodes and masks a block of trajectories.
/// Output order follows input order. Throws MissingActivationError when an
/// assistant token has no activation row.
std::vector<ExtractedTrajectory> extract_block(std::span<const Trajectory* const> block,
                                               const Tokenizer& tokenizer,
                                               const ActivationSource& source,
                                               const SaeWeights& weights, std::size_t k);
std::vector<ExtractedTrajectory> extract_block_serial(std::span<const Trajectory* const> block,
                                                      const Tokenizer& tokenizer,
                                                      const ActivationSource& source,
                                                      const SaeWeights& weights, std::size_t k);

/// One score per (feature x target x kind x method), in that nesting order.
std::vector<FeatureScore> score_features(const FeatureTable& table,
                                         std::span<const std::uint32_t> features,
                                         std::span<const TargetKind> targets,
                                         std::span<const AggregationKind> kinds,
                                         std::span<const CorrelationMethod> methods);
std::vector<FeatureScore> score_features_serial(const FeatureTable& table,
                                                std::span<const std::uint32_t> features,
                                                std::span<const TargetKind> targets,
                                                std::span<const AggregationKind> kinds,
                                                std::span<const CorrelationMethod> methods);

}  // namespace trajlens::kernels
