#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "trajlens/common.hpp"
#include "trajlens/corpus.hpp"

namespace trajlens {

#pragma pack(push, 1)
struct StoreRecord {
  std::uint64_t trajectory_hash = 0;
  std::uint32_t token_pos = 0;
  std::uint32_t feature_id = 0;
  float value = 0.0f;
  friend bool operator==(const StoreRecord&, const StoreRecord&) = default;
};
#pragma pack(pop)
static_assert(sizeof(StoreRecord) == 20);

struct StoredTrajectory {
  TrajectoryKey key;
  std::uint64_t hash = 0;
  double reward = 0.0;
  std::uint64_t total_tokens = 0;
  std::uint64_t masked_tokens = 0;
  std::uint64_t records = 0;           // stored (assistant-masked) records
  std::uint64_t records_unmasked = 0;  // retained before masking
  friend bool operator==(const StoredTrajectory&, const StoredTrajectory&) = default;
};

struct StoreMeta {
  std::size_t n_shards = 64;
  std::size_t n_features = 0;
  std::size_t k = 100;
  std::size_t window = 1024;
  std::size_t stride = 512;
  std::vector<StoredTrajectory> trajectories;  // corpus order

  std::uint64_t total_records() const;
  std::uint64_t total_records_unmasked() const;
};

/// Sharded append-only writer. Records are routed to shard
/// `trajectory_hash % n_shards`; each shard has a single writer. Sealing
/// appends a JSON footer to every shard and writes `store.json`.
class StoreWriter {
 public:
  StoreWriter(fs::path dir, StoreMeta meta_template);
  ~StoreWriter();
  void append(const StoredTrajectory& trajectory, std::span<const StoreRecord> records);
  void seal();

  StoreWriter(const StoreWriter&) = delete;
  StoreWriter& operator=(const StoreWriter&) = delete;

 private:
  struct Shard;
  fs::path dir_;
  StoreMeta meta_;
  std::vector<std::unique_ptr<Shard>> shards_;
  bool sealed_ = false;
};

class SparseStore {
 public:
  static SparseStore open(const fs::path& dir);

  const StoreMeta& meta() const noexcept { return meta_; }
  const fs::path& dir() const noexcept { return dir_; }
  std::vector<StoreRecord> read_shard(std::size_t shard) const;
  std::vector<StoreRecord> read_all() const;
  /// Position of a trajectory hash in meta().trajectories.
  std::size_t trajectory_index(std::uint64_t hash) const;
  /// Copies the store record-for-record into `out_dir`.
  void copy_to(const fs::path& out_dir) const;

 private:
  fs::path dir_;
  StoreMeta meta_;
  std::map<std::uint64_t, std::size_t> hash_to_index_;
};

struct IndexEntry {
  std::uint32_t trajectory = 0;  // index into StoreMeta::trajectories
  std::uint32_t token_pos = 0;
  float value = 0.0f;
  friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

/// Per (feature, trajectory) activity over masked tokens.
struct TrajectoryAggregate {
  std::uint32_t trajectory = 0;
  std::uint32_t count = 0;  // tokens with nonzero activation
  float max = 0.0f;
  double sum = 0.0;
  friend bool operator==(const TrajectoryAggregate&, const TrajectoryAggregate&) = default;
};

/// Orders index entries: value descending, then trajectory, then position.
bool index_entry_before(const IndexEntry& a, const IndexEntry& b);

/// Feature-major view of a store: top-N examples and per-trajectory aggregates.
class FeatureIndex {
 public:
  FeatureIndex() = default;
  FeatureIndex(std::size_t n_features, std::size_t depth);

  std::size_t n_features() const noexcept { return top_.size(); }
  std::size_t depth() const noexcept { return depth_; }
  const std::vector<IndexEntry>& top(std::uint32_t feature) const { return top_.at(feature); }
  const std::vector<TrajectoryAggregate>& aggregates(std::uint32_t feature) const {
    return aggregates_.at(feature);
  }
  /// Features with at least one stored record.
  std::vector<std::uint32_t> active_features() const;

  /// Adds one record; records of one trajectory must arrive contiguously.
  void add(std::uint32_t trajectory, const StoreRecord& r);
  /// Merges another partial index built over disjoint trajectories.
  void merge(const FeatureIndex& other);
  /// Sorts top lists and aggregate lists into canonical order.
  void finalize();

  friend bool operator==(const FeatureIndex&, const FeatureIndex&) = default;

 private:
  std::size_t depth_ = 50;
  std::vector<std::vector<IndexEntry>> top_;  // min-heaps until finalize()
  std::vector<std::vector<TrajectoryAggregate>> aggregates_;
};

/// Builds the index from a sealed store, one worker per shard.
FeatureIndex build_feature_index(const SparseStore& store, std::size_t depth = 50);
FeatureIndex build_feature_index_serial(const SparseStore& store, std::size_t depth = 50);

struct Example {
  TrajectoryKey trajectory_key;
  std::uint32_t trajectory = 0;
  std::uint32_t token_pos = 0;
  float value = 0.0f;
};

/// Top activations of a feature, descending, at most min(n, depth).
std::vector<Example> top_examples(const FeatureIndex& index, const StoreMeta& meta,
                                  std::uint32_t feature_id, std::size_t n);

}  // namespace trajlens
