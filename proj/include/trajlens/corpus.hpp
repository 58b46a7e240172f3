#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "trajlens/common.hpp"
#include "trajlens/tokenizer.hpp"

namespace trajlens {

enum class Role { system, assistant, user, tool };

std::string_view to_string(Role role);
Role parse_role(std::string_view s);

struct Message {
  Role role = Role::assistant;
  std::string content;
  std::optional<std::string> tool_name;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  friend bool operator==(const Message&, const Message&) = default;
};

struct TrajectoryKey {
  std::string run_id;
  std::int64_t batch = 0;
  std::int64_t group = 0;
  std::int64_t traj = 0;

  auto operator<=>(const TrajectoryKey&) const = default;

  /// Canonical id, e.g. `batch003_group001_trajectory012_goodrun`. This is the
  /// id used in summaries and citations.
  std::string to_string() const;
  std::uint64_t hash() const;
};

struct Trajectory {
  TrajectoryKey key;
  double reward = 0.0;
  std::vector<Message> messages;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Immutable after construction; iteration order is sorted by key.
class Corpus {
 public:
  Corpus() = default;
  /// Sorts by key and rejects duplicate keys or empty trajectories.
  explicit Corpus(std::vector<Trajectory> trajectories);

  std::size_t size() const noexcept { return trajectories_.size(); }
  bool empty() const noexcept { return trajectories_.empty(); }
  const Trajectory& operator[](std::size_t i) const { return trajectories_[i]; }
  auto begin() const noexcept { return trajectories_.begin(); }
  auto end() const noexcept { return trajectories_.end(); }
  const std::vector<Trajectory>& trajectories() const noexcept { return trajectories_; }

  const Trajectory* find(const TrajectoryKey& key) const;
  const Trajectory* find(std::string_view canonical_id) const;
  std::optional<std::size_t> index_of(std::string_view canonical_id) const;

  std::map<std::string, std::size_t> run_counts() const;
  std::vector<std::int64_t> batches() const;
  const Warnings& warnings() const noexcept { return warnings_; }
  Warnings& warnings() noexcept { return warnings_; }

 private:
  std::vector<Trajectory> trajectories_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
  Warnings warnings_;
};

Trajectory trajectory_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json trajectory_to_json(const Trajectory& t);

/// Reads the JSON-lines corpus format. Blank lines are skipped.
Corpus load_corpus(const fs::path& path);
Corpus parse_corpus(std::string_view jsonl, std::string_view source_name = "<memory>");
std::string serialize_corpus(const Corpus& corpus);
void write_corpus(const Corpus& corpus, const fs::path& path);

struct SampleReport {
  Corpus corpus;
  /// Human-readable shortfalls, one per batch/group that had fewer than requested.
  std::vector<std::string> shortfalls;
};

/// Per batch, draws up to `groups_per_batch` groups and within each up to
/// `trajs_per_group` trajectories. Deterministic for a given seed.
SampleReport canonical_sample(const Corpus& corpus, int groups_per_batch, int trajs_per_group,
                              std::uint64_t seed);

/// Token stream of one trajectory with per-token provenance.
struct TokenizedTrajectory {
  std::vector<TokenId> ids;
  std::vector<std::string> pieces;
  std::vector<std::uint8_t> assistant;      // 1 iff token belongs to an assistant message
  std::vector<std::uint32_t> message_index;  // message each token came from

  std::size_t size() const noexcept { return ids.size(); }
};

TokenizedTrajectory tokenize_trajectory(const Trajectory& t, const Tokenizer& tokenizer);

std::vector<bool> assistant_mask(const Trajectory& t, const Tokenizer& tokenizer);

struct SpanBounds {
  std::size_t start = 0;
  std::size_t end = 0;
  friend bool operator==(const SpanBounds&, const SpanBounds&) = default;
};

/// Window layout for a sequence of `total` tokens: starts at 0, stride,
/// 2*stride, ... while a full window fits, then one window aligned to the
/// sequence end if the regular ones stop short. Regular windows made
/// redundant by the tail window are dropped.
std::vector<SpanBounds> chunk_bounds(std::size_t total, std::size_t window, std::size_t stride);

/// For each token, the index of the window that owns it: the first window
/// covering it, which gives the token the most left context.
std::vector<std::uint32_t> window_owners(const std::vector<SpanBounds>& spans, std::size_t total);

struct TokenSpan {
  TrajectoryKey trajectory_key;
  std::size_t start = 0;
  std::size_t end = 0;
  std::vector<TokenId> token_ids;
  std::vector<bool> role_mask;
};

std::vector<TokenSpan> chunk_trajectory(const Trajectory& t, const Tokenizer& tokenizer,
                                        std::size_t window = 1024, std::size_t stride = 512);

}  // namespace trajlens
