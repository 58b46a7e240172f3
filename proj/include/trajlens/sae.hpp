#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "trajlens/common.hpp"
#include "trajlens/corpus.hpp"

namespace trajlens {

struct SparseEntry {
  std::uint32_t feature_id = 0;
  float value = 0.0f;
  friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};
using SparseVector = std::vector<SparseEntry>;

/// Encoder half of a sparse autoencoder. `theta` holds per-feature JumpReLU
/// thresholds; all zeros is plain rectification.
struct SaeWeights {
  std::size_t d_model = 0;
  std::size_t n_features = 0;
  std::vector<float> w_enc;  // n_features x d_model, row-major
  std::vector<float> b_enc;
  std::vector<float> theta;

  static SaeWeights zeros(std::size_t d_model, std::size_t n_features);
  std::span<const float> row(std::size_t feature) const {
    return {w_enc.data() + feature * d_model, d_model};
  }
  /// Throws ShapeError on inconsistent sizes, InvalidArgument on non-finite
  /// entries or negative thresholds.
  void validate() const;
};

/// Reads `weights.json` ({d_model, n_features, dtype, files}) and the raw
/// little-endian f32 matrices it names. `path` may be the manifest or its directory.
SaeWeights load_sae_weights(const fs::path& path);
void save_sae_weights(const SaeWeights& weights, const fs::path& dir);

/// z_f = pre_f if pre_f > theta_f and pre_f > 0, else 0, with pre = W x + b.
/// Only nonzero entries are returned, in feature order.
SparseVector encode_token(const SaeWeights& weights, std::span<const float> x);

/// Keeps the k largest entries, ties going to the lower feature id. Output is
/// sorted by descending value.
SparseVector topk_retain(SparseVector v, std::size_t k = 100);

/// Dense activations for a subset of one trajectory's token positions.
struct TrajectoryActivations {
  std::size_t d_model = 0;
  std::vector<std::uint32_t> positions;  // strictly increasing
  std::vector<float> rows;               // positions.size() x d_model

  std::size_t size() const noexcept { return positions.size(); }
  std::span<const float> row(std::size_t i) const { return {rows.data() + i * d_model, d_model}; }
  /// Index of `pos` in `positions`, or npos.
  std::size_t find(std::uint32_t pos) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

/// Producer of residual-stream activations. Implementations must be safe to
/// call concurrently for different trajectories.
class ActivationSource {
 public:
  virtual ~ActivationSource() = default;
  virtual std::size_t d_model() const = 0;
  virtual TrajectoryActivations fetch(const Trajectory& trajectory,
                                      const TokenizedTrajectory& tokens) const = 0;
};

/// Writer for the activation dump directory: `activations.json` plus one
/// `<hash>.act` stream per trajectory (a JSON header line, then records of
/// u32 token_pos followed by d_model f32 values).
class ActivationDumpWriter {
 public:
  ActivationDumpWriter(fs::path dir, std::size_t d_model);
  void write(const TrajectoryKey& key, const TrajectoryActivations& acts);
  /// Writes the directory manifest. Called by the destructor if omitted.
  void finish();
  ~ActivationDumpWriter();

  ActivationDumpWriter(const ActivationDumpWriter&) = delete;
  ActivationDumpWriter& operator=(const ActivationDumpWriter&) = delete;

 private:
  fs::path dir_;
  std::size_t d_model_;
  std::vector<std::pair<std::string, std::pair<std::string, std::size_t>>> entries_;
  bool finished_ = false;
};

class ActivationDump final : public ActivationSource {
 public:
  explicit ActivationDump(fs::path dir);

  std::size_t d_model() const override { return d_model_; }
  bool contains(const TrajectoryKey& key) const;
  TrajectoryActivations read(const TrajectoryKey& key) const;
  TrajectoryActivations fetch(const Trajectory& trajectory,
                              const TokenizedTrajectory& tokens) const override;
  std::vector<std::string> trajectory_ids() const;

  /// Rewrites this dump into `out_dir` through the writer.
  void copy_to(const fs::path& out_dir) const;

 private:
  fs::path dir_;
  std::size_t d_model_ = 0;
  std::map<std::string, std::string, std::less<>> files_;  // canonical id -> file name
};

struct ExtractorEndpoint {
  std::string base_url;  // e.g. http://127.0.0.1:8080
  std::string path = "/extract";
  std::string api_key;
  std::size_t d_model = 0;
  std::size_t window = 1024;
  std::size_t stride = 512;
  int max_attempts = 3;
  int backoff_ms = 200;
};

/// Queries an external extractor with POST {"token_ids": [...]} per window and
/// expects {"activations": [[f32 x d_model] per token]}. Each token keeps the
/// row from the window that owns it.
class HttpActivationSource final : public ActivationSource {
 public:
  explicit HttpActivationSource(ExtractorEndpoint endpoint);
  std::size_t d_model() const override { return endpoint_.d_model; }
  TrajectoryActivations fetch(const Trajectory& trajectory,
                              const TokenizedTrajectory& tokens) const override;

 private:
  ExtractorEndpoint endpoint_;
};

}  // namespace trajlens
