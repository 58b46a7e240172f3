#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajlens/extract.hpp"
#include "trajlens/scoring.hpp"
#include "trajlens/synth.hpp"

namespace fixtures {

namespace fs = std::filesystem;

/// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

fs::path data_path(const std::string& name);

struct ToolRun {
  int code = 0;
  std::string out;
  std::string err;
};
/// Runs the CLI in-process.
ToolRun run_tool(const std::vector<std::string>& args);

trajlens::SaeWeights random_weights(std::size_t d_model, std::size_t n_features, std::uint64_t seed,
                                    double theta_scale = 0.0);

/// Synthetic corpus pushed through extraction with planted activations.
struct PlantedRun {
  std::vector<trajlens::synth::PlantedFeatureSpec> specs;
  trajlens::synth::GeneratedCorpus gen;
  trajlens::SaeWeights weights;
  trajlens::ExtractResult extracted;
  trajlens::FeatureTable table;
};
PlantedRun planted_run(std::vector<trajlens::synth::PlantedFeatureSpec> specs,
                       const trajlens::synth::CorpusOptions& options, std::size_t d_model,
                       const fs::path& store_dir);

}  // namespace fixtures
