#include "fixtures.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include <unistd.h>

#include "trajlens/cli.hpp"
#include "trajlens/rng.hpp"

namespace fixtures {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("trajlens_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

fs::path data_path(const std::string& name) { return fs::path(TRAJLENS_TEST_DATA) / name; }

ToolRun run_tool(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  ToolRun r;
  r.code = trajlens::run_command(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

trajlens::SaeWeights random_weights(std::size_t d_model, std::size_t n_features, std::uint64_t seed,
                                    double theta_scale) {
  trajlens::Rng rng(seed);
  auto w = trajlens::SaeWeights::zeros(d_model, n_features);
  for (auto& v : w.w_enc) v = static_cast<float>(rng.normal() / std::sqrt(double(d_model)));
  for (auto& v : w.b_enc) v = static_cast<float>(rng.normal() * 0.1);
  for (auto& v : w.theta) v = static_cast<float>(rng.uniform() * theta_scale);
  return w;
}

PlantedRun planted_run(std::vector<trajlens::synth::PlantedFeatureSpec> specs,
                       const trajlens::synth::CorpusOptions& options, std::size_t d_model,
                       const fs::path& store_dir) {
  PlantedRun r;
  r.specs = std::move(specs);
  const trajlens::WhitespaceTokenizer tok;
  r.gen = trajlens::synth::generate_corpus(r.specs, options, tok);
  r.weights = trajlens::synth::make_planted_weights(r.specs, d_model, options.seed);
  const trajlens::synth::PlantedActivationSource source(r.specs, r.weights, options.seed);
  trajlens::ExtractOptions eo;
  eo.n_shards = 8;
  r.extracted = trajlens::extract_corpus(r.gen.corpus, tok, source, r.weights, store_dir, eo);
  r.table = trajlens::FeatureTable::from_index(r.extracted.meta, r.extracted.index);
  return r;
}

}  // namespace fixtures
