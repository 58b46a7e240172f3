#pragma once

#include "trajlens/corpus.hpp"
#include "trajlens/sae.hpp"
#include "trajlens/store.hpp"

namespace trajlens {

struct ExtractOptions {
  std::size_t k = 100;
  std::size_t n_shards = 64;
  std::size_t window = 1024;  // recorded in the store; used by the HTTP source
  std::size_t stride = 512;
  std::size_t block_size = 128;  // trajectories processed per parallel block
  std::size_t index_depth = 50;
  bool parallel = true;
};

struct ExtractResult {
  StoreMeta meta;
  FeatureIndex index;
  Warnings warnings;
};

/// Runs the extraction pipeline over a corpus and writes a sealed store.
/// Blocks of trajectories are encoded in parallel and flushed to the shards
/// in corpus order, so the store bytes do not depend on thread count.
ExtractResult extract_corpus(const Corpus& corpus, const Tokenizer& tokenizer,
                             const ActivationSource& source, const SaeWeights& weights,
                             const fs::path& store_dir, const ExtractOptions& options = {});

}  // namespace trajlens
