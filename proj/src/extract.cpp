#include "trajlens/extract.hpp"
#include "trajlens/kernels.hpp"

#include <spdlog/spdlog.h>

namespace trajlens {

ExtractResult extract_corpus(const Corpus& corpus, const Tokenizer& tokenizer, const ActivationSource& source,
                             const SaeWeights& weights, const fs::path& store_dir, const ExtractOptions& options) {
  weights.validate();
  if (options.k < 1) throw InvalidArgument("k must be >= 1");
  if (source.d_model() != weights.d_model)
    throw ShapeError("activation source d_model " + std::to_string(source.d_model()) + " != SAE d_model " +
                     std::to_string(weights.d_model));
  StoreMeta tmpl;
  tmpl.n_shards = options.n_shards;
  tmpl.n_features = weights.n_features;
  tmpl.k = options.k;
  tmpl.window = options.window;
  tmpl.stride = options.stride;
  StoreWriter writer(store_dir, tmpl);
  ExtractResult result;
  result.index = FeatureIndex(weights.n_features, options.index_depth);
  if (corpus.empty()) result.warnings.add("extract: corpus is empty; writing an empty store");

  const std::size_t block = std::max<std::size_t>(1, options.block_size);
  std::vector<const Trajectory*> ptrs;
  for (const auto& t : corpus) ptrs.push_back(&t);
  for (std::size_t begin = 0; begin < ptrs.size(); begin += block) {
    const std::size_t end = std::min(ptrs.size(), begin + block);
    std::span<const Trajectory* const> part(ptrs.data() + begin, end - begin);
    auto done = options.parallel ? kernels::extract_block(part, tokenizer, source, weights, options.k)
                                 : kernels::extract_block_serial(part, tokenizer, source, weights, options.k);
    for (std::size_t i = 0; i < done.size(); ++i) {
      const auto traj_index = static_cast<std::uint32_t>(begin + i);
      if (done[i].info.masked_tokens == 0)
        result.warnings.add("trajectory " + done[i].info.key.to_string() + " has no assistant tokens");
      writer.append(done[i].info, done[i].records);
      for (const auto& r : done[i].records) result.index.add(traj_index, r);
    }
    spdlog::debug("extract: {}/{} trajectories", end, ptrs.size());
  }
  writer.seal();
  result.index.finalize();
  result.meta = SparseStore::open(store_dir).meta();
  return result;
}

}  // namespace trajlens
