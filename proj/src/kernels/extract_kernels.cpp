#include "trajlens/kernels.hpp"

#include <exception>

namespace trajlens::kernels {

namespace {

ExtractedTrajectory extract_one(const Trajectory& t, const Tokenizer& tokenizer, const ActivationSource& source,
                                const SaeWeights& weights, std::size_t k) {
  const auto tokens = tokenize_trajectory(t, tokenizer);
  ExtractedTrajectory out;
  out.info.key = t.key;
  out.info.hash = t.key.hash();
  out.info.reward = t.reward;
  out.info.total_tokens = tokens.size();
  for (auto a : tokens.assistant) out.info.masked_tokens += a;
  if (tokens.size() == 0) return out;

  const auto acts = source.fetch(t, tokens);
  if (acts.d_model != weights.d_model)
    throw ShapeError("activation width " + std::to_string(acts.d_model) + " does not match SAE d_model " +
                     std::to_string(weights.d_model));
  std::size_t row = 0;
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    while (row < acts.size() && acts.positions[row] < pos) ++row;
    const bool present = row < acts.size() && acts.positions[row] == pos;
    const bool masked = tokens.assistant[pos] != 0;
    if (!present) {
      if (masked)
        throw MissingActivationError("missing activation for trajectory " + t.key.to_string() + " token " +
                                     std::to_string(pos));
      continue;
    }
    const auto z = topk_retain(encode_token(weights, acts.row(row)), k);
    out.info.records_unmasked += z.size();
    if (!masked) continue;
    for (const auto& e : z)
      out.records.push_back({out.info.hash, static_cast<std::uint32_t>(pos), e.feature_id, e.value});
  }
  out.info.records = out.records.size();
  return out;
}

}  // namespace

std::vector<ExtractedTrajectory> extract_block(std::span<const Trajectory* const> block, const Tokenizer& tokenizer,
                                               const ActivationSource& source, const SaeWeights& weights,
                                               std::size_t k) {
  std::vector<ExtractedTrajectory> out(block.size());
  std::vector<std::exception_ptr> errors(block.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < block.size(); ++i) {
    try {
      out[i] = extract_one(*block[i], tokenizer, source, weights, k);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  // report the first failure in corpus order, independent of scheduling
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<ExtractedTrajectory> extract_block_serial(std::span<const Trajectory* const> block,
                                                      const Tokenizer& tokenizer, const ActivationSource& source,
                                                      const SaeWeights& weights, std::size_t k) {
  std::vector<ExtractedTrajectory> out;
  out.reserve(block.size());
  for (const auto* t : block) out.push_back(extract_one(*t, tokenizer, source, weights, k));
  return out;
}

}  // namespace trajlens::kernels
