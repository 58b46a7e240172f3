#include "trajlens/kernels.hpp"

namespace trajlens::kernels {

namespace {

std::size_t row_count(const SaeWeights& weights, std::span<const float> rows) {
  if (weights.d_model == 0 || rows.size() % weights.d_model != 0)
    throw ShapeError("encode_rows: buffer is not a whole number of rows");
  return rows.size() / weights.d_model;
}

}  // namespace

std::vector<SparseVector> encode_rows(const SaeWeights& weights, std::span<const float> rows, std::size_t k) {
  const std::size_t n = row_count(weights, rows);
  std::vector<SparseVector> out(n);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i)
    out[i] = topk_retain(encode_token(weights, rows.subspan(i * weights.d_model, weights.d_model)), k);
  return out;
}

std::vector<SparseVector> encode_rows_serial(const SaeWeights& weights, std::span<const float> rows,
                                             std::size_t k) {
  const std::size_t n = row_count(weights, rows);
  std::vector<SparseVector> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = topk_retain(encode_token(weights, rows.subspan(i * weights.d_model, weights.d_model)), k);
  return out;
}

}  // namespace trajlens::kernels
