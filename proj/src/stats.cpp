#include "trajlens/stats.hpp"
#include "trajlens/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace trajlens::stats {

std::vector<double> average_ranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double variance(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size());
}

std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("pearson: length mismatch");
  const double mx = mean(xs), my = mean(ys);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> pava(std::span<const double> ys, std::span<const double> weights) {
  if (ys.size() != weights.size()) throw InvalidArgument("pava: length mismatch");
  struct Block {
    double value;
    double weight;
    std::size_t count;
  };
  std::vector<Block> blocks;
  blocks.reserve(ys.size());
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (!(weights[i] > 0.0)) throw InvalidArgument("pava: weights must be positive");
    blocks.push_back({ys[i], weights[i], 1});
    while (blocks.size() >= 2 && blocks[blocks.size() - 2].value > blocks.back().value) {
      Block b = blocks.back();
      blocks.pop_back();
      Block& a = blocks.back();
      const double w = a.weight + b.weight;
      a.value = (a.value * a.weight + b.value * b.weight) / w;
      a.weight = w;
      a.count += b.count;
    }
  }
  std::vector<double> out;
  out.reserve(ys.size());
  for (const auto& b : blocks) out.insert(out.end(), b.count, b.value);
  return out;
}

std::vector<double> isotonic_fit(std::span<const double> xs, std::span<const double> ys, bool increasing) {
  if (xs.size() != ys.size()) throw InvalidArgument("isotonic_fit: length mismatch");
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  // pool tied xs so they share one fitted value
  std::vector<double> level, weight;
  std::vector<std::size_t> group_of(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    double s = 0.0;
    while (j < n && xs[order[j]] == xs[order[i]]) {
      s += ys[order[j]];
      group_of[order[j]] = level.size();
      ++j;
    }
    const double w = static_cast<double>(j - i);
    level.push_back(increasing ? s / w : -s / w);
    weight.push_back(w);
    i = j;
  }
  auto fitted = pava(level, weight);
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = increasing ? fitted[group_of[k]] : -fitted[group_of[k]];
  return out;
}

double binomial(unsigned n, unsigned k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (unsigned i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return std::round(r);
}

}  // namespace trajlens::stats
