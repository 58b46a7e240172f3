#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace trajlens::stats {

/// 1-based ranks; tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> xs);

/// Pearson correlation, nullopt when either side has zero variance.
std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys);

double mean(std::span<const double> xs);
/// Population variance (divides by n).
double variance(std::span<const double> xs);

/// Weighted pool-adjacent-violators: nondecreasing least-squares fit of `ys`
/// (already ordered) with positive weights.
std::vector<double> pava(std::span<const double> ys, std::span<const double> weights);

/// Least-squares monotone fit of ys on xs. Tied xs are pooled first so they
/// receive one fitted value. Returns fitted values in input order.
std::vector<double> isotonic_fit(std::span<const double> xs, std::span<const double> ys,
                                 bool increasing);

/// Binomial coefficient as a double (exact while it fits in 53 bits).
double binomial(unsigned n, unsigned k);

}  // namespace trajlens::stats
