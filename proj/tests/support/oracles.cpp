#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oracle {

namespace {

std::uint64_t choose(unsigned n, unsigned k) {
  std::uint64_t r = 1;
  for (unsigned i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

long double pearson(const std::vector<long double>& a, const std::vector<long double>& b) {
  const std::size_t n = a.size();
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return NAN;
  return sab / std::sqrt(saa * sbb);
}

std::vector<long double> pairwise_ranks(std::span<const double> v) {
  std::vector<long double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::size_t less = 0, equal = 0;
    for (double w : v) {
      if (w < v[i]) ++less;
      else if (w == v[i]) ++equal;
    }
    r[i] = less + (equal + 1) / 2.0L;
  }
  return r;
}

}  // namespace

Fraction mcnemar_fraction(std::uint64_t b, std::uint64_t c) {
  const unsigned n = static_cast<unsigned>(b + c);
  if (n == 0) return {1, 1};
  const unsigned k = static_cast<unsigned>(std::min(b, c));
  std::uint64_t tail = 0;
  for (unsigned i = 0; i <= k; ++i) tail += choose(n, i);
  std::uint64_t num = 2 * tail, den = std::uint64_t{1} << n;
  if (num >= den) return {1, 1};
  const std::uint64_t g = std::gcd(num, den);
  return {num / g, den / g};
}

std::optional<double> auc_pairwise(std::span<const double> scores, std::span<const int> labels) {
  double credit = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) credit += 1;
      else if (scores[i] == scores[j]) credit += 0.5;
    }
  }
  if (pairs == 0) return std::nullopt;
  return credit / static_cast<double>(pairs);
}

std::optional<double> spearman_bruteforce(std::span<const double> xs, std::span<const double> ys) {
  const long double r = pearson(pairwise_ranks(xs), pairwise_ranks(ys));
  if (std::isnan(r)) return std::nullopt;
  return static_cast<double>(r);
}

double monotone_sse_exhaustive(std::span<const double> xs, std::span<const double> ys, bool increasing) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  // tie groups of x
  std::vector<std::vector<double>> groups;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i == 0 || xs[order[i]] != xs[order[i - 1]]) groups.emplace_back();
    groups.back().push_back(ys[order[i]]);
  }
  const std::size_t m = groups.size();
  double best = INFINITY;
  for (std::uint64_t cuts = 0; cuts < (std::uint64_t{1} << (m - 1)); ++cuts) {
    std::vector<double> means;
    double sse = 0;
    std::vector<double> block;
    for (std::size_t g = 0; g < m; ++g) {
      block.insert(block.end(), groups[g].begin(), groups[g].end());
      const bool end_here = g + 1 == m || ((cuts >> g) & 1);
      if (!end_here) continue;
      double mean = 0;
      for (double v : block) mean += v;
      mean /= static_cast<double>(block.size());
      for (double v : block) sse += (v - mean) * (v - mean);
      means.push_back(mean);
      block.clear();
    }
    bool ok = true;
    for (std::size_t i = 1; i < means.size(); ++i)
      if (increasing ? means[i] < means[i - 1] : means[i] > means[i - 1]) ok = false;
    if (ok) best = std::min(best, sse);
  }
  return best;
}

double isotonic_score_bruteforce(std::span<const double> xs, std::span<const double> ys) {
  double mean = 0;
  for (double y : ys) mean += y;
  mean /= static_cast<double>(ys.size());
  double sst = 0;
  for (double y : ys) sst += (y - mean) * (y - mean);
  if (sst == 0) return 0.0;
  const double up = monotone_sse_exhaustive(xs, ys, true);
  const double down = monotone_sse_exhaustive(xs, ys, false);
  if (up <= down + 1e-12 * sst) return std::sqrt(std::max(0.0, 1 - up / sst));
  return -std::sqrt(std::max(0.0, 1 - down / sst));
}

std::vector<double> dense_encode(const trajlens::SaeWeights& w, std::span<const float> x) {
  std::vector<double> z(w.n_features, 0.0);
  for (std::size_t f = 0; f < w.n_features; ++f) {
    double pre = w.b_enc[f];
    for (std::size_t d = 0; d < w.d_model; ++d) pre += double(w.w_enc[f * w.d_model + d]) * double(x[d]);
    if (pre > 0 && pre > w.theta[f]) z[f] = pre;
  }
  return z;
}

std::optional<double> fleiss_kappa_direct(const std::vector<std::vector<trajlens::Answer>>& ratings) {
  const double N = static_cast<double>(ratings.size());
  const double n = static_cast<double>(ratings.front().size());
  double p_a = 0, mean_agree = 0;
  for (const auto& row : ratings) {
    double a = 0;
    for (auto r : row) a += r == trajlens::Answer::A;
    const double b = n - a;
    p_a += a;
    mean_agree += (a * (a - 1) + b * (b - 1)) / (n * (n - 1));
  }
  p_a /= N * n;
  mean_agree /= N;
  const double pe = p_a * p_a + (1 - p_a) * (1 - p_a);
  if (pe == 1) return std::nullopt;
  return (mean_agree - pe) / (1 - pe);
}

}  // namespace oracle
