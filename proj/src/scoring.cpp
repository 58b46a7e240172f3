#include "trajlens/scoring.hpp"
#include "trajlens/kernels.hpp"
#include "trajlens/stats.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace trajlens {

std::string_view to_string(AggregationKind k) {
  switch (k) {
    case AggregationKind::binary: return "binary";
    case AggregationKind::max: return "max";
    case AggregationKind::mean: return "mean";
    case AggregationKind::sum: return "sum";
  }
  return "sum";
}

std::string_view to_string(CorrelationMethod m) {
  return m == CorrelationMethod::spearman ? "spearman" : "isotonic";
}

std::string_view to_string(TargetKind t) {
  switch (t) {
    case TargetKind::training_step: return "training_step";
    case TargetKind::reward: return "reward";
    case TargetKind::good_bad_diff: return "good_bad_diff";
  }
  return "training_step";
}

AggregationKind parse_aggregation(std::string_view s) {
  for (auto k : kAllAggregations)
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown aggregation '" + std::string(s) + "'");
}

CorrelationMethod parse_method(std::string_view s) {
  for (auto m : kAllMethods)
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown correlation method '" + std::string(s) + "'");
}

TargetKind parse_target(std::string_view s) {
  for (auto t : {TargetKind::training_step, TargetKind::reward, TargetKind::good_bad_diff})
    if (to_string(t) == s) return t;
  throw InvalidArgument("unknown target '" + std::string(s) + "'");
}

double aggregate(std::span<const float> nonzero_values, std::size_t masked_tokens, AggregationKind kind) {
  if (masked_tokens == 0) throw UndefinedAggregateError("aggregate over zero masked tokens");
  double sum = 0.0;
  float mx = 0.0f;
  bool any = false;
  for (float v : nonzero_values) {
    if (v != 0.0f) any = true;
    sum += v;
    mx = std::max(mx, v);
  }
  switch (kind) {
    case AggregationKind::binary: return any ? 1.0 : 0.0;
    case AggregationKind::max: return mx;
    case AggregationKind::sum: return sum;
    case AggregationKind::mean: return sum / static_cast<double>(masked_tokens);
  }
  return 0.0;
}

double aggregate(const TrajectoryAggregate* agg, std::size_t masked_tokens, AggregationKind kind) {
  if (masked_tokens == 0) throw UndefinedAggregateError("aggregate over zero masked tokens");
  if (agg == nullptr || agg->count == 0) return 0.0;
  switch (kind) {
    case AggregationKind::binary: return 1.0;
    case AggregationKind::max: return agg->max;
    case AggregationKind::sum: return agg->sum;
    case AggregationKind::mean: return agg->sum / static_cast<double>(masked_tokens);
  }
  return 0.0;
}

namespace {

void check_pair(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size())
    throw InvalidArgument("correlation: length mismatch (" + std::to_string(xs.size()) + " vs " +
                          std::to_string(ys.size()) + ")");
  if (xs.size() < 2) throw InvalidArgument("correlation needs at least 2 points");
}

double sum_sq(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  const auto rx = stats::average_ranks(xs);
  const auto ry = stats::average_ranks(ys);
  return stats::pearson(rx, ry);
}

double isotonic_score(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  const double m = stats::mean(ys);
  double ss_tot = 0.0;
  for (double y : ys) ss_tot += (y - m) * (y - m);
  if (ss_tot <= 0.0) return 0.0;
  const auto inc = stats::isotonic_fit(xs, ys, true);
  const auto dec = stats::isotonic_fit(xs, ys, false);
  const double ss_inc = sum_sq(ys, inc);
  const double ss_dec = sum_sq(ys, dec);
  // Equal fits up to rounding count as a tie, which goes to the increasing side.
  if (ss_inc <= ss_dec + 1e-12 * ss_tot) return std::sqrt(std::max(0.0, 1.0 - ss_inc / ss_tot));
  return -std::sqrt(std::max(0.0, 1.0 - ss_dec / ss_tot));
}

// ---- feature table ----

FeatureTable FeatureTable::from_index(const StoreMeta& meta, const FeatureIndex& index) {
  FeatureTable t;
  for (const auto& s : meta.trajectories) t.trajectories.push_back({s.key, s.reward, s.masked_tokens});
  t.features.resize(index.n_features());
  for (std::uint32_t f = 0; f < index.n_features(); ++f) t.features[f] = index.aggregates(f);
  return t;
}

std::vector<std::uint32_t> FeatureTable::active_features() const {
  std::vector<std::uint32_t> out;
  for (std::size_t f = 0; f < features.size(); ++f)
    if (!features[f].empty()) out.push_back(static_cast<std::uint32_t>(f));
  return out;
}

std::vector<double> FeatureTable::column(std::uint32_t feature, AggregationKind kind) const {
  static const std::vector<TrajectoryAggregate> none;
  const auto& aggs = feature < features.size() ? features[feature] : none;
  std::vector<double> out;
  out.reserve(trajectories.size());
  std::size_t a = 0;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    while (a < aggs.size() && aggs[a].trajectory < i) ++a;
    if (trajectories[i].masked_tokens == 0) continue;
    const TrajectoryAggregate* hit = (a < aggs.size() && aggs[a].trajectory == i) ? &aggs[a] : nullptr;
    out.push_back(aggregate(hit, trajectories[i].masked_tokens, kind));
  }
  return out;
}

std::vector<double> FeatureTable::target(TargetKind target) const {
  if (target == TargetKind::good_bad_diff)
    throw InvalidArgument("good_bad_diff is a per-batch target; use score_diff");
  std::vector<double> out;
  for (const auto& t : trajectories) {
    if (t.masked_tokens == 0) continue;
    out.push_back(target == TargetKind::training_step ? static_cast<double>(t.key.batch) : t.reward);
  }
  return out;
}

std::vector<std::int64_t> FeatureTable::batches() const {
  std::set<std::int64_t> s;
  for (const auto& t : trajectories) s.insert(t.key.batch);
  return {s.begin(), s.end()};
}

std::vector<FeatureScore> score_all(const FeatureTable& table, std::span<const TargetKind> targets,
                                    std::span<const AggregationKind> kinds, std::span<const CorrelationMethod> methods,
                                    std::span<const std::uint32_t> features) {
  std::vector<std::uint32_t> chosen(features.begin(), features.end());
  if (chosen.empty()) chosen = table.active_features();
  return kernels::score_features(table, chosen, targets, kinds, methods);
}

std::vector<SeriesPoint> diff_series(const FeatureTable& good, const FeatureTable& bad, std::uint32_t feature,
                                     AggregationKind kind, Warnings* warnings) {
  auto per_batch = [&](const FeatureTable& t) {
    std::map<std::int64_t, std::pair<double, std::size_t>> acc;
    const auto col = t.column(feature, kind);
    std::size_t c = 0;
    for (const auto& tr : t.trajectories) {
      if (tr.masked_tokens == 0) continue;
      auto& slot = acc[tr.key.batch];
      slot.first += col[c++];
      slot.second += 1;
    }
    return acc;
  };
  const auto g = per_batch(good);
  const auto b = per_batch(bad);
  std::vector<SeriesPoint> out;
  for (const auto& [batch, gs] : g) {
    auto it = b.find(batch);
    if (it == b.end()) {
      if (warnings) warnings->add("diff_series: batch " + std::to_string(batch) + " only in the good run");
      continue;
    }
    out.push_back({batch, gs.first / static_cast<double>(gs.second) -
                              it->second.first / static_cast<double>(it->second.second)});
  }
  if (warnings)
    for (const auto& [batch, bs] : b)
      if (!g.count(batch)) warnings->add("diff_series: batch " + std::to_string(batch) + " only in the bad run");
  return out;
}

namespace {

bool constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

}  // namespace

std::optional<double> correlate(std::span<const double> target, std::span<const double> values,
                                CorrelationMethod method) {
  if (target.size() < 2 || constant(target) || constant(values)) return std::nullopt;
  if (method == CorrelationMethod::spearman) return spearman(values, target);
  return isotonic_score(target, values);
}

std::vector<FeatureScore> score_diff(const FeatureTable& good, const FeatureTable& bad,
                                     std::span<const AggregationKind> kinds, std::span<const CorrelationMethod> methods,
                                     std::span<const std::uint32_t> features) {
  std::vector<std::uint32_t> chosen(features.begin(), features.end());
  if (chosen.empty()) {
    std::set<std::uint32_t> s;
    for (auto f : good.active_features()) s.insert(f);
    for (auto f : bad.active_features()) s.insert(f);
    chosen.assign(s.begin(), s.end());
  }
  std::vector<FeatureScore> out;
  for (auto f : chosen)
    for (auto kind : kinds) {
      const auto series = diff_series(good, bad, f, kind, nullptr);
      std::vector<double> xs, ys;
      for (const auto& p : series) {
        xs.push_back(static_cast<double>(p.batch));
        ys.push_back(p.value);
      }
      for (auto m : methods) {
        FeatureScore s;
        s.feature_id = f;
        s.aggregation = kind;
        s.method = m;
        s.target = TargetKind::good_bad_diff;
        s.n = series.size();
        s.score = correlate(xs, ys, m);
        out.push_back(s);
      }
    }
  return out;
}

std::vector<RankedFeature> rank_features(std::span<const FeatureScore> scores, std::size_t top_k,
                                         std::size_t per_method_quota) {
  auto stronger = [](const FeatureScore& a, const FeatureScore& b) {
    const double x = std::abs(*a.score), y = std::abs(*b.score);
    if (x != y) return x > y;
    return a.feature_id < b.feature_id;
  };
  using Combo = std::tuple<int, int, int>;
  std::map<Combo, std::vector<const FeatureScore*>> groups;
  for (const auto& s : scores)
    if (s.defined())
      groups[{static_cast<int>(s.target), static_cast<int>(s.method), static_cast<int>(s.aggregation)}].push_back(&s);
  std::map<std::uint32_t, const FeatureScore*> best;
  for (auto& [combo, list] : groups) {
    std::sort(list.begin(), list.end(), [&](const FeatureScore* a, const FeatureScore* b) { return stronger(*a, *b); });
    if (list.size() > per_method_quota) list.resize(per_method_quota);
    for (const auto* s : list) {
      auto [it, inserted] = best.emplace(s->feature_id, s);
      if (!inserted && std::abs(*s->score) > std::abs(*it->second->score)) it->second = s;
    }
  }
  std::vector<RankedFeature> out;
  for (const auto& [f, s] : best) out.push_back({f, *s});
  std::sort(out.begin(), out.end(), [&](const RankedFeature& a, const RankedFeature& b) { return stronger(a.best, b.best); });
  if (out.size() > top_k) out.resize(top_k);
  return out;
}

ScoreHistogram score_histogram(std::span<const FeatureScore> scores, std::size_t bins) {
  if (bins == 0) throw InvalidArgument("histogram needs at least one bin");
  ScoreHistogram h;
  h.counts.assign(bins, 0);
  double sum = 0.0;
  std::size_t positive = 0;
  for (const auto& s : scores) {
    if (!s.defined()) continue;
    const double v = *s.score;
    auto b = static_cast<std::ptrdiff_t>(std::floor((v - h.lo) / (h.hi - h.lo) * static_cast<double>(bins)));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    h.counts[static_cast<std::size_t>(b)] += 1;
    sum += v;
    if (v > 0.0) ++positive;
    ++h.n;
  }
  if (h.n == 0) throw InvalidArgument("histogram needs at least one defined score");
  h.mean = sum / static_cast<double>(h.n);
  h.positive_share = static_cast<double>(positive) / static_cast<double>(h.n);
  return h;
}

// ---- serialization ----

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json score_json(const FeatureScore& s) {
  nlohmann::ordered_json j;
  j["feature_id"] = s.feature_id;
  j["kind"] = to_string(s.aggregation);
  j["method"] = to_string(s.method);
  j["target"] = to_string(s.target);
  j["score"] = s.score ? nlohmann::ordered_json(*s.score) : nlohmann::ordered_json(nullptr);
  j["n"] = s.n;
  return j;
}

FeatureScore score_from(const nlohmann::json& j) {
  FeatureScore s;
  s.feature_id = j.at("feature_id").get<std::uint32_t>();
  s.aggregation = parse_aggregation(j.at("kind").get<std::string>());
  s.method = parse_method(j.at("method").get<std::string>());
  s.target = parse_target(j.at("target").get<std::string>());
  if (!j.at("score").is_null()) s.score = j.at("score").get<double>();
  s.n = j.at("n").get<std::size_t>();
  return s;
}

}  // namespace

std::string scores_to_csv(std::span<const FeatureScore> scores) {
  std::string out = "feature_id,kind,method,target,score,n\n";
  for (const auto& s : scores) {
    out += std::to_string(s.feature_id) + "," + std::string(to_string(s.aggregation)) + "," +
           std::string(to_string(s.method)) + "," + std::string(to_string(s.target)) + "," +
           (s.score ? fmt_double(*s.score) : std::string("NA")) + "," + std::to_string(s.n) + "\n";
  }
  return out;
}

std::vector<FeatureScore> scores_from_csv(std::string_view csv) {
  std::vector<FeatureScore> out;
  std::istringstream in{std::string(csv)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ParseError("scores csv line " + std::to_string(line_no) + ": expected 6 fields");
    FeatureScore s;
    try {
      s.feature_id = static_cast<std::uint32_t>(std::stoul(cells[0]));
      s.aggregation = parse_aggregation(cells[1]);
      s.method = parse_method(cells[2]);
      s.target = parse_target(cells[3]);
      if (cells[4] != "NA") s.score = std::stod(cells[4]);
      s.n = std::stoul(cells[5]);
    } catch (const std::logic_error& e) {
      throw ParseError("scores csv line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(s);
  }
  return out;
}

nlohmann::json scores_to_json(std::span<const FeatureScore> scores) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : scores) arr.push_back(score_json(s));
  return arr;
}

nlohmann::json histogram_to_json(const ScoreHistogram& h) {
  nlohmann::ordered_json j;
  j["lo"] = h.lo;
  j["hi"] = h.hi;
  j["bins"] = h.counts.size();
  j["counts"] = h.counts;
  j["n"] = h.n;
  j["mean"] = h.mean;
  j["positive_share"] = h.positive_share;
  return j;
}

nlohmann::json ranking_to_json(std::span<const RankedFeature> ranking) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : ranking) arr.push_back(score_json(r.best));
  return arr;
}

std::vector<RankedFeature> ranking_from_json(const nlohmann::json& j) {
  std::vector<RankedFeature> out;
  for (const auto& e : j) {
    auto s = score_from(e);
    out.push_back({s.feature_id, s});
  }
  return out;
}

}  // namespace trajlens
