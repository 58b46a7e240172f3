#include "trajlens/kernels.hpp"
#include "trajlens/scoring.hpp"

namespace trajlens::kernels {

namespace {

struct Prepared {
  std::vector<std::vector<double>> targets;
};

Prepared prepare(const FeatureTable& table, std::span<const TargetKind> targets) {
  Prepared p;
  for (auto t : targets) p.targets.push_back(table.target(t));
  return p;
}

void score_one(const FeatureTable& table, const Prepared& prep, std::uint32_t feature,
               std::span<const TargetKind> targets, std::span<const AggregationKind> kinds,
               std::span<const CorrelationMethod> methods, FeatureScore* out) {
  std::vector<std::vector<double>> columns;
  columns.reserve(kinds.size());
  for (auto k : kinds) columns.push_back(table.column(feature, k));
  for (std::size_t ti = 0; ti < targets.size(); ++ti)
    for (std::size_t ki = 0; ki < kinds.size(); ++ki)
      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        FeatureScore& s = *out++;
        s.feature_id = feature;
        s.aggregation = kinds[ki];
        s.method = methods[mi];
        s.target = targets[ti];
        s.n = columns[ki].size();
        s.score = correlate(prep.targets[ti], columns[ki], methods[mi]);
      }
}

}  // namespace

std::vector<FeatureScore> score_features(const FeatureTable& table, std::span<const std::uint32_t> features,
                                         std::span<const TargetKind> targets, std::span<const AggregationKind> kinds,
                                         std::span<const CorrelationMethod> methods) {
  const Prepared prep = prepare(table, targets);
  const std::size_t per = targets.size() * kinds.size() * methods.size();
  std::vector<FeatureScore> out(features.size() * per);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < features.size(); ++i)
    score_one(table, prep, features[i], targets, kinds, methods, out.data() + i * per);
  return out;
}

std::vector<FeatureScore> score_features_serial(const FeatureTable& table, std::span<const std::uint32_t> features,
                                                std::span<const TargetKind> targets,
                                                std::span<const AggregationKind> kinds,
                                                std::span<const CorrelationMethod> methods) {
  const Prepared prep = prepare(table, targets);
  const std::size_t per = targets.size() * kinds.size() * methods.size();
  std::vector<FeatureScore> out(features.size() * per);
  for (std::size_t i = 0; i < features.size(); ++i)
    score_one(table, prep, features[i], targets, kinds, methods, out.data() + i * per);
  return out;
}

}  // namespace trajlens::kernels
