#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajlens/common.hpp"
#include "trajlens/scoring.hpp"

namespace trajlens {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  Matrix select_rows(std::span<const std::size_t> idx) const;
};

struct Standardization {
  Matrix z;
  std::vector<double> mean;
  std::vector<double> std;        // population std
  std::vector<bool> zero_variance;  // such columns are mapped to zeros
};

/// Column-wise z-scores. Throws InvalidArgument with fewer than 2 rows.
Standardization standardize(const Matrix& x);
/// Applies training-fold statistics to other rows.
Matrix apply_standardization(const Matrix& x, const Standardization& s);

struct LogisticOptions {
  double l2 = 1.0;
  int max_iter = 100;
  double tol = 1e-8;  // on the gradient norm
};

struct LogisticModel {
  std::vector<double> weights;
  double bias = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> loss_history;  // loss after each iterate, starting at w = 0

  double logit(std::span<const double> x) const;
  std::vector<double> decision(const Matrix& x) const;
};

/// Summed negative log-likelihood plus l2/2 * |w|^2 (bias unpenalized).
double logistic_loss(const Matrix& x, std::span<const int> y, std::span<const double> w, double bias,
                     double l2);
/// Gradient with respect to (w..., bias).
std::vector<double> logistic_gradient(const Matrix& x, std::span<const int> y,
                                      std::span<const double> w, double bias, double l2);

/// Damped Newton from zero initialization with backtracking line search, so
/// the loss never increases. Throws InvalidArgument when y has one class.
LogisticModel logistic_fit(const Matrix& x, std::span<const int> y, const LogisticOptions& options = {});

/// Mann-Whitney AUC with half credit for ties; nullopt when a class is empty.
/// Labels are 1 (positive) or 0.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);

/// Fold id per row. Each class is shuffled with the seed and dealt round robin,
/// so every row lands in exactly one test fold.
std::vector<std::uint32_t> stratified_folds(std::span<const int> labels, std::size_t k,
                                            std::uint64_t seed);

/// Rows of one training step: good-run trajectories labeled 1, bad-run 0.
struct ProbeDataset {
  std::int64_t step = 0;
  std::vector<std::uint32_t> features;
  std::vector<std::string> trajectory_ids;
  std::vector<int> labels;
  Matrix x;
};

std::vector<ProbeDataset> build_probe_datasets(const FeatureTable& good, const FeatureTable& bad,
                                               std::span<const std::uint32_t> features,
                                               AggregationKind kind);

struct ProbeOptions {
  std::vector<std::uint32_t> features;
  AggregationKind kind = AggregationKind::sum;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  double threshold = 0.8;
  LogisticOptions logistic;
};

struct StepResult {
  std::int64_t step = 0;
  std::size_t n_good = 0;
  std::size_t n_bad = 0;
  double auc = 0.0;  // mean over folds
  double auc_std = 0.0;
  double auc_min = 0.0;
  double auc_max = 0.0;
  std::vector<double> fold_aucs;
  std::vector<std::optional<double>> feature_auc;  // single-feature AUC per selected feature
};

struct ProbeReport {
  std::vector<std::uint32_t> features;
  AggregationKind kind = AggregationKind::sum;
  double threshold = 0.8;
  std::vector<StepResult> steps;
  std::vector<std::vector<SeriesPoint>> divergence;  // per feature: mean(good) - mean(bad)
  std::optional<std::int64_t> flagged_step;
  Warnings warnings;
};

/// Cross-validated probe AUC per step. Steps run in parallel; each fit is
/// serial and deterministic.
ProbeReport per_step_cv_auc(const FeatureTable& good, const FeatureTable& bad, const ProbeOptions& options);
ProbeReport per_step_cv_auc_serial(const FeatureTable& good, const FeatureTable& bad,
                                   const ProbeOptions& options);

/// Evaluates one step's dataset; nullopt (with a warning) when it has too few rows.
std::optional<StepResult> evaluate_step(const ProbeDataset& data, const ProbeOptions& options,
                                        Warnings& warnings);

nlohmann::ordered_json probe_report_to_json(const ProbeReport& r);
ProbeReport probe_report_from_json(const nlohmann::json& j);
std::string probe_auc_csv(const ProbeReport& r);
std::string probe_divergence_csv(const ProbeReport& r);

}  // namespace trajlens
