#define EIGEN_DONT_PARALLELIZE
#include "trajlens/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <Eigen/Dense>

#include "trajlens/rng.hpp"
#include "trajlens/stats.hpp"

namespace trajlens {

using nlohmann::json;
using nlohmann::ordered_json;

Matrix Matrix::select_rows(std::span<const std::size_t> idx) const {
  Matrix out(idx.size(), cols);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(idx[r] * cols), cols,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * cols));
  return out;
}

Standardization standardize(const Matrix& x) {
  if (x.rows < 2) throw InvalidArgument("standardize needs at least two rows");
  Standardization s;
  s.mean.assign(x.cols, 0.0);
  s.std.assign(x.cols, 0.0);
  s.zero_variance.assign(x.cols, false);
  const double n = static_cast<double>(x.rows);
  for (std::size_t c = 0; c < x.cols; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) m += x(r, c);
    m /= n;
    double v = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) v += (x(r, c) - m) * (x(r, c) - m);
    s.mean[c] = m;
    s.std[c] = std::sqrt(v / n);
    s.zero_variance[c] = !(s.std[c] > 1e-12 * std::max(1.0, std::abs(m)));
  }
  s.z = apply_standardization(x, s);
  return s;
}

Matrix apply_standardization(const Matrix& x, const Standardization& s) {
  if (x.cols != s.mean.size()) throw ShapeError("standardization has " + std::to_string(s.mean.size()) +
                                                " columns, matrix has " + std::to_string(x.cols));
  Matrix z(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c)
      z(r, c) = s.zero_variance[c] ? 0.0 : (x(r, c) - s.mean[c]) / s.std[c];
  return z;
}

double LogisticModel::logit(std::span<const double> x) const {
  double z = bias;
  for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * x[i];
  return z;
}

std::vector<double> LogisticModel::decision(const Matrix& x) const {
  std::vector<double> out(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) out[r] = logit(x.row(r));
  return out;
}

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_xy(const Matrix& x, std::span<const int> y) {
  if (y.size() != x.rows) throw ShapeError("label count does not match row count");
  for (int v : y)
    if (v != 0 && v != 1) throw InvalidArgument("labels must be 0 or 1");
}

}  // namespace

double logistic_loss(const Matrix& x, std::span<const int> y, std::span<const double> w, double bias, double l2) {
  check_xy(x, y);
  double loss = 0.0;
  for (std::size_t r = 0; r < x.rows; ++r) {
    double z = bias;
    for (std::size_t c = 0; c < x.cols; ++c) z += w[c] * x(r, c);
    loss += softplus(z) - (y[r] ? z : 0.0);
  }
  double reg = 0.0;
  for (double v : w) reg += v * v;
  return loss + 0.5 * l2 * reg;
}

std::vector<double> logistic_gradient(const Matrix& x, std::span<const int> y, std::span<const double> w,
                                      double bias, double l2) {
  check_xy(x, y);
  std::vector<double> g(x.cols + 1, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double z = bias;
    for (std::size_t c = 0; c < x.cols; ++c) z += w[c] * x(r, c);
    const double e = sigmoid(z) - y[r];
    for (std::size_t c = 0; c < x.cols; ++c) g[c] += e * x(r, c);
    g[x.cols] += e;
  }
  for (std::size_t c = 0; c < x.cols; ++c) g[c] += l2 * w[c];
  return g;
}

LogisticModel logistic_fit(const Matrix& x, std::span<const int> y, const LogisticOptions& options) {
  check_xy(x, y);
  const bool has1 = std::find(y.begin(), y.end(), 1) != y.end();
  const bool has0 = std::find(y.begin(), y.end(), 0) != y.end();
  if (!has0 || !has1) throw InvalidArgument("logistic_fit needs both classes");
  const std::size_t p = x.cols;
  LogisticModel m;
  m.weights.assign(p, 0.0);
  double loss = logistic_loss(x, y, m.weights, m.bias, options.l2);
  m.loss_history.push_back(loss);
  for (int it = 0; it < options.max_iter; ++it) {
    const auto g = logistic_gradient(x, y, m.weights, m.bias, options.l2);
    double gnorm = 0.0;
    for (double v : g) gnorm += v * v;
    gnorm = std::sqrt(gnorm);
    if (gnorm <= options.tol) {
      m.converged = true;
      break;
    }
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p + 1), static_cast<Eigen::Index>(p + 1));
    for (std::size_t r = 0; r < x.rows; ++r) {
      const double s = sigmoid(m.logit(x.row(r)));
      const double wgt = s * (1.0 - s);
      for (std::size_t i = 0; i <= p; ++i) {
        const double xi = i < p ? x(r, i) : 1.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double xj = j < p ? x(r, j) : 1.0;
          h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += wgt * xi * xj;
        }
      }
    }
    for (std::size_t i = 0; i <= p; ++i) {
      for (std::size_t j = 0; j < i; ++j)
        h(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
            h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += (i < p ? options.l2 : 0.0) + 1e-10;
    }
    Eigen::VectorXd gv(static_cast<Eigen::Index>(p + 1));
    for (std::size_t i = 0; i <= p; ++i) gv(static_cast<Eigen::Index>(i)) = g[i];
    Eigen::VectorXd d = -h.ldlt().solve(gv);
    const double slope = gv.dot(d);
    if (!(slope < 0.0)) d = -gv;
    const double dir_slope = gv.dot(d);
    double t = 1.0;
    std::vector<double> w_new(p);
    double b_new = m.bias, loss_new = loss;
    bool accepted = false;
    while (t > 1e-12) {
      for (std::size_t i = 0; i < p; ++i) w_new[i] = m.weights[i] + t * d(static_cast<Eigen::Index>(i));
      b_new = m.bias + t * d(static_cast<Eigen::Index>(p));
      loss_new = logistic_loss(x, y, w_new, b_new, options.l2);
      if (loss_new <= loss + 1e-4 * t * dir_slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    m.iterations = it + 1;
    if (!accepted) {
      m.converged = gnorm <= std::max(options.tol, 1e-6 * (1.0 + std::abs(loss)));
      break;
    }
    m.weights = w_new;
    m.bias = b_new;
    loss = loss_new;
    m.loss_history.push_back(loss);
  }
  if (!m.converged) {
    const auto g = logistic_gradient(x, y, m.weights, m.bias, options.l2);
    double gnorm = 0.0;
    for (double v : g) gnorm += v * v;
    m.converged = std::sqrt(gnorm) <= options.tol;
  }
  return m;
}

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  std::size_t n_pos = 0, n_neg = 0;
  for (int l : labels) {
    if (l == 1) ++n_pos;
    else if (l == 0) ++n_neg;
    else throw InvalidArgument("auc labels must be 0 or 1");
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const auto ranks = stats::average_ranks(scores);
  double r_pos = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (labels[i] == 1) r_pos += ranks[i];
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (r_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<std::uint32_t> stratified_folds(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("stratified_folds needs k >= 2");
  std::vector<std::uint32_t> fold(labels.size(), 0);
  for (int cls : {1, 0}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(cls)));
    rng.shuffle(idx);
    for (std::size_t j = 0; j < idx.size(); ++j) fold[idx[j]] = static_cast<std::uint32_t>(j % k);
  }
  return fold;
}

namespace {

double lookup(const FeatureTable& t, std::uint32_t feature, std::uint32_t traj, AggregationKind kind) {
  const std::uint64_t masked = t.trajectories[traj].masked_tokens;
  if (feature >= t.features.size()) return aggregate(nullptr, masked, kind);
  const auto& col = t.features[feature];
  auto it = std::lower_bound(col.begin(), col.end(), traj,
                             [](const TrajectoryAggregate& a, std::uint32_t v) { return a.trajectory < v; });
  const TrajectoryAggregate* agg = (it != col.end() && it->trajectory == traj) ? &*it : nullptr;
  return aggregate(agg, masked, kind);
}

std::map<std::int64_t, std::vector<std::uint32_t>> rows_by_batch(const FeatureTable& t) {
  std::map<std::int64_t, std::vector<std::uint32_t>> out;
  for (std::uint32_t i = 0; i < t.trajectories.size(); ++i)
    if (t.trajectories[i].masked_tokens > 0) out[t.trajectories[i].key.batch].push_back(i);
  return out;
}

}  // namespace

std::vector<ProbeDataset> build_probe_datasets(const FeatureTable& good, const FeatureTable& bad,
                                               std::span<const std::uint32_t> features, AggregationKind kind) {
  const auto g = rows_by_batch(good);
  const auto b = rows_by_batch(bad);
  std::vector<ProbeDataset> out;
  for (const auto& [step, grows] : g) {
    auto it = b.find(step);
    if (it == b.end()) continue;
    ProbeDataset d;
    d.step = step;
    d.features.assign(features.begin(), features.end());
    d.x = Matrix(grows.size() + it->second.size(), features.size());
    std::size_t r = 0;
    auto add = [&](const FeatureTable& t, const std::vector<std::uint32_t>& rows, int label) {
      for (auto traj : rows) {
        d.trajectory_ids.push_back(t.trajectories[traj].key.to_string());
        d.labels.push_back(label);
        for (std::size_t c = 0; c < features.size(); ++c) d.x(r, c) = lookup(t, features[c], traj, kind);
        ++r;
      }
    };
    add(good, grows, 1);
    add(bad, it->second, 0);
    out.push_back(std::move(d));
  }
  return out;
}

std::optional<StepResult> evaluate_step(const ProbeDataset& data, const ProbeOptions& options, Warnings& warnings) {
  StepResult s;
  s.step = data.step;
  s.n_good = static_cast<std::size_t>(std::count(data.labels.begin(), data.labels.end(), 1));
  s.n_bad = data.labels.size() - s.n_good;
  if (s.n_good < options.folds || s.n_bad < options.folds) {
    warnings.add("step " + std::to_string(data.step) + " skipped: " + std::to_string(s.n_good) + " good and " +
                 std::to_string(s.n_bad) + " bad rows for " + std::to_string(options.folds) + " folds");
    return std::nullopt;
  }
  const auto folds = stratified_folds(data.labels, options.folds,
                                      derive_seed(options.seed, static_cast<std::uint64_t>(data.step)));
  for (std::size_t f = 0; f < options.folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == f ? test : train).push_back(i);
    std::vector<int> ytr, yte;
    for (auto i : train) ytr.push_back(data.labels[i]);
    for (auto i : test) yte.push_back(data.labels[i]);
    const auto st = standardize(data.x.select_rows(train));
    const auto model = logistic_fit(st.z, ytr, options.logistic);
    for (std::size_t i = 1; i < model.loss_history.size(); ++i)
      if (model.loss_history[i] > model.loss_history[i - 1])
        throw Error("logistic loss increased at step " + std::to_string(data.step));
    const auto scores = model.decision(apply_standardization(data.x.select_rows(test), st));
    s.fold_aucs.push_back(auc(scores, yte).value());
  }
  s.auc = stats::mean(s.fold_aucs);
  double v = 0.0;
  for (double a : s.fold_aucs) v += (a - s.auc) * (a - s.auc);
  s.auc_std = std::sqrt(v / static_cast<double>(s.fold_aucs.size()));
  s.auc_min = *std::min_element(s.fold_aucs.begin(), s.fold_aucs.end());
  s.auc_max = *std::max_element(s.fold_aucs.begin(), s.fold_aucs.end());
  for (std::size_t c = 0; c < data.x.cols; ++c) {
    std::vector<double> col(data.x.rows);
    for (std::size_t r = 0; r < data.x.rows; ++r) col[r] = data.x(r, c);
    s.feature_auc.push_back(auc(col, data.labels));
  }
  return s;
}

namespace {

ProbeReport run_probe(const FeatureTable& good, const FeatureTable& bad, const ProbeOptions& options, bool parallel) {
  if (options.features.empty()) throw InvalidArgument("probe needs at least one feature");
  if (options.folds < 2) throw InvalidArgument("probe needs at least two folds");
  ProbeReport rep;
  rep.features = options.features;
  rep.kind = options.kind;
  rep.threshold = options.threshold;
  {
    std::set<std::int64_t> gb, bb;
    for (const auto& t : good.trajectories) gb.insert(t.key.batch);
    for (const auto& t : bad.trajectories) bb.insert(t.key.batch);
    for (auto b : gb)
      if (!bb.count(b)) rep.warnings.add("step " + std::to_string(b) + " only present in the good run");
    for (auto b : bb)
      if (!gb.count(b)) rep.warnings.add("step " + std::to_string(b) + " only present in the bad run");
  }
  const auto datasets = build_probe_datasets(good, bad, options.features, options.kind);
  std::vector<std::optional<StepResult>> results(datasets.size());
  std::vector<Warnings> warns(datasets.size());
  std::vector<std::exception_ptr> errors(datasets.size());
  const auto n = static_cast<std::ptrdiff_t>(datasets.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      results[i] = evaluate_step(datasets[i], options, warns[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    rep.warnings.append(warns[i]);
    if (results[i]) rep.steps.push_back(std::move(*results[i]));
  }
  for (const auto& s : rep.steps)
    if (s.auc >= options.threshold) {
      rep.flagged_step = s.step;
      break;
    }
  for (auto f : options.features) {
    std::vector<SeriesPoint> series;
    for (const auto& d : datasets) {
      const std::size_t c = static_cast<std::size_t>(std::find(d.features.begin(), d.features.end(), f) - d.features.begin());
      double sg = 0.0, sb = 0.0;
      std::size_t ng = 0, nb = 0;
      for (std::size_t r = 0; r < d.x.rows; ++r) {
        if (d.labels[r]) {
          sg += d.x(r, c);
          ++ng;
        } else {
          sb += d.x(r, c);
          ++nb;
        }
      }
      series.push_back({d.step, sg / static_cast<double>(ng) - sb / static_cast<double>(nb)});
    }
    rep.divergence.push_back(std::move(series));
  }
  return rep;
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ProbeReport per_step_cv_auc(const FeatureTable& good, const FeatureTable& bad, const ProbeOptions& options) {
  return run_probe(good, bad, options, true);
}

ProbeReport per_step_cv_auc_serial(const FeatureTable& good, const FeatureTable& bad, const ProbeOptions& options) {
  return run_probe(good, bad, options, false);
}

ordered_json probe_report_to_json(const ProbeReport& r) {
  ordered_json j;
  j["features"] = r.features;
  j["kind"] = to_string(r.kind);
  j["threshold"] = r.threshold;
  j["flagged_step"] = r.flagged_step ? ordered_json(*r.flagged_step) : ordered_json(nullptr);
  ordered_json steps = ordered_json::array();
  for (const auto& s : r.steps) {
    ordered_json fa = ordered_json::array();
    for (const auto& a : s.feature_auc) fa.push_back(a ? ordered_json(*a) : ordered_json(nullptr));
    steps.push_back({{"step", s.step},
                     {"n_good", s.n_good},
                     {"n_bad", s.n_bad},
                     {"auc", s.auc},
                     {"auc_std", s.auc_std},
                     {"auc_min", s.auc_min},
                     {"auc_max", s.auc_max},
                     {"fold_aucs", s.fold_aucs},
                     {"feature_auc", fa}});
  }
  j["steps"] = steps;
  ordered_json div = ordered_json::array();
  for (std::size_t f = 0; f < r.divergence.size(); ++f) {
    ordered_json pts = ordered_json::array();
    for (const auto& p : r.divergence[f]) pts.push_back({{"batch", p.batch}, {"value", p.value}});
    div.push_back({{"feature", f < r.features.size() ? r.features[f] : 0u}, {"series", pts}});
  }
  j["divergence"] = div;
  j["warnings"] = r.warnings.items();
  return j;
}

ProbeReport probe_report_from_json(const json& j) {
  ProbeReport r;
  r.features = j.at("features").get<std::vector<std::uint32_t>>();
  r.kind = parse_aggregation(j.at("kind").get<std::string>());
  r.threshold = j.at("threshold").get<double>();
  if (!j.at("flagged_step").is_null()) r.flagged_step = j.at("flagged_step").get<std::int64_t>();
  for (const auto& s : j.at("steps")) {
    StepResult st;
    st.step = s.at("step").get<std::int64_t>();
    st.n_good = s.at("n_good").get<std::size_t>();
    st.n_bad = s.at("n_bad").get<std::size_t>();
    st.auc = s.at("auc").get<double>();
    st.auc_std = s.at("auc_std").get<double>();
    st.auc_min = s.at("auc_min").get<double>();
    st.auc_max = s.at("auc_max").get<double>();
    st.fold_aucs = s.at("fold_aucs").get<std::vector<double>>();
    for (const auto& a : s.at("feature_auc"))
      st.feature_auc.push_back(a.is_null() ? std::nullopt : std::optional<double>(a.get<double>()));
    r.steps.push_back(std::move(st));
  }
  for (const auto& d : j.at("divergence")) {
    std::vector<SeriesPoint> pts;
    for (const auto& p : d.at("series")) pts.push_back({p.at("batch").get<std::int64_t>(), p.at("value").get<double>()});
    r.divergence.push_back(std::move(pts));
  }
  for (const auto& w : j.value("warnings", std::vector<std::string>{})) r.warnings.add(w);
  return r;
}

std::string probe_auc_csv(const ProbeReport& r) {
  std::string out = "step,n_good,n_bad,auc,auc_std,auc_min,auc_max\n";
  for (const auto& s : r.steps)
    out += std::to_string(s.step) + "," + std::to_string(s.n_good) + "," + std::to_string(s.n_bad) + "," +
           g17(s.auc) + "," + g17(s.auc_std) + "," + g17(s.auc_min) + "," + g17(s.auc_max) + "\n";
  return out;
}

std::string probe_divergence_csv(const ProbeReport& r) {
  std::string out = "feature,batch,value\n";
  for (std::size_t f = 0; f < r.divergence.size(); ++f)
    for (const auto& p : r.divergence[f])
      out += std::to_string(r.features[f]) + "," + std::to_string(p.batch) + "," + g17(p.value) + "\n";
  return out;
}

}  // namespace trajlens
