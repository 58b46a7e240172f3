#include "trajlens/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include <json.hpp>

#include "trajlens/hypothesis.hpp"
#include "trajlens/interp.hpp"
#include "trajlens/plot.hpp"
#include "trajlens/probe.hpp"
#include "trajlens/scoring.hpp"
#include "trajlens/validation.hpp"

namespace trajlens {

using nlohmann::json;

namespace {

std::optional<json> load_json(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  return json::parse(read_file(p));
}

std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string cell(std::string s) {
  for (auto& c : s)
    if (c == '|' || c == '\n') c = ' ';
  return s;
}

// Splits one CSV line, honoring double quotes.
std::vector<std::string> csv_fields(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  for (auto& f : out) f = std::string(trim(f));
  return out;
}

std::vector<std::vector<std::string>> csv_rows(std::string_view csv, const std::vector<std::string>& header) {
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  bool first = true;
  std::size_t line_no = 0;
  while (pos < csv.size()) {
    auto nl = csv.find('\n', pos);
    if (nl == std::string_view::npos) nl = csv.size();
    std::string_view line = csv.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    auto f = csv_fields(line);
    if (first) {
      first = false;
      if (f != header) throw ParseError("expected CSV header with columns of " + std::to_string(header.size()) + " names");
      continue;
    }
    if (f.size() != header.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) + " fields");
    rows.push_back(std::move(f));
  }
  return rows;
}

}  // namespace

int parse_hundredths(std::string_view s) {
  s = trim(s);
  if (s.empty()) throw ParseError("empty decimal");
  int sign = 1;
  if (s.front() == '+' || s.front() == '-') {
    sign = s.front() == '-' ? -1 : 1;
    s.remove_prefix(1);
  }
  const auto dot = s.find('.');
  std::string_view ip = s.substr(0, dot), fp = dot == std::string_view::npos ? std::string_view() : s.substr(dot + 1);
  if (ip.empty() && fp.empty()) throw ParseError("malformed decimal");
  auto digits = [](std::string_view d) {
    return std::all_of(d.begin(), d.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if (!digits(ip) || !digits(fp)) throw ParseError("malformed decimal '" + std::string(s) + "'");
  while (fp.size() > 2 && fp.back() == '0') fp.remove_suffix(1);
  if (fp.size() > 2) throw ParseError("decimal '" + std::string(s) + "' has more than two places");
  int v = 0;
  for (char c : ip) v = v * 10 + (c - '0');
  v *= 100;
  if (!fp.empty()) v += (fp[0] - '0') * 10;
  if (fp.size() > 1) v += fp[1] - '0';
  return sign * v;
}

std::string format_hundredths(int v, bool sign) {
  const int a = std::abs(v);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%d.%02d", v < 0 ? "-" : (sign ? "+" : ""), a / 100, a % 100);
  return buf;
}

std::vector<StudyRow> parse_study_rows(std::string_view csv) {
  std::vector<StudyRow> out;
  for (auto& f : csv_rows(csv, {"hypothesis", "accuracy", "uplift", "source"}))
    out.push_back({f[0], parse_hundredths(f[1]), parse_hundredths(f[2]), f[3]});
  return out;
}

StudyCheck check_study_rows(std::span<const StudyRow> rows) {
  StudyCheck c;
  std::map<int, std::size_t> votes;
  for (const auto& r : rows) {
    const int b = r.implied_baseline();
    if (r.accuracy < 0 || r.accuracy > 100) {
      c.consistent = false;
      c.problems.push_back(r.hypothesis + ": accuracy " + format_hundredths(r.accuracy, false) + " outside [0, 1]");
    }
    if (b < 0 || b > 100) {
      c.consistent = false;
      c.problems.push_back(r.hypothesis + ": implied baseline " + format_hundredths(b, false) + " outside [0, 1]");
    }
    ++votes[b];
  }
  if (votes.empty()) return c;
  auto best = votes.begin();
  for (auto it = votes.begin(); it != votes.end(); ++it)
    if (it->second > best->second) best = it;
  c.modal_baseline = best->first;
  if (votes.size() == 1) c.shared_baseline = best->first;
  c.rounding_consistent = true;
  for (const auto& r : rows) {
    const int b = r.implied_baseline();
    if (b == best->first) continue;
    c.inexact.push_back(r.hypothesis + " implies " + format_hundredths(b, false));
    if (std::abs(b - best->first) > 1) c.rounding_consistent = false;
  }
  return c;
}

std::string study_table_markdown(std::span<const StudyRow> rows) {
  std::string out = "| Hypothesis | Accuracy | Uplift | Baseline | Source |\n|---|---:|---:|---:|---|\n";
  for (const auto& r : rows)
    out += "| " + cell(r.hypothesis) + " | " + format_hundredths(r.accuracy, false) + " | " +
           format_hundredths(r.uplift, true) + " | " + format_hundredths(r.implied_baseline(), false) + " | " +
           cell(r.source) + " |\n";
  return out;
}

double p_upper_bound(std::string_view p) {
  p = trim(p);
  if (!p.empty() && (p.front() == '<' || p.front() == '=')) p.remove_prefix(1);
  if (!p.empty() && p.front() == '=') p.remove_prefix(1);
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(p), &used);
    if (used != p.size()) throw ParseError("");
    return v;
  } catch (const std::exception&) {
    throw ParseError("unreadable p-value '" + std::string(p) + "'");
  }
}

std::vector<PublishedResult> parse_published_results(std::string_view csv) {
  std::vector<PublishedResult> out;
  for (auto& f : csv_rows(csv, {"source", "hypothesis", "uplift_percent", "p", "asterisk"})) {
    PublishedResult r;
    r.source = f[0];
    r.hypothesis = f[1];
    // Uplift percent with one decimal, parsed exactly in tenths.
    std::string_view u = f[2];
    int sign = 1;
    if (!u.empty() && (u.front() == '+' || u.front() == '-')) {
      sign = u.front() == '-' ? -1 : 1;
      u.remove_prefix(1);
    }
    const double tenths = std::round(std::stod(std::string(u)) * 10.0);
    r.uplift = sign * tenths / 1000.0;
    r.p_text = f[3];
    r.asterisk = f[4] == "*" || f[4] == "true" || f[4] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

ReportOutcome emit_report(const fs::path& dir, std::size_t top_n) {
  ReportOutcome out;
  out.markdown = dir / artifacts::kReportMd;
  const fs::path plots = dir / "plots";
  std::string md = "# Trajectory analysis report\n\n";
  auto skip = [&](const std::string& title, const char* artifact) {
    md += "## " + title + "\n\n_" + std::string(artifact) + " not found; section skipped._\n\n";
    out.skipped.push_back(title + ": " + artifact + " missing");
  };
  auto plot_file = [&](const std::string& name, const std::string& svg) {
    write_file(plots / name, svg);
    out.plots.push_back(plots / name);
    return "plots/" + name;
  };

  std::map<std::uint32_t, FeatureExplanation> expl;
  if (auto j = load_json(dir / artifacts::kExplanationsJson)) {
    const json& arr = j->is_object() && j->contains("explanations") ? j->at("explanations") : *j;
    for (const auto& e : arr) {
      auto fe = explanation_from_json(e);
      expl[fe.feature_id] = fe;
    }
  }

  if (auto j = load_json(dir / artifacts::kRankingJson)) {
    auto ranking = ranking_from_json(j->is_object() && j->contains("ranking") ? j->at("ranking") : *j);
    if (ranking.size() > top_n) ranking.resize(top_n);
    md += "## Top features\n\n| Rank | Feature | Score | Aggregation | Method | Target | Interestingness | Token pattern |\n"
          "|---:|---:|---:|---|---|---|---:|---|\n";
    for (std::size_t i = 0; i < ranking.size(); ++i) {
      const auto& r = ranking[i];
      auto it = expl.find(r.feature_id);
      md += "| " + std::to_string(i + 1) + " | " + std::to_string(r.feature_id) + " | " +
            (r.best.score ? fixed(*r.best.score, 4) : std::string("NA")) + " | " +
            std::string(to_string(r.best.aggregation)) + " | " + std::string(to_string(r.best.method)) + " | " +
            std::string(to_string(r.best.target)) + " | " +
            (it == expl.end() ? std::string("-") : std::to_string(it->second.interestingness)) + " | " +
            (it == expl.end() ? std::string("-") : cell(it->second.token_pattern)) + " |\n";
    }
    md += "\n";
    out.sections.push_back("Top features");
  } else {
    skip("Top features", artifacts::kRankingJson);
  }

  if (auto j = load_json(dir / artifacts::kHistogramJson)) {
    plot::BarChart bc;
    bc.title = "Score distribution";
    bc.x_label = "score";
    bc.y_label = "features";
    bc.lo = j->at("lo").get<double>();
    bc.hi = j->at("hi").get<double>();
    for (const auto& c : j->at("counts")) bc.counts.push_back(c.get<double>());
    const std::string rel = plot_file("score_histogram.svg", plot::render_svg(bc));
    md += "## Score distribution\n\n" + std::to_string(j->at("n").get<std::size_t>()) + " defined scores, mean " +
          fixed(j->at("mean").get<double>(), 4) + ", positive share " +
          fixed(j->at("positive_share").get<double>(), 4) + ".\n\n![score histogram](" + rel + ")\n\n";
    out.sections.push_back("Score distribution");
  } else {
    skip("Score distribution", artifacts::kHistogramJson);
  }

  if (auto j = load_json(dir / artifacts::kMetaFeaturesJson)) {
    const json& arr = j->is_object() && j->contains("meta_features") ? j->at("meta_features") : *j;
    md += "## Meta-features\n\n| Name | Direction | Features | Hypothesis |\n|---|---|---|---|\n";
    for (const auto& e : arr) {
      const auto m = meta_feature_from_json(e);
      std::string ids;
      for (auto id : m.member_feature_ids) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
      md += "| " + cell(m.name) + " | " + std::string(to_string(m.direction)) + " | " + ids + " | " +
            cell(m.hypothesis) + " |\n";
    }
    md += "\n";
    out.sections.push_back("Meta-features");
  } else {
    skip("Meta-features", artifacts::kMetaFeaturesJson);
  }

  if (fs::exists(dir / artifacts::kHypothesesJson) || fs::exists(dir / artifacts::kLlmHypothesesJson)) {
    std::vector<Hypothesis> hs;
    for (const char* name : {artifacts::kHypothesesJson, artifacts::kLlmHypothesesJson}) {
      if (!fs::exists(dir / name)) continue;
      auto part = hypotheses_from_json_text(read_file(dir / name));
      hs.insert(hs.end(), part.begin(), part.end());
    }
    md += "## Hypotheses\n\n| Id | Name | Direction | Source | Statement |\n|---|---|---|---|---|\n";
    for (const auto& h : hs)
      md += "| " + h.id + " | " + cell(h.name) + " | " + std::string(to_string(h.direction)) + " | " +
            (h.source ? std::string(to_string(*h.source)) : std::string("-")) + " | " + cell(h.statement) + " |\n";
    md += "\n";
    out.sections.push_back("Hypotheses");
  } else {
    skip("Hypotheses", artifacts::kHypothesesJson);
  }

  if (auto j = load_json(dir / artifacts::kValidationJson)) {
    std::vector<ValidationResult> results;
    for (const auto& r : j->at("results")) results.push_back(validation_result_from_json(r));
    md += "## Validation\n\n" + uplift_report_markdown(results);
    md += "| Hypothesis | a | b | c | d | Acc. baseline | Acc. hypothesis | kappa baseline | kappa hypothesis |\n"
          "|---|---:|---:|---:|---:|---:|---:|---:|---:|\n";
    for (const auto& r : results)
      md += "| " + r.hypothesis_id + " | " + std::to_string(r.a) + " | " + std::to_string(r.b) + " | " +
            std::to_string(r.c) + " | " + std::to_string(r.d) + " | " + fixed(r.accuracy_baseline, 3) + " | " +
            fixed(r.accuracy_hypothesis, 3) + " | " + (r.kappa_baseline ? fixed(*r.kappa_baseline, 3) : "NA") +
            " | " + (r.kappa_hypothesis ? fixed(*r.kappa_hypothesis, 3) : "NA") + " |\n";
    md += "\n";
    out.sections.push_back("Validation");
  } else {
    skip("Validation", artifacts::kValidationJson);
  }

  if (auto j = load_json(dir / artifacts::kProbeJson)) {
    const auto rep = probe_report_from_json(*j);
    plot::LineChart auc_chart;
    auc_chart.title = "Probe AUC by step";
    auc_chart.x_label = "step";
    auc_chart.y_label = "cross-validated AUC";
    auc_chart.y_min = 0.0;
    auc_chart.y_max = 1.0;
    auc_chart.hlines = {rep.threshold, 0.5};
    plot::Series s{"AUC", {}, {}, ""};
    for (const auto& st : rep.steps) {
      s.x.push_back(static_cast<double>(st.step));
      s.y.push_back(st.auc);
    }
    auc_chart.series.push_back(std::move(s));
    const std::string rel_auc = plot_file("probe_auc.svg", plot::render_svg(auc_chart));
    plot::LineChart div;
    div.title = "Feature divergence (good - bad)";
    div.x_label = "step";
    div.y_label = "mean difference";
    div.hlines = {0.0};
    for (std::size_t f = 0; f < rep.divergence.size(); ++f) {
      plot::Series ds{"F" + std::to_string(rep.features[f]), {}, {}, ""};
      for (const auto& p : rep.divergence[f]) {
        ds.x.push_back(static_cast<double>(p.batch));
        ds.y.push_back(p.value);
      }
      div.series.push_back(std::move(ds));
    }
    const std::string rel_div = plot_file("probe_divergence.svg", plot::render_svg(div));
    md += "## Probe\n\nFlagged step: " +
          (rep.flagged_step ? std::to_string(*rep.flagged_step) : std::string("none")) + " (threshold " +
          fixed(rep.threshold, 2) + ").\n\n| Step | Good | Bad | AUC | Std | Min | Max |\n|---:|---:|---:|---:|---:|---:|---:|\n";
    for (const auto& st : rep.steps)
      md += "| " + std::to_string(st.step) + " | " + std::to_string(st.n_good) + " | " + std::to_string(st.n_bad) +
            " | " + fixed(st.auc, 3) + " | " + fixed(st.auc_std, 3) + " | " + fixed(st.auc_min, 3) + " | " +
            fixed(st.auc_max, 3) + " |\n";
    md += "\n![probe AUC](" + rel_auc + ")\n\n![divergence](" + rel_div + ")\n\n";
    out.sections.push_back("Probe");
  } else {
    skip("Probe", artifacts::kProbeJson);
  }

  write_file(out.markdown, md);
  return out;
}

}  // namespace trajlens
