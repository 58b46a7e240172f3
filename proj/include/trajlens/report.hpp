#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajlens/common.hpp"

namespace trajlens {

/// Artifact names shared by the CLI subcommands and the report.
namespace artifacts {
inline constexpr const char* kScoresCsv = "scores.csv";
inline constexpr const char* kRankingJson = "ranking.json";
inline constexpr const char* kHistogramJson = "histogram.json";
inline constexpr const char* kExplanationsJson = "explanations.json";
inline constexpr const char* kMetaFeaturesJson = "meta_features.json";
inline constexpr const char* kHypothesesJson = "hypotheses.json";
inline constexpr const char* kLlmHypothesesJson = "llm_hypotheses.json";
inline constexpr const char* kValidationJson = "validation.json";
inline constexpr const char* kProbeJson = "probe.json";
inline constexpr const char* kReportMd = "report.md";
}  // namespace artifacts

struct ReportOutcome {
  fs::path markdown;
  std::vector<fs::path> plots;
  std::vector<std::string> sections;  // titles of sections written
  std::vector<std::string> skipped;   // notices for missing artifacts
};

/// Reads whatever artifacts exist under `dir` and writes report.md plus SVG
/// plots under dir/plots. Sections whose inputs are missing are replaced by a
/// notice. Reruns over the same inputs are byte-identical.
ReportOutcome emit_report(const fs::path& dir, std::size_t top_n = 20);

/// One row of a human-study result table: accuracy with the hypothesis and
/// its uplift over the shared no-hypothesis condition, in hundredths.
struct StudyRow {
  std::string hypothesis;
  int accuracy = 0;  // hundredths
  int uplift = 0;    // hundredths, signed
  std::string source;

  int implied_baseline() const noexcept { return accuracy - uplift; }
};

/// CSV with header `hypothesis,accuracy,uplift,source`; decimals such as
/// 1.00 and +0.52 are parsed exactly into hundredths.
std::vector<StudyRow> parse_study_rows(std::string_view csv);
int parse_hundredths(std::string_view s);
std::string format_hundredths(int v, bool sign);

/// Accuracy and uplift are each rounded to hundredths, so a row's implied
/// baseline can sit one hundredth away from the true shared baseline.
struct StudyCheck {
  bool consistent = true;              // every implied baseline in [0, 100]
  std::optional<int> shared_baseline;  // set when all rows imply the same baseline exactly
  std::optional<int> modal_baseline;   // most common implied baseline (lowest on ties)
  bool rounding_consistent = false;    // every row within one hundredth of the modal baseline
  std::vector<std::string> inexact;    // rows whose implied baseline differs from the modal one
  std::vector<std::string> problems;
};
StudyCheck check_study_rows(std::span<const StudyRow> rows);
std::string study_table_markdown(std::span<const StudyRow> rows);

/// One published row of a significance table: the p-value text may be a
/// bound such as "<1e-4".
struct PublishedResult {
  std::string source;
  std::string hypothesis;
  double uplift = 0.0;  // fraction
  std::string p_text;
  bool asterisk = false;
};
std::vector<PublishedResult> parse_published_results(std::string_view csv);
/// Upper bound for the p-value text ("<1e-4" -> 1e-4, "0.071" -> 0.071).
double p_upper_bound(std::string_view p_text);

}  // namespace trajlens
