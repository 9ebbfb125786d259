/*
 * neuroquant : amyloid status prediction from multi-contrast MRI
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef NEUROQUANT_CORE_REPORT_H
#define NEUROQUANT_CORE_REPORT_H

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nq {

// Score tables are the interchange format between training and evaluation:
// tab-separated with a header. The score column is "score" (or "score_a";
// a combined two-model table may carry "score_b" as well), plus exam_id,
// label, and optional subject_id / group columns.
struct ScoreRow {
  std::string exam_id;
  std::string subject_id;
  double score = 0;
  int label = 0;
  std::string group = "all";
};

// score_column empty: prefer "score", then "score_a".
std::vector<ScoreRow> read_scores(const std::string& path,
                                  const std::string& score_column = "");
bool score_file_has_column(const std::string& path, const std::string& column);
void write_scores(const std::vector<ScoreRow>& rows, const std::string& path,
                  const std::string& provenance_comment = "");

// One Table-2/3-style row: metrics for one model on one group.
struct MetricsRow {
  std::string model;
  std::string group = "all";
  std::size_t n = 0;
  double prevalence = 0;
  bool auc_defined = false;
  double auc = 0, auc_lo = 0, auc_hi = 0;
  bool auc_var_degenerate = false;
  double accuracy = 0, accuracy_lo = 0, accuracy_hi = 0;
  bool sens_defined = false;
  double sensitivity = 0, sensitivity_lo = 0, sensitivity_hi = 0;
  bool spec_defined = false;
  double specificity = 0, specificity_lo = 0, specificity_hi = 0;
  double threshold = 0;
  std::string threshold_source = "youden_on_input";  // or "config", "training"
};

struct ComparisonRow {
  std::string group = "all";
  std::string model_a, model_b;
  double auc_a = 0, auc_b = 0;
  double z = 0;
  double p_delong = 1;
  bool delong_degenerate = false;
  double accuracy_a = 0, accuracy_b = 0;
  long long discordant_b = 0, discordant_c = 0;
  double p_mcnemar = 1;
};

struct ReportMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string version;
};

struct MetricsReport {
  int schema_version = 1;
  ReportMeta meta;
  std::vector<MetricsRow> rows;
  std::vector<ComparisonRow> comparisons;
};

// Machine form: deterministic JSON (full precision).
std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);

// Human form: aligned text tables, metrics at 2 decimals, p-values at 3
// ("<0.001" below that), undefined entries as "--".
std::string report_to_text(const MetricsReport& report);

// Cross-parse check: every number printed in the text table must equal the
// JSON value rounded to the printed precision. Returns an empty string when
// consistent, else a description of the first mismatch.
std::string report_cross_check(const MetricsReport& report);

}  // namespace nq

#endif
