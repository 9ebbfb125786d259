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

#ifndef NEUROQUANT_CORE_METRICS_H
#define NEUROQUANT_CORE_METRICS_H

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nq {

// ROC / AUC machinery with DeLong variance, paired DeLong and McNemar
// tests, Youden's J operating point, and bootstrap confidence intervals.
// Labels are 0/1; a positive prediction means score >= threshold.

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
};

// Midrank (Mann-Whitney) AUC; ties count 1/2. Throws SingleClass.
double auc_mann_whitney(const std::vector<double>& scores,
                        const std::vector<int>& labels);

// DeLong structural components: V10 per positive, V01 per negative.
struct DelongComponents {
  double auc = 0;
  std::vector<double> v10;
  std::vector<double> v01;
};
DelongComponents delong_components(const std::vector<double>& scores,
                                   const std::vector<int>& labels);

// var(AUC) = S10/m + S01/n. Values below 1e-15 count as degenerate.
double delong_variance(const std::vector<double>& scores,
                       const std::vector<int>& labels);
inline bool delong_variance_degenerate(double var) { return var < 1e-15; }

// Wald interval on the AUC, clamped to [0,1].
std::pair<double, double> delong_ci(double auc, double var, double level = 0.95);

struct DelongPaired {
  double auc_a = 0;
  double auc_b = 0;
  double z = 0;
  double p = 1;
  bool degenerate = false;  // variance of the difference below 1e-15
};
// Two correlated AUCs on the same exams/labels.
DelongPaired delong_paired_test(const std::vector<double>& scores_a,
                                const std::vector<double>& scores_b,
                                const std::vector<int>& labels);

// Exact two-sided binomial test for b+c < 25, else the continuity-corrected
// chi-squared form (|b-c|-1)^2/(b+c). No discordant pairs -> p = 1.
double mcnemar_test(std::int64_t b, std::int64_t c);

struct YoudenResult {
  double threshold = 0;
  double j = 0;
};
// Maximizes J = sensitivity + specificity - 1 over all cut points
// (midpoints of adjacent distinct scores plus the two infinities);
// ties resolve to the lowest threshold.
YoudenResult youden_threshold(const std::vector<double>& scores,
                              const std::vector<int>& labels);

struct ThresholdMetrics {
  double accuracy = 0;
  double sensitivity = 0;
  double specificity = 0;
  bool sensitivity_defined = false;
  bool specificity_defined = false;
};
ThresholdMetrics threshold_metrics(const std::vector<double>& scores,
                                   const std::vector<int>& labels,
                                   double threshold);

// Empirical ROC polyline from (0,0) to (1,1), one vertex per distinct score.
std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                const std::vector<int>& labels);
double trapezoid_auc(const std::vector<RocPoint>& points);

using MetricFn = std::function<double(const std::vector<double>&,
                                      const std::vector<int>&)>;

struct BootstrapResult {
  double lo = 0;
  double hi = 0;
  int skipped = 0;  // single-class resamples that exhausted their retries
};
// Percentile bootstrap. Resampling is at the unit level: `units` groups
// indices that must be drawn together (e.g. one subject's exams); empty
// means one unit per observation. Deterministic: iteration i draws from a
// seed derived from (seed, i), so the result is independent of evaluation
// order.
BootstrapResult bootstrap_ci(const std::vector<double>& scores,
                             const std::vector<int>& labels,
                             const MetricFn& metric, int n_boot = 2000,
                             std::uint64_t seed = 0, double level = 0.95,
                             const std::vector<std::string>& units = {});

// The full per-cohort analysis used in reports.
struct RocAnalysis {
  std::size_t n = 0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  double prevalence = 0;
  bool auc_defined = false;  // false in single-class groups
  double auc = 0;
  double delong_variance = 0;
  bool delong_degenerate = false;
  std::pair<double, double> auc_ci{0, 0};
  std::optional<double> threshold;
  ThresholdMetrics at_threshold;
  std::vector<RocPoint> roc_points;
};

RocAnalysis analyze_roc(const std::vector<double>& scores,
                        const std::vector<int>& labels,
                        std::optional<double> threshold = std::nullopt);

// Per-group analyses (e.g. by cognitive status). Single-class groups come
// back with auc_defined=false rather than an error.
std::map<std::string, RocAnalysis> evaluate_subgroups(
    const std::vector<double>& scores, const std::vector<int>& labels,
    const std::vector<std::string>& groups,
    std::optional<double> threshold = std::nullopt);

// Welch's unequal-variance t-test from summary statistics.
double welch_t_test_p(double mean1, double sd1, std::size_t n1, double mean2,
                      double sd2, std::size_t n2);

// Pearson chi-squared test (no continuity correction) on an R x C count
// table; rows index groups, columns index categories.
double chi_square_p(const std::vector<std::vector<double>>& table);

}  // namespace nq

#endif
