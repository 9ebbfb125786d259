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

#include "core/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "core/error.h"
#include "core/mathutil.h"
#include "core/rng.h"

namespace nq {

namespace {

// 1-based midranks (ties get the average of the ranks they span)
std::vector<double> midranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

void split_classes(const std::vector<double>& scores,
                   const std::vector<int>& labels, std::vector<double>& pos,
                   std::vector<double>& neg) {
  if (scores.size() != labels.size())
    throw Error(ErrorCode::ShapeMismatch, "scores/labels length mismatch");
  pos.clear();
  neg.clear();
  for (std::size_t i = 0; i < scores.size(); ++i)
    (labels[i] ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty())
    throw Error(ErrorCode::SingleClass, "both classes required");
}

double sample_cov(const std::vector<double>& a, double mean_a,
                  const std::vector<double>& b, double mean_b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += (a[i] - mean_a) * (b[i] - mean_b);
  return s / (static_cast<double>(a.size()) - 1.0);
}

}  // namespace

DelongComponents delong_components(const std::vector<double>& scores,
                                   const std::vector<int>& labels) {
  std::vector<double> pos, neg;
  split_classes(scores, labels, pos, neg);
  const std::size_t m = pos.size(), n = neg.size();

  std::vector<double> combined = pos;
  combined.insert(combined.end(), neg.begin(), neg.end());
  const auto rz = midranks(combined);
  const auto rx = midranks(pos);
  const auto ry = midranks(neg);

  DelongComponents out;
  out.v10.resize(m);
  out.v01.resize(n);
  double sum_rank_pos = 0;
  for (std::size_t i = 0; i < m; ++i) {
    out.v10[i] = (rz[i] - rx[i]) / static_cast<double>(n);
    sum_rank_pos += rz[i];
  }
  for (std::size_t j = 0; j < n; ++j)
    out.v01[j] = 1.0 - (rz[m + j] - ry[j]) / static_cast<double>(m);
  out.auc = (sum_rank_pos - static_cast<double>(m) * (m + 1) / 2.0) /
            (static_cast<double>(m) * static_cast<double>(n));
  return out;
}

double auc_mann_whitney(const std::vector<double>& scores,
                        const std::vector<int>& labels) {
  return delong_components(scores, labels).auc;
}

double delong_variance(const std::vector<double>& scores,
                       const std::vector<int>& labels) {
  const auto c = delong_components(scores, labels);
  const std::size_t m = c.v10.size(), n = c.v01.size();
  if (m < 2 || n < 2)
    throw Error(ErrorCode::TooSmall, "DeLong variance needs >=2 per class");
  const double s10 = sample_cov(c.v10, c.auc, c.v10, c.auc);
  const double s01 = sample_cov(c.v01, c.auc, c.v01, c.auc);
  return s10 / static_cast<double>(m) + s01 / static_cast<double>(n);
}

std::pair<double, double> delong_ci(double auc, double var, double level) {
  const double z = normal_quantile(0.5 + level / 2.0);
  const double half = z * std::sqrt(std::max(var, 0.0));
  return {std::clamp(auc - half, 0.0, 1.0), std::clamp(auc + half, 0.0, 1.0)};
}

DelongPaired delong_paired_test(const std::vector<double>& scores_a,
                                const std::vector<double>& scores_b,
                                const std::vector<int>& labels) {
  if (scores_a.size() != scores_b.size() || scores_a.size() != labels.size())
    throw Error(ErrorCode::ShapeMismatch, "paired test requires equal lengths");
  const auto ca = delong_components(scores_a, labels);
  const auto cb = delong_components(scores_b, labels);
  const std::size_t m = ca.v10.size(), n = ca.v01.size();
  if (m < 2 || n < 2)
    throw Error(ErrorCode::TooSmall, "paired DeLong needs >=2 per class");

  const double var_a = sample_cov(ca.v10, ca.auc, ca.v10, ca.auc) / m +
                       sample_cov(ca.v01, ca.auc, ca.v01, ca.auc) / n;
  const double var_b = sample_cov(cb.v10, cb.auc, cb.v10, cb.auc) / m +
                       sample_cov(cb.v01, cb.auc, cb.v01, cb.auc) / n;
  const double cov = sample_cov(ca.v10, ca.auc, cb.v10, cb.auc) / m +
                     sample_cov(ca.v01, ca.auc, cb.v01, cb.auc) / n;

  DelongPaired out;
  out.auc_a = ca.auc;
  out.auc_b = cb.auc;
  const double var_diff = var_a + var_b - 2.0 * cov;
  if (var_diff < 1e-15) {
    out.degenerate = true;
    out.z = 0;
    out.p = 1.0;
    return out;
  }
  out.z = (ca.auc - cb.auc) / std::sqrt(var_diff);
  out.p = 2.0 * normal_sf(std::abs(out.z));
  if (out.p > 1.0) out.p = 1.0;
  return out;
}

double mcnemar_test(std::int64_t b, std::int64_t c) {
  if (b < 0 || c < 0)
    throw Error(ErrorCode::ConfigError, "discordant counts must be >= 0");
  const std::int64_t total = b + c;
  if (total == 0) return 1.0;  // no discordant pairs
  if (total < 25) {
    // exact two-sided binomial: 2 * P(X <= min(b,c)) with X ~ Bin(b+c, 1/2)
    const std::int64_t k = std::min(b, c);
    double p = 0.0;
    for (std::int64_t i = 0; i <= k; ++i)
      p += std::exp(log_choose(static_cast<int>(total), static_cast<int>(i)) -
                    static_cast<double>(total) * std::log(2.0));
    return std::min(1.0, 2.0 * p);
  }
  const double diff = std::abs(static_cast<double>(b) - static_cast<double>(c));
  const double corrected = std::max(diff - 1.0, 0.0);
  const double stat = corrected * corrected / static_cast<double>(total);
  return chi2_sf(stat, 1.0);
}

YoudenResult youden_threshold(const std::vector<double>& scores,
                              const std::vector<int>& labels) {
  std::vector<double> pos, neg;
  split_classes(scores, labels, pos, neg);

  std::vector<double> distinct = scores;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<double> candidates;
  candidates.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i)
    candidates.push_back((distinct[i] + distinct[i + 1]) / 2.0);
  candidates.push_back(std::numeric_limits<double>::infinity());

  YoudenResult best;
  best.threshold = candidates.front();
  best.j = -2.0;
  for (const double t : candidates) {
    std::size_t tp = 0, tn = 0;
    for (const double s : pos) tp += (s >= t);
    for (const double s : neg) tn += (s < t);
    const double j = static_cast<double>(tp) / pos.size() +
                     static_cast<double>(tn) / neg.size() - 1.0;
    if (j > best.j + 1e-12) {  // strict improvement; ties keep the lowest
      best.j = j;
      best.threshold = t;
    }
  }
  return best;
}

ThresholdMetrics threshold_metrics(const std::vector<double>& scores,
                                   const std::vector<int>& labels,
                                   double threshold) {
  if (scores.size() != labels.size() || scores.empty())
    throw Error(ErrorCode::ShapeMismatch, "scores/labels length mismatch");
  std::size_t tp = 0, tn = 0, np = 0, nn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i]) {
      ++np;
      tp += pred;
    } else {
      ++nn;
      tn += !pred;
    }
  }
  ThresholdMetrics out;
  out.accuracy = static_cast<double>(tp + tn) / scores.size();
  out.sensitivity_defined = np > 0;
  out.specificity_defined = nn > 0;
  out.sensitivity = np ? static_cast<double>(tp) / np : 0.0;
  out.specificity = nn ? static_cast<double>(tn) / nn : 0.0;
  return out;
}

std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  std::vector<double> pos, neg;
  split_classes(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::vector<RocPoint> pts;
  pts.push_back({0, 0});
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]]) ++tp; else ++fp;
      ++i;
    }
    pts.push_back({static_cast<double>(fp) / neg.size(),
                   static_cast<double>(tp) / pos.size()});
  }
  return pts;
}

double trapezoid_auc(const std::vector<RocPoint>& points) {
  double area = 0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += (points[i].fpr - points[i - 1].fpr) *
            (points[i].tpr + points[i - 1].tpr) / 2.0;
  return area;
}

BootstrapResult bootstrap_ci(const std::vector<double>& scores,
                             const std::vector<int>& labels,
                             const MetricFn& metric, int n_boot,
                             std::uint64_t seed, double level,
                             const std::vector<std::string>& units) {
  if (scores.size() != labels.size())
    throw Error(ErrorCode::ShapeMismatch, "scores/labels length mismatch");
  if (scores.size() < 10)
    throw Error(ErrorCode::TooSmall, "bootstrap needs n >= 10");

  // group observation indices by resampling unit
  std::vector<std::vector<std::size_t>> groups;
  if (units.empty()) {
    groups.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) groups[i] = {i};
  } else {
    if (units.size() != scores.size())
      throw Error(ErrorCode::ShapeMismatch, "units length mismatch");
    std::map<std::string, std::vector<std::size_t>> by_unit;
    for (std::size_t i = 0; i < units.size(); ++i) by_unit[units[i]].push_back(i);
    for (auto& [_, idx] : by_unit) groups.push_back(std::move(idx));
  }

  BootstrapResult out;
  std::vector<double> values;
  values.reserve(n_boot);
  std::vector<double> s;
  std::vector<int> l;
  for (int it = 0; it < n_boot; ++it) {
    auto rng = make_rng(seed, "bootstrap/" + std::to_string(it));
    std::uniform_int_distribution<std::size_t> pick(0, groups.size() - 1);
    bool ok = false;
    for (int retry = 0; retry < 10 && !ok; ++retry) {
      s.clear();
      l.clear();
      for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::size_t idx : groups[pick(rng)]) {
          s.push_back(scores[idx]);
          l.push_back(labels[idx]);
        }
      }
      const bool has_pos = std::find(l.begin(), l.end(), 1) != l.end();
      const bool has_neg = std::find(l.begin(), l.end(), 0) != l.end();
      ok = has_pos && has_neg;
    }
    if (!ok) {
      ++out.skipped;
      continue;
    }
    values.push_back(metric(s, l));
  }
  if (values.empty())
    throw Error(ErrorCode::TooSmall, "all bootstrap resamples were degenerate");
  std::sort(values.begin(), values.end());
  const double alpha = (1.0 - level) / 2.0;
  out.lo = percentile_sorted(values, 100.0 * alpha);
  out.hi = percentile_sorted(values, 100.0 * (1.0 - alpha));
  return out;
}

RocAnalysis analyze_roc(const std::vector<double>& scores,
                        const std::vector<int>& labels,
                        std::optional<double> threshold) {
  RocAnalysis out;
  out.n = scores.size();
  for (int l : labels) l ? ++out.n_pos : ++out.n_neg;
  out.prevalence = out.n ? static_cast<double>(out.n_pos) / out.n : 0.0;
  if (out.n_pos > 0 && out.n_neg > 0) {
    out.auc_defined = true;
    const auto c = delong_components(scores, labels);
    out.auc = c.auc;
    if (out.n_pos >= 2 && out.n_neg >= 2) {
      out.delong_variance = delong_variance(scores, labels);
      out.delong_degenerate = delong_variance_degenerate(out.delong_variance);
      out.auc_ci = delong_ci(out.auc, out.delong_variance);
    } else {
      out.delong_degenerate = true;
      out.auc_ci = {out.auc, out.auc};
    }
    out.roc_points = roc_curve(scores, labels);
  }
  if (threshold.has_value() && out.n > 0) {
    out.threshold = threshold;
    out.at_threshold = threshold_metrics(scores, labels, *threshold);
  }
  return out;
}

std::map<std::string, RocAnalysis> evaluate_subgroups(
    const std::vector<double>& scores, const std::vector<int>& labels,
    const std::vector<std::string>& groups, std::optional<double> threshold) {
  if (groups.size() != scores.size())
    throw Error(ErrorCode::ShapeMismatch, "groups length mismatch");
  std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> split;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& bucket = split[groups[i]];
    bucket.first.push_back(scores[i]);
    bucket.second.push_back(labels[i]);
  }
  std::map<std::string, RocAnalysis> out;
  for (const auto& [name, data] : split)
    out[name] = analyze_roc(data.first, data.second, threshold);
  return out;
}

double welch_t_test_p(double mean1, double sd1, std::size_t n1, double mean2,
                      double sd2, std::size_t n2) {
  if (n1 < 2 || n2 < 2)
    throw Error(ErrorCode::DegenerateGroup, "t-test needs n >= 2 per group");
  const double v1 = sd1 * sd1 / static_cast<double>(n1);
  const double v2 = sd2 * sd2 / static_cast<double>(n2);
  if (v1 + v2 < 1e-300) {
    // identical constant groups: no evidence of a difference
    if (mean1 == mean2) return 1.0;
    throw Error(ErrorCode::DegenerateGroup, "zero variance with unequal means");
  }
  const double t = (mean1 - mean2) / std::sqrt(v1 + v2);
  const double dof = (v1 + v2) * (v1 + v2) /
                     (v1 * v1 / (static_cast<double>(n1) - 1.0) +
                      v2 * v2 / (static_cast<double>(n2) - 1.0));
  return student_t_two_sided(t, dof);
}

double chi_square_p(const std::vector<std::vector<double>>& table) {
  const std::size_t rows = table.size();
  if (rows < 2) throw Error(ErrorCode::DegenerateGroup, "chi-square needs >=2 rows");
  const std::size_t cols = table[0].size();
  if (cols < 2) throw Error(ErrorCode::DegenerateGroup, "chi-square needs >=2 cols");
  std::vector<double> row_sum(rows, 0), col_sum(cols, 0);
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (table[r].size() != cols)
      throw Error(ErrorCode::ShapeMismatch, "ragged contingency table");
    for (std::size_t c = 0; c < cols; ++c) {
      row_sum[r] += table[r][c];
      col_sum[c] += table[r][c];
      total += table[r][c];
    }
  }
  if (total <= 0) throw Error(ErrorCode::DegenerateGroup, "empty table");
  // unobserved categories/rows carry no information; drop them
  std::vector<std::size_t> live_rows, live_cols;
  for (std::size_t r = 0; r < rows; ++r)
    if (row_sum[r] > 0) live_rows.push_back(r);
  for (std::size_t c = 0; c < cols; ++c)
    if (col_sum[c] > 0) live_cols.push_back(c);
  if (live_rows.size() < 2 || live_cols.size() < 2) return 1.0;
  double stat = 0;
  for (std::size_t r : live_rows)
    for (std::size_t c : live_cols) {
      const double expected = row_sum[r] * col_sum[c] / total;
      const double d = table[r][c] - expected;
      stat += d * d / expected;
    }
  const double dof = static_cast<double>(live_rows.size() - 1) *
                     static_cast<double>(live_cols.size() - 1);
  return chi2_sf(stat, dof);
}

}  // namespace nq
