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

#include "core/report.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "core/error.h"

namespace nq {

namespace {

using nlohmann::json;

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt_ci(double v, double lo, double hi, bool defined) {
  if (!defined) return "--";
  return fmt2(v) + " (" + fmt2(lo) + ", " + fmt2(hi) + ")";
}

std::string fmt_p(double p) {
  if (p < 0.0005) return "<0.001";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", p);
  return buf;
}

json row_to_json(const MetricsRow& r) {
  json j;
  j["model"] = r.model;
  j["group"] = r.group;
  j["n"] = r.n;
  j["prevalence"] = r.prevalence;
  j["auc_defined"] = r.auc_defined;
  if (r.auc_defined) {
    j["auc"] = r.auc;
    j["auc_lo"] = r.auc_lo;
    j["auc_hi"] = r.auc_hi;
    j["auc_var_degenerate"] = r.auc_var_degenerate;
  }
  j["accuracy"] = r.accuracy;
  j["accuracy_lo"] = r.accuracy_lo;
  j["accuracy_hi"] = r.accuracy_hi;
  j["sens_defined"] = r.sens_defined;
  if (r.sens_defined) {
    j["sensitivity"] = r.sensitivity;
    j["sensitivity_lo"] = r.sensitivity_lo;
    j["sensitivity_hi"] = r.sensitivity_hi;
  }
  j["spec_defined"] = r.spec_defined;
  if (r.spec_defined) {
    j["specificity"] = r.specificity;
    j["specificity_lo"] = r.specificity_lo;
    j["specificity_hi"] = r.specificity_hi;
  }
  j["threshold"] = r.threshold;
  j["threshold_source"] = r.threshold_source;
  return j;
}

MetricsRow row_from_json(const json& j) {
  MetricsRow r;
  r.model = j.at("model").get<std::string>();
  r.group = j.at("group").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  r.prevalence = j.at("prevalence").get<double>();
  r.auc_defined = j.at("auc_defined").get<bool>();
  if (r.auc_defined) {
    r.auc = j.at("auc").get<double>();
    r.auc_lo = j.at("auc_lo").get<double>();
    r.auc_hi = j.at("auc_hi").get<double>();
    r.auc_var_degenerate = j.value("auc_var_degenerate", false);
  }
  r.accuracy = j.at("accuracy").get<double>();
  r.accuracy_lo = j.at("accuracy_lo").get<double>();
  r.accuracy_hi = j.at("accuracy_hi").get<double>();
  r.sens_defined = j.at("sens_defined").get<bool>();
  if (r.sens_defined) {
    r.sensitivity = j.at("sensitivity").get<double>();
    r.sensitivity_lo = j.at("sensitivity_lo").get<double>();
    r.sensitivity_hi = j.at("sensitivity_hi").get<double>();
  }
  r.spec_defined = j.at("spec_defined").get<bool>();
  if (r.spec_defined) {
    r.specificity = j.at("specificity").get<double>();
    r.specificity_lo = j.at("specificity_lo").get<double>();
    r.specificity_hi = j.at("specificity_hi").get<double>();
  }
  r.threshold = j.at("threshold").get<double>();
  r.threshold_source = j.at("threshold_source").get<std::string>();
  return r;
}

}  // namespace

std::vector<ScoreRow> read_scores(const std::string& path,
                                  const std::string& score_column) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot open score file " + path);
  std::vector<ScoreRow> rows;
  std::string line;
  bool have_header = false;
  std::map<std::string, std::size_t> col;
  std::string score_col;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    if (!have_header) {
      for (std::size_t i = 0; i < cells.size(); ++i) col[cells[i]] = i;
      for (const char* required : {"exam_id", "label"})
        if (!col.count(required))
          throw Error(ErrorCode::SchemaError,
                      std::string("score file missing column '") + required + "'");
      if (!score_column.empty()) {
        if (!col.count(score_column))
          throw Error(ErrorCode::SchemaError,
                      "score file missing column '" + score_column + "'");
        score_col = score_column;
      } else if (col.count("score")) {
        score_col = "score";
      } else if (col.count("score_a")) {
        score_col = "score_a";
      } else {
        throw Error(ErrorCode::SchemaError,
                    "score file needs a 'score' or 'score_a' column");
      }
      have_header = true;
      continue;
    }
    ScoreRow r;
    try {
      r.exam_id = cells.at(col.at("exam_id"));
      r.score = std::stod(cells.at(col.at(score_col)));
      r.label = std::stoi(cells.at(col.at("label")));
      if (col.count("subject_id")) r.subject_id = cells.at(col.at("subject_id"));
      if (col.count("group")) r.group = cells.at(col.at("group"));
    } catch (const std::exception&) {
      throw Error(ErrorCode::SchemaError,
                  "bad score row at line " + std::to_string(lineno));
    }
    if (r.label != 0 && r.label != 1)
      throw Error(ErrorCode::SchemaError, "labels must be 0/1");
    rows.push_back(std::move(r));
  }
  if (!have_header)
    throw Error(ErrorCode::SchemaError, "score file has no header");
  return rows;
}

bool score_file_has_column(const std::string& path, const std::string& column) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot open score file " + path);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t'))
      if (cell == column) return true;
    return false;
  }
  return false;
}

void write_scores(const std::vector<ScoreRow>& rows, const std::string& path,
                  const std::string& provenance_comment) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoError, "cannot create score file " + path);
  if (!provenance_comment.empty()) f << "# " << provenance_comment << "\n";
  f << "exam_id\tsubject_id\tscore\tlabel\tgroup\n";
  char num[64];
  for (const auto& r : rows) {
    std::snprintf(num, sizeof(num), "%.17g", r.score);
    f << r.exam_id << '\t' << r.subject_id << '\t' << num << '\t' << r.label
      << '\t' << r.group << "\n";
  }
}

std::string report_to_json(const MetricsReport& report) {
  json j;
  j["schema_version"] = report.schema_version;
  j["meta"] = {{"config_hash", report.meta.config_hash},
               {"seed", report.meta.seed},
               {"version", report.meta.version}};
  j["rows"] = json::array();
  for (const auto& r : report.rows) j["rows"].push_back(row_to_json(r));
  j["comparisons"] = json::array();
  for (const auto& c : report.comparisons) {
    j["comparisons"].push_back({{"group", c.group},
                                {"model_a", c.model_a},
                                {"model_b", c.model_b},
                                {"auc_a", c.auc_a},
                                {"auc_b", c.auc_b},
                                {"z", c.z},
                                {"p_delong", c.p_delong},
                                {"delong_degenerate", c.delong_degenerate},
                                {"accuracy_a", c.accuracy_a},
                                {"accuracy_b", c.accuracy_b},
                                {"discordant_b", c.discordant_b},
                                {"discordant_c", c.discordant_c},
                                {"p_mcnemar", c.p_mcnemar}});
  }
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("bad report JSON: ") + e.what());
  }
  MetricsReport report;
  report.schema_version = j.at("schema_version").get<int>();
  report.meta.config_hash = j.at("meta").at("config_hash").get<std::string>();
  report.meta.seed = j.at("meta").at("seed").get<std::uint64_t>();
  report.meta.version = j.at("meta").at("version").get<std::string>();
  for (const auto& rj : j.at("rows")) report.rows.push_back(row_from_json(rj));
  for (const auto& cj : j.at("comparisons")) {
    ComparisonRow c;
    c.group = cj.at("group").get<std::string>();
    c.model_a = cj.at("model_a").get<std::string>();
    c.model_b = cj.at("model_b").get<std::string>();
    c.auc_a = cj.at("auc_a").get<double>();
    c.auc_b = cj.at("auc_b").get<double>();
    c.z = cj.at("z").get<double>();
    c.p_delong = cj.at("p_delong").get<double>();
    c.delong_degenerate = cj.at("delong_degenerate").get<bool>();
    c.accuracy_a = cj.at("accuracy_a").get<double>();
    c.accuracy_b = cj.at("accuracy_b").get<double>();
    c.discordant_b = cj.at("discordant_b").get<long long>();
    c.discordant_c = cj.at("discordant_c").get<long long>();
    c.p_mcnemar = cj.at("p_mcnemar").get<double>();
    report.comparisons.push_back(std::move(c));
  }
  return report;
}

std::string report_to_text(const MetricsReport& report) {
  std::ostringstream out;
  out << "# neuroquant report\n";
  out << "# config=" << report.meta.config_hash << " seed=" << report.meta.seed
      << " version=" << report.meta.version << "\n";

  // group -> model order preserved by first appearance
  std::vector<std::string> groups;
  for (const auto& r : report.rows)
    if (std::find(groups.begin(), groups.end(), r.group) == groups.end())
      groups.push_back(r.group);

  for (const auto& group : groups) {
    std::vector<const MetricsRow*> rows;
    for (const auto& r : report.rows)
      if (r.group == group) rows.push_back(&r);
    if (rows.empty()) continue;
    out << "\nGroup " << group << " (n=" << rows[0]->n << ", prevalence "
        << fmt2(rows[0]->prevalence) << ")\n";
    out << "  Metric      ";
    for (const auto* r : rows) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), " | %-21s", r->model.c_str());
      out << buf;
    }
    out << "\n";
    auto metric_line = [&](const char* name, auto get) {
      char label[32];
      std::snprintf(label, sizeof(label), "  %-12s", name);
      out << label;
      for (const auto* r : rows) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), " | %-21s", get(*r).c_str());
        out << buf;
      }
      out << "\n";
    };
    metric_line("AUC", [](const MetricsRow& r) {
      return fmt_ci(r.auc, r.auc_lo, r.auc_hi, r.auc_defined);
    });
    metric_line("Accuracy", [](const MetricsRow& r) {
      return fmt_ci(r.accuracy, r.accuracy_lo, r.accuracy_hi, true);
    });
    metric_line("Sensitivity", [](const MetricsRow& r) {
      return fmt_ci(r.sensitivity, r.sensitivity_lo, r.sensitivity_hi,
                    r.sens_defined);
    });
    metric_line("Specificity", [](const MetricsRow& r) {
      return fmt_ci(r.specificity, r.specificity_lo, r.specificity_hi,
                    r.spec_defined);
    });
    for (const auto& c : report.comparisons) {
      if (c.group != group) continue;
      out << "  DeLong's test   P=" << fmt_p(c.p_delong)
          << (c.delong_degenerate ? " (degenerate)" : "") << "\n";
      out << "  McNemar's test  P=" << fmt_p(c.p_mcnemar) << "\n";
    }
  }
  return out.str();
}

namespace {

// all decimal numbers in a text blob, in order; "<0.001" markers are kept
// as negative sentinels paired with their bound
struct TextNumber {
  double value = 0;
  bool is_upper_bound = false;  // came from "<bound"
};

std::vector<TextNumber> extract_numbers(const std::string& text) {
  std::vector<TextNumber> out;
  for (std::size_t i = 0; i < text.size();) {
    const bool bound = text[i] == '<';
    const std::size_t start = bound ? i + 1 : i;
    if (start < text.size() &&
        (std::isdigit(static_cast<unsigned char>(text[start])) ||
         (text[start] == '-' && start + 1 < text.size() &&
          std::isdigit(static_cast<unsigned char>(text[start + 1]))))) {
      std::size_t end = start;
      while (end < text.size() &&
             (std::isdigit(static_cast<unsigned char>(text[end])) ||
              text[end] == '.' || text[end] == '-'))
        ++end;
      const std::string token = text.substr(start, end - start);
      if (token.find('.') != std::string::npos) {  // decimals only
        out.push_back({std::stod(token), bound});
      }
      i = end;
    } else {
      ++i;
    }
  }
  return out;
}

std::string check_one(std::vector<TextNumber>& parsed, std::size_t& at,
                      double value, int decimals, const std::string& what) {
  if (at >= parsed.size()) return what + ": missing from the text table";
  const TextNumber got = parsed[at++];
  if (got.is_upper_bound) {
    if (!(value < got.value))
      return what + ": text bound <" + std::to_string(got.value) +
             " does not cover " + std::to_string(value);
    return "";
  }
  const double scale = std::pow(10.0, decimals);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
  const double rounded = std::stod(buf);
  if (std::abs(got.value - rounded) > 0.5 / scale * 1e-6)
    return what + ": text " + std::to_string(got.value) + " != " +
           std::to_string(rounded);
  return "";
}

}  // namespace

std::string report_cross_check(const MetricsReport& report) {
  // re-parse every number out of the rendered text, skip the provenance
  // header, and compare against the full-precision report in print order
  const std::string text = report_to_text(report);
  std::string body = text;
  {
    std::size_t pos = 0;
    while (pos < body.size() && body[pos] == '#')
      pos = body.find('\n', pos) + 1;
    body = body.substr(pos);
  }
  auto parsed = extract_numbers(body);
  std::size_t at = 0;

  std::vector<std::string> groups;
  for (const auto& r : report.rows)
    if (std::find(groups.begin(), groups.end(), r.group) == groups.end())
      groups.push_back(r.group);

  std::string err;
  auto ck = [&](double value, int decimals, const std::string& what) {
    if (err.empty()) err = check_one(parsed, at, value, decimals, what);
  };
  for (const auto& group : groups) {
    std::vector<const MetricsRow*> rows;
    for (const auto& r : report.rows)
      if (r.group == group) rows.push_back(&r);
    if (rows.empty()) continue;
    ck(rows[0]->prevalence, 2, group + "/prevalence");
    for (const auto* r : rows)
      if (r->auc_defined) {
        ck(r->auc, 2, r->model + "/auc");
        ck(r->auc_lo, 2, r->model + "/auc_lo");
        ck(r->auc_hi, 2, r->model + "/auc_hi");
      }
    for (const auto* r : rows) {
      ck(r->accuracy, 2, r->model + "/accuracy");
      ck(r->accuracy_lo, 2, r->model + "/accuracy_lo");
      ck(r->accuracy_hi, 2, r->model + "/accuracy_hi");
    }
    for (const auto* r : rows)
      if (r->sens_defined) {
        ck(r->sensitivity, 2, r->model + "/sensitivity");
        ck(r->sensitivity_lo, 2, r->model + "/sensitivity_lo");
        ck(r->sensitivity_hi, 2, r->model + "/sensitivity_hi");
      }
    for (const auto* r : rows)
      if (r->spec_defined) {
        ck(r->specificity, 2, r->model + "/specificity");
        ck(r->specificity_lo, 2, r->model + "/specificity_lo");
        ck(r->specificity_hi, 2, r->model + "/specificity_hi");
      }
    for (const auto& c : report.comparisons) {
      if (c.group != group) continue;
      ck(c.p_delong, 3, group + "/p_delong");
      ck(c.p_mcnemar, 3, group + "/p_mcnemar");
    }
    if (!err.empty()) return err;
  }
  if (at != parsed.size())
    return "text table contains " + std::to_string(parsed.size() - at) +
           " unexpected extra numbers";
  return err;
}

}  // namespace nq
