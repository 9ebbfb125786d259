#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "core/error.h"
#include "core/report.h"

using namespace nq;

namespace {

MetricsReport sample_report() {
  MetricsReport r;
  r.meta = {"0123456789abcdef", 42, "0.1.0"};
  MetricsRow a;
  a.model = "model_a";
  a.group = "all";
  a.n = 811;
  a.prevalence = 0.553;
  a.auc_defined = true;
  a.auc = 0.6211;
  a.auc_lo = 0.6012;
  a.auc_hi = 0.6414;
  a.accuracy = 0.6149;
  a.accuracy_lo = 0.5951;
  a.accuracy_hi = 0.6347;
  a.sens_defined = true;
  a.sensitivity = 0.8803;
  a.sensitivity_lo = 0.8702;
  a.sensitivity_hi = 0.8904;
  a.spec_defined = true;
  a.specificity = 0.2349;
  a.specificity_lo = 0.2248;
  a.specificity_hi = 0.2450;
  a.threshold = 0.11;
  a.threshold_source = "training";
  MetricsRow b = a;
  b.model = "model_b";
  b.auc = 0.6702;
  b.auc_lo = 0.6403;
  b.auc_hi = 0.7001;
  r.rows = {a, b};

  ComparisonRow c;
  c.group = "all";
  c.model_a = "model_a";
  c.model_b = "model_b";
  c.auc_a = a.auc;
  c.auc_b = b.auc;
  c.z = -2.75;
  c.p_delong = 0.006;
  c.accuracy_a = 0.61;
  c.accuracy_b = 0.64;
  c.discordant_b = 40;
  c.discordant_c = 70;
  c.p_mcnemar = 0.008;
  r.comparisons = {c};

  MetricsRow dementia = a;
  dementia.group = "dementia";
  dementia.n = 31;
  dementia.prevalence = 0.94;
  dementia.auc_defined = false;
  dementia.spec_defined = false;
  r.rows.push_back(dementia);
  return r;
}

}  // namespace

TEST_SUITE_BEGIN("report");

TEST_CASE("JSON roundtrip preserves every field") {
  const auto report = sample_report();
  const auto back = report_from_json(report_to_json(report));
  CHECK(back.meta.config_hash == report.meta.config_hash);
  CHECK(back.meta.seed == report.meta.seed);
  REQUIRE(back.rows.size() == report.rows.size());
  for (std::size_t i = 0; i < back.rows.size(); ++i) {
    CHECK(back.rows[i].model == report.rows[i].model);
    CHECK(back.rows[i].group == report.rows[i].group);
    CHECK(back.rows[i].auc_defined == report.rows[i].auc_defined);
    if (report.rows[i].auc_defined)
      CHECK(back.rows[i].auc == report.rows[i].auc);
    CHECK(back.rows[i].accuracy == report.rows[i].accuracy);
    CHECK(back.rows[i].spec_defined == report.rows[i].spec_defined);
    CHECK(back.rows[i].threshold == report.rows[i].threshold);
  }
  REQUIRE(back.comparisons.size() == 1);
  CHECK(back.comparisons[0].p_delong == report.comparisons[0].p_delong);
  CHECK(back.comparisons[0].discordant_c == report.comparisons[0].discordant_c);
}

TEST_CASE("JSON output is deterministic") {
  const auto report = sample_report();
  CHECK(report_to_json(report) == report_to_json(report));
}

TEST_CASE("text table carries the Table-2 style rows") {
  const auto text = report_to_text(sample_report());
  CHECK(text.find("Group all") != std::string::npos);
  CHECK(text.find("AUC") != std::string::npos);
  CHECK(text.find("0.62 (0.60, 0.64)") != std::string::npos);
  CHECK(text.find("0.67 (0.64, 0.70)") != std::string::npos);
  CHECK(text.find("DeLong's test   P=0.006") != std::string::npos);
  CHECK(text.find("McNemar's test  P=0.008") != std::string::npos);
  // undefined metrics render as --
  CHECK(text.find("--") != std::string::npos);
  CHECK(text.find("config=0123456789abcdef") != std::string::npos);
}

TEST_CASE("cross-check: text and machine numbers agree") {
  CHECK(report_cross_check(sample_report()) == "");

  SUBCASE("tiny p-values print as a bound") {
    auto r = sample_report();
    r.comparisons[0].p_delong = 1e-7;
    CHECK(report_to_text(r).find("P=<0.001") != std::string::npos);
    CHECK(report_cross_check(r) == "");
  }
}

TEST_CASE("score table roundtrip") {
  namespace fs = std::filesystem;
  const auto path = (fs::temp_directory_path() / "nq_scores_test.tsv").string();
  std::vector<ScoreRow> rows = {{"e1", "s1", 0.91234567890123, 1, "CN"},
                                {"e2", "s2", 0.2, 0, "MCI"},
                                {"e3", "s2", 0.5, 1, "dementia"}};
  write_scores(rows, path, "config=x seed=1");
  const auto back = read_scores(path);
  REQUIRE(back.size() == 3);
  CHECK(back[0].exam_id == "e1");
  CHECK(back[0].score == rows[0].score);  // full-precision roundtrip
  CHECK(back[1].label == 0);
  CHECK(back[2].group == "dementia");
  fs::remove(path);

  SUBCASE("schema violations raise") {
    std::ofstream f(path);
    f << "exam_id\tscore\n e1\t0.5\n";
    f.close();
    CHECK_THROWS_AS(read_scores(path), Error);
    fs::remove(path);
  }
}

TEST_SUITE_END();
