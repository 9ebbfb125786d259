#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "core/cohort.h"
#include "core/error.h"

using namespace nq;

namespace {

ExamRecord make_exam(const std::string& subject, const std::string& date,
                     const std::string& dataset = "phantom") {
  ExamRecord r;
  r.subject_id = subject;
  r.exam_date = CivilDate::parse(date);
  r.t1w_path = subject + "/t1.nii.gz";
  r.flair_path = subject + "/fl.nii.gz";
  r.pet_path = subject + "/pet.nii.gz";
  r.tracer = Tracer::FBB;
  r.age = 72;
  r.sex = Sex::Female;
  r.cognitive_status = CognitiveStatus::CN;
  r.dataset = dataset;
  return r;
}

}  // namespace

TEST_SUITE_BEGIN("cohort");

TEST_CASE("date arithmetic") {
  CHECK(CivilDate::parse("1970-01-01").day_number() == 0);
  CHECK(CivilDate::parse("1970-01-31").day_number() == 30);
  CHECK(CivilDate::parse("2000-03-01").day_number() -
            CivilDate::parse("2000-02-28").day_number() ==
        2);  // leap year
  CHECK(CivilDate::parse("2015-06-30").iso() == "2015-06-30");
  CHECK_THROWS_AS(CivilDate::parse("garbage"), Error);
}

TEST_CASE("MRI-PET pairing window and tie-break") {
  std::vector<ExamRecord> mri = {make_exam("s1", "2015-01-01")};
  mri[0].pet_path.clear();

  SUBCASE("PET 30 days away pairs (inclusive window)") {
    std::vector<ExamRecord> pet = {make_exam("s1", "2015-01-31")};
    const auto res = pair_mri_pet(mri, pet, 30);
    CHECK(res.paired.size() == 1);
    CHECK(res.unpaired_mri == 0);
  }
  SUBCASE("PET 31 days away is excluded") {
    std::vector<ExamRecord> pet = {make_exam("s1", "2015-02-01")};
    const auto res = pair_mri_pet(mri, pet, 30);
    CHECK(res.paired.empty());
    CHECK(res.unpaired_mri == 1);
    CHECK(res.unpaired_pet == 1);
  }
  SUBCASE("nearest PET wins: -5 days beats +10 days") {
    auto pet_early = make_exam("s1", "2014-12-27");  // 5 days before
    pet_early.pet_path = "early.nii.gz";
    auto pet_late = make_exam("s1", "2015-01-11");  // 10 days after
    pet_late.pet_path = "late.nii.gz";
    const auto res = pair_mri_pet(mri, {pet_late, pet_early}, 30);
    REQUIRE(res.paired.size() == 1);
    CHECK(res.paired[0].pet_path == "early.nii.gz");
  }
  SUBCASE("exact tie resolves to the earlier PET") {
    auto pet_before = make_exam("s1", "2014-12-25");  // 7 days before
    pet_before.pet_path = "before.nii.gz";
    auto pet_after = make_exam("s1", "2015-01-08");  // 7 days after
    pet_after.pet_path = "after.nii.gz";
    const auto res = pair_mri_pet(mri, {pet_after, pet_before}, 30);
    REQUIRE(res.paired.size() == 1);
    CHECK(res.paired[0].pet_path == "before.nii.gz");
  }
  SUBCASE("other subjects' PETs never pair") {
    std::vector<ExamRecord> pet = {make_exam("s2", "2015-01-02")};
    const auto res = pair_mri_pet(mri, pet, 30);
    CHECK(res.paired.empty());
  }
}

TEST_CASE("split: 1000 single-exam subjects give 640/160/200") {
  std::vector<ExamRecord> records;
  for (int i = 0; i < 1000; ++i)
    records.push_back(make_exam("s" + std::to_string(i), "2015-01-01"));
  const auto split = split_cohort(records, SplitFractions{}, 42);
  std::map<Partition, int> counts;
  for (const auto& r : split) ++counts[r.partition];
  CHECK(counts[Partition::Train] == 640);
  CHECK(counts[Partition::Validation] == 160);
  CHECK(counts[Partition::Test] == 200);
}

TEST_CASE("split: multi-exam subjects stay together, never in test") {
  std::vector<ExamRecord> records;
  for (int i = 0; i < 60; ++i) {
    records.push_back(make_exam("s" + std::to_string(i), "2015-01-01"));
    if (i % 3 == 0) {
      records.push_back(make_exam("s" + std::to_string(i), "2016-01-01"));
      records.push_back(make_exam("s" + std::to_string(i), "2017-01-01"));
    }
  }
  const auto split = split_cohort(records, SplitFractions{}, 7);
  std::map<std::string, std::set<Partition>> parts;
  std::map<std::string, int> n_exams;
  for (const auto& r : split) {
    parts[r.subject_id].insert(r.partition);
    ++n_exams[r.subject_id];
  }
  for (const auto& [subject, p] : parts) {
    CHECK(p.size() == 1);  // never spans partitions
    if (n_exams[subject] > 1) CHECK(*p.begin() != Partition::Test);
  }

  SUBCASE("test partition holds one exam per subject") {
    std::map<std::string, int> test_counts;
    for (const auto& r : split)
      if (r.partition == Partition::Test) ++test_counts[r.subject_id];
    for (const auto& [_, c] : test_counts) CHECK(c == 1);
  }
}

TEST_CASE("split determinism and dataset independence") {
  std::vector<ExamRecord> records;
  for (int i = 0; i < 50; ++i)
    records.push_back(make_exam("a" + std::to_string(i), "2015-01-01", "dsA"));
  for (int i = 0; i < 40; ++i)
    records.push_back(make_exam("b" + std::to_string(i), "2015-01-01", "dsB"));

  const auto s1 = split_cohort(records, SplitFractions{}, 99);
  const auto s2 = split_cohort(records, SplitFractions{}, 99);
  for (std::size_t i = 0; i < s1.size(); ++i)
    CHECK(s1[i].partition == s2[i].partition);

  // per-dataset proportions hold within one subject
  std::map<std::string, std::map<Partition, int>> per_ds;
  for (const auto& r : s1) ++per_ds[r.dataset][r.partition];
  CHECK(per_ds["dsA"][Partition::Test] == 10);
  CHECK(per_ds["dsB"][Partition::Test] == 8);

  const auto s3 = split_cohort(records, SplitFractions{}, 100);
  bool any_difference = false;
  for (std::size_t i = 0; i < s1.size(); ++i)
    any_difference |= s1[i].partition != s3[i].partition;
  CHECK(any_difference);

  SUBCASE("partitions are exhaustive over included exams") {
    for (const auto& r : s1) CHECK(r.partition != Partition::Unassigned);
  }
  SUBCASE("too few subjects is an error") {
    std::vector<ExamRecord> tiny = {make_exam("x1", "2015-01-01"),
                                    make_exam("x2", "2015-01-01")};
    CHECK_THROWS_AS(split_cohort(tiny, SplitFractions{}, 1), Error);
  }
}

TEST_CASE("folds: equal division and remainder distribution") {
  std::vector<ExamRecord> records;
  for (int i = 0; i < 100; ++i) {
    auto r = make_exam("s" + std::to_string(i), "2015-01-01");
    r.partition = Partition::Train;
    records.push_back(r);
  }
  auto folded = make_folds(records, 5, 3);
  std::map<int, int> sizes;
  for (const auto& r : folded) ++sizes[*r.fold];
  for (int f = 0; f < 5; ++f) CHECK(sizes[f] == 20);

  SUBCASE("101 subjects -> sizes {21,20,20,20,20}") {
    auto r = make_exam("s100", "2015-01-01");
    r.partition = Partition::Train;
    records.push_back(r);
    folded = make_folds(records, 5, 3);
    std::vector<int> fold_sizes(5, 0);
    for (const auto& rec : folded) ++fold_sizes[*rec.fold];
    std::sort(fold_sizes.begin(), fold_sizes.end());
    CHECK(fold_sizes == std::vector<int>{20, 20, 20, 20, 21});
  }
  SUBCASE("every train exam appears in exactly one fold") {
    for (const auto& r : folded)
      if (r.partition == Partition::Train) CHECK(r.fold.has_value());
  }
  SUBCASE("subject-level: one subject's exams share a fold") {
    std::vector<ExamRecord> multi = records;
    auto extra = make_exam("s0", "2016-01-01");
    extra.partition = Partition::Train;
    multi.push_back(extra);
    const auto f2 = make_folds(multi, 5, 3);
    std::map<std::string, std::set<int>> by_subject;
    for (const auto& r : f2) by_subject[r.subject_id].insert(*r.fold);
    for (const auto& [_, folds] : by_subject) CHECK(folds.size() == 1);
  }
}

TEST_CASE("demographics table reproduces the fixture p-values") {
  // build a labeled cohort whose sex table is (1045, 794; 1182, 1037)
  std::vector<ExamRecord> records;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> age_pos(72.6, 5.9), age_neg(70.3, 6.6);
  auto add = [&](int n, int label, Sex sex) {
    for (int i = 0; i < n; ++i) {
      auto r = make_exam("d" + std::to_string(records.size()), "2015-01-01");
      r.label = label;
      r.sex = sex;
      r.age = label ? age_pos(rng) : age_neg(rng);
      records.push_back(r);
    }
  };
  add(1045, 1, Sex::Male);
  add(1182, 1, Sex::Female);
  add(794, 0, Sex::Male);
  add(1037, 0, Sex::Female);

  const auto table = demographics_table(records);
  CHECK(table.positive.n == 2227);
  CHECK(table.negative.n == 1831);
  CHECK(table.p_sex > 0.015);
  CHECK(table.p_sex < 0.035);
  CHECK(table.p_age < 0.001);  // simulated from the paper's summary stats

  SUBCASE("identical groups: p = 1") {
    std::vector<ExamRecord> same;
    for (int label = 0; label <= 1; ++label)
      for (int i = 0; i < 30; ++i) {
        auto r = make_exam("e" + std::to_string(label * 100 + i), "2015-01-01");
        r.label = label;
        r.sex = i % 2 ? Sex::Male : Sex::Female;
        r.age = 70 + (i % 7);
        r.cognitive_status = i % 3 == 0 ? CognitiveStatus::MCI : CognitiveStatus::CN;
        same.push_back(r);
      }
    const auto t = demographics_table(same);
    CHECK(t.p_sex == doctest::Approx(1.0));
    CHECK(t.p_age == doctest::Approx(1.0));
    CHECK(t.p_cognitive == doctest::Approx(1.0));
  }
}

TEST_CASE("manifest roundtrip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "nq_cohort_test";
  fs::create_directories(dir);
  const std::string path = (dir / "manifest.tsv").string();

  std::vector<ExamRecord> records;
  auto r1 = make_exam("s1", "2015-03-04");
  r1.centiloid = 25.5;
  r1.label = 1;
  r1.partition = Partition::Train;
  r1.fold = 3;
  auto r2 = make_exam("s2", "2016-07-19");
  r2.flair_path.clear();  // missing channel
  r2.partition = Partition::Test;
  records = {r1, r2};

  write_manifest(records, path, "seed=1 config=abc");
  const auto back = read_manifest(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].subject_id == "s1");
  CHECK(back[0].exam_date.iso() == "2015-03-04");
  CHECK(back[0].centiloid.has_value());
  CHECK(*back[0].centiloid == doctest::Approx(25.5));
  CHECK(back[0].label == 1);
  CHECK(back[0].partition == Partition::Train);
  CHECK(back[0].fold == 3);
  CHECK(back[1].flair_path.empty());
  CHECK(back[1].partition == Partition::Test);
  CHECK_FALSE(back[1].fold.has_value());

  SUBCASE("missing required column") {
    std::ofstream f(path);
    f << "subject_id\tdate\n s1\t2015-01-01\n";
    f.close();
    CHECK_THROWS_AS(read_manifest(path), Error);
  }
  fs::remove_all(dir);
}

TEST_CASE("date window filter") {
  std::vector<ExamRecord> records = {make_exam("s1", "2009-12-31"),
                                     make_exam("s2", "2010-01-01"),
                                     make_exam("s3", "2023-12-31"),
                                     make_exam("s4", "2024-01-01")};
  std::size_t excluded = 0;
  const auto kept = filter_date_window(records, CivilDate{2010, 1, 1},
                                       CivilDate{2023, 12, 31}, &excluded);
  CHECK(kept.size() == 2);
  CHECK(excluded == 2);
  CHECK(kept[0].subject_id == "s2");
  CHECK(kept[1].subject_id == "s3");
}

TEST_SUITE_END();
