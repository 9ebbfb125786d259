#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "core/metrics.h"
#include "core/nifti_io.h"
#include "core/phantom.h"
#include "core/quant.h"

using namespace nq;

namespace {

PhantomSpec small_spec(int n_subjects, std::uint64_t seed) {
  PhantomSpec spec;
  spec.n_subjects = n_subjects;
  spec.grid = 24;
  spec.seed = seed;
  spec.noise_sd = 0.02;
  return spec;
}

TracerCalibration cal_for(Tracer t) {
  return t == Tracer::FBB ? TracerCalibration::fbb_default()
                          : TracerCalibration::fbp_default();
}

}  // namespace

TEST_SUITE_BEGIN("phantom");

TEST_CASE("plans are deterministic and within the date window") {
  const auto spec = small_spec(50, 7);
  const auto a = plan_cohort(spec);
  const auto b = plan_cohort(spec);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].subject_id == b[i].subject_id);
    CHECK(a[i].exam_date == b[i].exam_date);
    CHECK(a[i].centiloid == b[i].centiloid);
    CHECK(a[i].render_seed == b[i].render_seed);
    CHECK(a[i].exam_date.year >= 2010);
    CHECK(a[i].exam_date.year <= 2023);
  }
}

TEST_CASE("label prevalence approaches the requested fraction") {
  auto spec = small_spec(500, 11);
  spec.positive_fraction = 0.55;
  const auto plans = plan_cohort(spec);
  std::map<std::string, int> label_by_subject;
  for (const auto& p : plans) label_by_subject[p.subject_id] = p.label;
  double positive = 0;
  for (const auto& [_, l] : label_by_subject) positive += l;
  const double prevalence = positive / 500.0;
  CHECK(prevalence > 0.53);
  CHECK(prevalence < 0.57);
}

TEST_CASE("rendered volumes are valid, LPI, deterministic") {
  const auto spec = small_spec(3, 13);
  const auto plans = plan_cohort(spec);
  const auto v1 = render_exam(spec, plans[0]);
  const auto v2 = render_exam(spec, plans[0]);
  CHECK(v1.t1w.data() == v2.t1w.data());
  CHECK(v1.flair.data() == v2.flair.data());
  CHECK(v1.pet.data() == v2.pet.data());
  CHECK(v1.t1w.orientation() == "LPI");
  for (double v : v1.t1w.data()) CHECK(std::isfinite(v));
  CHECK(v1.t1w.shape() == std::array<int, 3>{24, 24, 24});
}

TEST_CASE("quantifying generated PET reproduces the intended labels") {
  auto spec = small_spec(120, 17);
  const auto plans = plan_cohort(spec);
  const auto masks = make_masks(spec);
  int correct = 0, total = 0;
  for (const auto& p : plans) {
    if (p.exam_index > 0) continue;  // one exam per subject suffices here
    const auto volumes = render_exam(spec, p);
    const auto result =
        quantify(volumes.pet, masks.target, masks.reference, cal_for(p.tracer));
    correct += (result.status == AmyloidStatus::Positive) == (p.label == 1);
    ++total;
    // quantified centiloid lands near the intended value
    CHECK(std::abs(result.centiloid - p.centiloid) < 4.0);
  }
  CHECK(total >= 100);
  CHECK(correct == total);
}

TEST_CASE("channel-1 null: with zero channel-1 effect the classes are "
          "indistinguishable in channel 1") {
  auto spec = small_spec(60, 19);
  spec.channel1_effect_mm = 0.0;
  spec.channel2_effect = 1.0;
  spec.longitudinal_fraction = 0.0;
  const auto plans = plan_cohort(spec);

  // summary statistic: mean channel-1 intensity within the brain
  std::vector<double> stat;
  std::vector<int> labels;
  for (const auto& p : plans) {
    const auto volumes = render_exam(spec, p);
    double mean = 0;
    for (double v : volumes.t1w.data()) mean += v;
    stat.push_back(mean / volumes.t1w.size());
    labels.push_back(p.label);
  }
  const double auc = auc_mann_whitney(stat, labels);
  CHECK(auc > 0.35);
  CHECK(auc < 0.65);

  SUBCASE("channel 2 still separates") {
    std::vector<double> stat2;
    for (const auto& p : plans) {
      const auto volumes = render_exam(spec, p);
      // high-intensity voxel count picks up the blobs
      double bright = 0;
      for (double v : volumes.flair.data()) bright += v > 0.7;
      stat2.push_back(bright);
    }
    CHECK(auc_mann_whitney(stat2, labels) > 0.9);
  }
}

TEST_CASE("ventricle dilation separates channel 1 when enabled") {
  auto spec = small_spec(60, 23);
  spec.channel1_effect_mm = 2.0;
  spec.longitudinal_fraction = 0.0;
  const auto plans = plan_cohort(spec);
  std::vector<double> dark;
  std::vector<int> labels;
  for (const auto& p : plans) {
    const auto volumes = render_exam(spec, p);
    double n_dark = 0;
    for (double v : volumes.t1w.data()) n_dark += (v > 0.05 && v < 0.3);
    dark.push_back(n_dark);
    labels.push_back(p.label);
  }
  CHECK(auc_mann_whitney(dark, labels) > 0.8);
}

TEST_CASE("masks are nonempty, disjoint, and on the phantom grid") {
  const auto spec = small_spec(1, 3);
  const auto masks = make_masks(spec);
  CHECK(masks.target.count() > 50);
  CHECK(masks.reference.count() > 20);
  for (std::size_t i = 0; i < masks.target.volume().size(); ++i) {
    const bool overlap = masks.target.at(i) && masks.reference.at(i);
    CHECK_FALSE(overlap);
  }
}

TEST_CASE("longitudinal subjects have multiple dated exams") {
  auto spec = small_spec(100, 29);
  spec.longitudinal_fraction = 0.3;
  const auto plans = plan_cohort(spec);
  std::map<std::string, std::vector<CivilDate>> by_subject;
  for (const auto& p : plans) by_subject[p.subject_id].push_back(p.exam_date);
  int multi = 0;
  for (const auto& [_, dates] : by_subject) {
    if (dates.size() > 1) {
      ++multi;
      for (std::size_t i = 1; i < dates.size(); ++i)
        CHECK(dates[i - 1].day_number() < dates[i].day_number());
    }
  }
  CHECK(multi > 15);
  CHECK(multi < 45);

  SUBCASE("one label per subject") {
    std::map<std::string, std::set<int>> labels;
    for (const auto& p : plans) labels[p.subject_id].insert(p.label);
    for (const auto& [_, set] : labels) CHECK(set.size() == 1);
  }
}

TEST_CASE("written cohort roundtrips through the manifest and is reproducible") {
  namespace fs = std::filesystem;
  const auto root = fs::temp_directory_path() / "nq_phantom_test";
  fs::remove_all(root);
  auto spec = small_spec(6, 31);
  spec.longitudinal_fraction = 0.2;

  const auto cohort = write_cohort(spec, root.string(), "seed=31");
  const auto records = read_manifest((root / "manifest.tsv").string());
  CHECK(records.size() == cohort.records.size());
  for (const auto& r : records) {
    CHECK(fs::exists(root / r.t1w_path));
    CHECK(fs::exists(root / r.flair_path));
    CHECK(fs::exists(root / r.pet_path));
  }
  CHECK(fs::exists(root / "target_mask.nii.gz"));
  CHECK(fs::exists(root / "reference_mask.nii.gz"));
  CHECK(fs::exists(root / "truth.tsv"));

  // bit-identical regeneration
  const auto t1_bytes = read_file_bytes((root / records[0].t1w_path).string());
  fs::remove_all(root);
  write_cohort(spec, root.string(), "seed=31");
  CHECK(read_file_bytes((root / records[0].t1w_path).string()) == t1_bytes);

  // a written volume parses and matches a fresh render
  const auto plans = plan_cohort(spec);
  const auto volumes = render_exam(spec, plans[0]);
  const auto loaded = read_nifti_file((root / records[0].t1w_path).string());
  REQUIRE(loaded.size() == volumes.t1w.size());
  for (std::size_t i = 0; i < loaded.size(); ++i)
    CHECK(loaded.data()[i] ==
          doctest::Approx(volumes.t1w.data()[i]).epsilon(1e-6));  // float32 file
  fs::remove_all(root);
}

TEST_SUITE_END();
