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

#include "core/phantom.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "core/error.h"
#include "core/nifti_io.h"
#include "core/rng.h"

namespace nq {

namespace {

struct Ellipsoid {
  Vec3 center;  // voxel coords
  Vec3 semi;    // voxel units (spacing is 1 mm)
  bool contains(double x, double y, double z) const {
    const double dx = (x - center[0]) / semi[0];
    const double dy = (y - center[1]) / semi[1];
    const double dz = (z - center[2]) / semi[2];
    return dx * dx + dy * dy + dz * dz <= 1.0;
  }
  // scaled membership: radius fraction in [0, inf)
  double rho(double x, double y, double z) const {
    const double dx = (x - center[0]) / semi[0];
    const double dy = (y - center[1]) / semi[1];
    const double dz = (z - center[2]) / semi[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  }
};

// head/brain geometry as a function of the grid
struct Geometry {
  double n;
  Vec3 center;
  Ellipsoid brain;
  Ellipsoid ventricle_base;
  Ellipsoid cerebellum;
  double z_split;  // target shell stays above, reference below (LPI: +z inferior)

  explicit Geometry(int grid) {
    n = grid;
    const double c = (grid - 1) / 2.0;
    center = {c, c, c};
    brain = {{c, c, c}, {0.42 * n, 0.38 * n, 0.36 * n}};
    ventricle_base = {{c, c, c - 0.04 * n}, {0.10 * n, 0.085 * n, 0.075 * n}};
    cerebellum = {{c, c + 0.10 * n, c + 0.26 * n}, {0.15 * n, 0.12 * n, 0.09 * n}};
    z_split = c + 0.14 * n;
  }
};

TracerCalibration calibration_for(Tracer t) {
  switch (t) {
    case Tracer::FBP: return TracerCalibration::fbp_default();
    case Tracer::FBB: return TracerCalibration::fbb_default();
    case Tracer::Custom: return TracerCalibration::oasis3_default();
  }
  return TracerCalibration::fbb_default();
}

}  // namespace

void PhantomSpec::validate() const {
  if (n_subjects < 1)
    throw Error(ErrorCode::ConfigError, "n_subjects must be >= 1");
  if (grid < 16) throw Error(ErrorCode::ConfigError, "phantom grid too small");
  if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
    throw Error(ErrorCode::ConfigError, "positive_fraction must be in (0,1)");
  if (channel1_effect_mm < 0 || channel2_effect < 0)
    throw Error(ErrorCode::ConfigError, "effect sizes must be >= 0");
  if (longitudinal_fraction < 0 || longitudinal_fraction >= 1)
    throw Error(ErrorCode::ConfigError, "longitudinal_fraction in [0,1)");
  if (tracer_mode != "mixed" && tracer_mode != "FBB" && tracer_mode != "FBP")
    throw Error(ErrorCode::ConfigError, "tracer_mode must be mixed/FBB/FBP");
}

std::vector<PhantomExamPlan> plan_cohort(const PhantomSpec& spec) {
  spec.validate();
  // quota-based labels: exactly round(fraction * n) positives, shuffled, so
  // the prevalence tracks the spec tightly even for small cohorts
  std::vector<int> labels(spec.n_subjects, 0);
  const auto n_pos = static_cast<std::size_t>(
      std::llround(spec.positive_fraction * spec.n_subjects));
  for (std::size_t i = 0; i < std::min(n_pos, labels.size()); ++i) labels[i] = 1;
  {
    auto rng = make_rng(spec.seed, "phantom/labels");
    std::shuffle(labels.begin(), labels.end(), rng);
  }

  std::vector<PhantomExamPlan> plans;
  for (int s = 0; s < spec.n_subjects; ++s) {
    char id[16];
    std::snprintf(id, sizeof(id), "sub%04d", s);
    auto rng = make_rng(spec.seed, std::string("phantom/") + id);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const int label = labels[s];
    Tracer tracer;
    if (spec.tracer_mode == "FBB") tracer = Tracer::FBB;
    else if (spec.tracer_mode == "FBP") tracer = Tracer::FBP;
    else tracer = s % 2 == 0 ? Tracer::FBB : Tracer::FBP;
    const auto cal = calibration_for(tracer);

    // demographics skewed by label, loosely shaped like the study cohorts
    std::normal_distribution<double> age_dist(label ? 72.6 : 70.3,
                                              label ? 5.9 : 6.6);
    const double age = std::clamp(age_dist(rng), 55.0, 92.0);
    const Sex sex = unit(rng) < (label ? 0.469 : 0.434) ? Sex::Male : Sex::Female;
    const double cog_r = unit(rng);
    CognitiveStatus cog;
    if (label)
      cog = cog_r < 0.725 ? CognitiveStatus::CN
            : cog_r < 0.928 ? CognitiveStatus::MCI
                            : CognitiveStatus::Dementia;
    else
      cog = cog_r < 0.764 ? CognitiveStatus::CN
            : cog_r < 0.993 ? CognitiveStatus::MCI
                            : CognitiveStatus::Dementia;

    const bool longitudinal = unit(rng) < spec.longitudinal_fraction;
    const int n_exams = longitudinal ? 2 + (unit(rng) < 0.5 ? 1 : 0) : 1;

    // first exam in 2012..2019; follow-ups stay inside the 2010-2023 window
    std::uniform_real_distribution<double> day_dist(0.0, 2900.0);
    const std::int64_t first_day = CivilDate{2012, 1, 1}.day_number() +
                                   static_cast<std::int64_t>(day_dist(rng));
    std::int64_t day = first_day;

    for (int e = 0; e < n_exams; ++e) {
      PhantomExamPlan p;
      p.subject_id = id;
      p.exam_index = e;
      // back from the day number via linear search over years (dates stay
      // well inside 2010-2023)
      CivilDate d{2010, 1, 1};
      std::int64_t base = d.day_number();
      int year = 2010;
      while (day - base >= 366) {
        ++year;
        base = CivilDate{year, 1, 1}.day_number();
      }
      int month = 1, dom = 1;
      for (month = 12; month >= 1; --month) {
        if (CivilDate{year, month, 1}.day_number() <= day) break;
      }
      dom = static_cast<int>(day - CivilDate{year, month, 1}.day_number()) + 1;
      if (dom > 28) dom = 28;  // keep it simple and always valid
      p.exam_date = CivilDate{year, month, dom};

      p.label = label;
      p.tracer = tracer;
      // a comfortable margin around the cutoff keeps quantification
      // unambiguous under voxel noise
      std::uniform_real_distribution<double> cl_pos(cal.cutoff_cl + 5.0,
                                                    cal.cutoff_cl + 55.0);
      std::uniform_real_distribution<double> cl_neg(cal.cutoff_cl - 45.0,
                                                    cal.cutoff_cl - 5.0);
      p.centiloid = label ? cl_pos(rng) : cl_neg(rng);
      p.suvr = (p.centiloid - cal.intercept) / cal.slope;
      p.age = age + static_cast<double>(day - first_day) / 365.25;
      p.sex = sex;
      p.cognitive_status = cog;
      p.render_seed = derive_seed(spec.seed, std::string("phantom/render/") + id +
                                                 "/" + std::to_string(e));
      plans.push_back(std::move(p));

      std::uniform_real_distribution<double> gap(250.0, 450.0);
      day += static_cast<std::int64_t>(gap(rng));
    }
  }
  return plans;
}

PhantomMasks make_masks(const PhantomSpec& spec) {
  spec.validate();
  const Geometry g(spec.grid);
  const int n = spec.grid;
  std::vector<double> target(static_cast<std::size_t>(n) * n * n, 0.0);
  std::vector<double> reference(target.size(), 0.0);
  // cortical band: outer shell of the brain ellipsoid, upper part only
  std::size_t i = 0;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x, ++i) {
        const double rho = g.brain.rho(x, y, z);
        if (rho >= 0.62 && rho <= 0.88 && z < g.z_split) target[i] = 1.0;
        if (g.cerebellum.contains(x, y, z) && z >= g.z_split) reference[i] = 1.0;
      }
  const auto grid_vol = Volume3D::axis_aligned(
      {n, n, n}, {1, 1, 1}, std::vector<double>(target.size(), 0.0), "LPI");
  PhantomMasks masks;
  masks.target = BrainMask::from_volume(grid_vol.with_data(std::move(target)));
  masks.reference =
      BrainMask::from_volume(grid_vol.with_data(std::move(reference)));
  if (masks.target.count() == 0 || masks.reference.count() == 0)
    throw Error(ErrorCode::Internal, "phantom masks came out empty");
  return masks;
}

PhantomExamVolumes render_exam(const PhantomSpec& spec,
                               const PhantomExamPlan& plan) {
  const Geometry g(spec.grid);
  const int n = spec.grid;
  const std::size_t total = static_cast<std::size_t>(n) * n * n;
  std::mt19937_64 rng(plan.render_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise_sd);

  // per-exam ventricle: +-8% anatomical jitter, dilated when positive
  Ellipsoid ventricle = g.ventricle_base;
  for (int a = 0; a < 3; ++a)
    ventricle.semi[a] *= 0.92 + 0.16 * unit(rng);
  if (plan.label)
    for (int a = 0; a < 3; ++a) ventricle.semi[a] += spec.channel1_effect_mm;

  // periventricular blobs for positives (channel 2 signal)
  struct Blob {
    Vec3 center;
    double radius;
  };
  std::vector<Blob> blobs;
  if (plan.label && spec.channel2_effect > 0) {
    const int count = 3 + static_cast<int>(unit(rng) * 4.0);  // 3..6
    for (int b = 0; b < count; ++b) {
      // random direction, placed on a shell just outside the ventricle
      for (int attempt = 0; attempt < 50; ++attempt) {
        const double u = 2.0 * unit(rng) - 1.0;
        const double phi = 2.0 * M_PI * unit(rng);
        const double s = std::sqrt(1.0 - u * u);
        const Vec3 dir = {s * std::cos(phi), s * std::sin(phi), u};
        const double push = 1.5 + 3.0 * unit(rng);  // mm beyond the surface
        Vec3 c;
        for (int a = 0; a < 3; ++a)
          c[a] = ventricle.center[a] + dir[a] * (ventricle.semi[a] + push);
        if (g.brain.rho(c[0], c[1], c[2]) < 0.55) {
          blobs.push_back({c, 2.0 + 2.0 * unit(rng)});
          break;
        }
      }
    }
  }

  std::vector<double> t1(total), flair(total), pet(total);
  std::size_t i = 0;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x, ++i) {
        const bool in_brain = g.brain.contains(x, y, z);
        const bool in_vent = in_brain && ventricle.contains(x, y, z);
        const double rho = g.brain.rho(x, y, z);

        double t1v = 0.02, flv = 0.02, petv = 0.0;
        if (in_brain) {
          t1v = in_vent ? 0.15 : 0.75 * (1.0 - 0.15 * rho * rho);
          flv = in_vent ? 0.08 : 0.45;
          petv = 1.0;
          const bool in_target = rho >= 0.62 && rho <= 0.88 && z < g.z_split;
          if (in_target) petv = plan.suvr;
        }
        if (!in_vent)
          for (const auto& b : blobs) {
            const double dx = x - b.center[0], dy = y - b.center[1],
                         dz = z - b.center[2];
            if (dx * dx + dy * dy + dz * dz <= b.radius * b.radius) {
              flv = 0.45 + 0.5 * spec.channel2_effect;
              break;
            }
          }
        t1[i] = std::max(0.0, t1v + noise(rng));
        flair[i] = std::max(0.0, flv + noise(rng));
        pet[i] = std::max(0.0, petv + 0.5 * noise(rng));
      }

  PhantomExamVolumes out;
  out.t1w = Volume3D::axis_aligned({n, n, n}, {1, 1, 1}, std::move(t1), "LPI");
  out.flair =
      Volume3D::axis_aligned({n, n, n}, {1, 1, 1}, std::move(flair), "LPI");
  out.pet = Volume3D::axis_aligned({n, n, n}, {1, 1, 1}, std::move(pet), "LPI");
  return out;
}

namespace {

PhantomCohort cohort_from_plans(const PhantomSpec& spec,
                                const std::vector<PhantomExamPlan>& plans) {
  PhantomCohort cohort;
  for (const auto& p : plans) {
    ExamRecord r;
    r.subject_id = p.subject_id;
    r.exam_date = p.exam_date;
    const std::string base = p.subject_id + "/" + p.exam_date.iso() + "/";
    r.t1w_path = base + "t1w.nii.gz";
    r.flair_path = base + "flair.nii.gz";
    r.pet_path = base + "pet.nii.gz";
    r.tracer = p.tracer;
    r.age = p.age;
    r.sex = p.sex;
    r.cognitive_status = p.cognitive_status;
    r.dataset = spec.dataset;
    cohort.records.push_back(std::move(r));

    cohort.truth.push_back({p.subject_id, p.exam_date, p.label, p.centiloid,
                            p.suvr, p.tracer});
  }
  return cohort;
}

}  // namespace

PhantomCohort plan_cohort_records(const PhantomSpec& spec) {
  return cohort_from_plans(spec, plan_cohort(spec));
}

PhantomCohort write_cohort(const PhantomSpec& spec, const std::string& root,
                           const std::string& provenance_comment) {
  namespace fs = std::filesystem;
  const auto plans = plan_cohort(spec);
  auto cohort = cohort_from_plans(spec, plans);

  for (const auto& p : plans) {
    const auto volumes = render_exam(spec, p);
    const fs::path dir = fs::path(root) / p.subject_id / p.exam_date.iso();
    fs::create_directories(dir);
    write_nifti_file(volumes.t1w, (dir / "t1w.nii.gz").string(),
                     NiftiDatatype::Float32, provenance_comment);
    write_nifti_file(volumes.flair, (dir / "flair.nii.gz").string(),
                     NiftiDatatype::Float32, provenance_comment);
    write_nifti_file(volumes.pet, (dir / "pet.nii.gz").string(),
                     NiftiDatatype::Float32, provenance_comment);
  }

  const auto masks = make_masks(spec);
  write_nifti_file(masks.target.volume(), (fs::path(root) / "target_mask.nii.gz").string(),
                   NiftiDatatype::Uint8, provenance_comment);
  write_nifti_file(masks.reference.volume(),
                   (fs::path(root) / "reference_mask.nii.gz").string(),
                   NiftiDatatype::Uint8, provenance_comment);

  write_manifest(cohort.records, (fs::path(root) / "manifest.tsv").string(),
                 provenance_comment);

  std::ofstream truth((fs::path(root) / "truth.tsv").string(), std::ios::trunc);
  if (!truth) throw Error(ErrorCode::IoError, "cannot write truth table");
  if (!provenance_comment.empty()) truth << "# " << provenance_comment << "\n";
  truth << "subject_id\tdate\tlabel\tcentiloid\tsuvr\ttracer\n";
  char num[64];
  for (const auto& t : cohort.truth) {
    std::snprintf(num, sizeof(num), "%.17g\t%.17g", t.centiloid, t.suvr);
    truth << t.subject_id << '\t' << t.exam_date.iso() << '\t' << t.label << '\t'
          << num << '\t' << tracer_to_string(t.tracer) << "\n";
  }
  return cohort;
}

}  // namespace nq
