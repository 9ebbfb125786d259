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

#ifndef NEUROQUANT_CORE_PHANTOM_H
#define NEUROQUANT_CORE_PHANTOM_H

#include <cstdint>
#include <string>
#include <vector>

#include "core/cohort.h"
#include "core/volume.h"

namespace nq {

// Deterministic synthetic cohort generator. Each subject gets an
// ellipsoidal "brain" with a central "ventricle"; amyloid-positive subjects
// receive (a) ventricle dilation in channel 1 scaled by channel1_effect_mm
// and (b) bright periventricular blobs in channel 2 scaled by
// channel2_effect (3-6 blobs, radius 2-4 voxels, on a shell just outside
// the ventricle). The PET volume's cortical-shell uptake is drawn so that
// SUVR -> centiloid -> cutoff reproduces the intended label under the
// configured calibration.
struct PhantomSpec {
  int n_subjects = 200;
  int grid = 32;                    // cubic volumes at 1 mm spacing, LPI
  double positive_fraction = 0.55;
  double channel1_effect_mm = 1.5;  // ventricle dilation for positives
  double channel2_effect = 1.0;     // blob intensity scale for positives
  double noise_sd = 0.02;
  double longitudinal_fraction = 0.15;  // subjects with >1 exam
  std::uint64_t seed = 0;
  std::string dataset = "phantom";
  // "mixed" alternates FBB/FBP per subject; "FBB"/"FBP" pin one tracer
  std::string tracer_mode = "mixed";

  void validate() const;
};

// Ground truth for one generated exam (what the volumes were built to mean).
struct PhantomTruth {
  std::string subject_id;
  CivilDate exam_date;
  int label = 0;
  double centiloid = 0;
  double suvr = 0;
  Tracer tracer = Tracer::FBB;
};

// Everything about one exam except voxel data.
struct PhantomExamPlan {
  std::string subject_id;
  int exam_index = 0;
  CivilDate exam_date;
  int label = 0;
  Tracer tracer = Tracer::FBB;
  double centiloid = 0;
  double suvr = 0;
  double age = 0;
  Sex sex = Sex::Female;
  CognitiveStatus cognitive_status = CognitiveStatus::CN;
  std::uint64_t render_seed = 0;  // per-exam noise/geometry stream
};

struct PhantomExamVolumes {
  Volume3D t1w;
  Volume3D flair;
  Volume3D pet;
};

// Deterministic cohort plan: exam metadata, labels, and intended
// quantification values (no voxel data).
std::vector<PhantomExamPlan> plan_cohort(const PhantomSpec& spec);

// Deterministic voxel rendering of one planned exam.
PhantomExamVolumes render_exam(const PhantomSpec& spec,
                               const PhantomExamPlan& plan);

// The shared atlas masks on the phantom grid: cortical-shell target and
// lower "cerebellum" reference (disjoint by construction).
struct PhantomMasks {
  BrainMask target;
  BrainMask reference;
};
PhantomMasks make_masks(const PhantomSpec& spec);

struct PhantomCohort {
  std::vector<ExamRecord> records;  // manifest rows (paths relative to root)
  std::vector<PhantomTruth> truth;
};

// Writes volumes (<subject>/<date>/{t1w,flair,pet}.nii.gz), the two mask
// files, a manifest, and a ground-truth table under root. Bit-identical
// output for a fixed spec.
PhantomCohort write_cohort(const PhantomSpec& spec, const std::string& root,
                           const std::string& provenance_comment = "");

// Plan + records without touching the filesystem.
PhantomCohort plan_cohort_records(const PhantomSpec& spec);

}  // namespace nq

#endif
