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

#ifndef NEUROQUANT_CORE_PIPELINE_H
#define NEUROQUANT_CORE_PIPELINE_H

#include <map>
#include <optional>
#include <string>

#include "core/cohort.h"
#include "core/phantom.h"
#include "core/quant.h"
#include "core/registration.h"
#include "core/report.h"
#include "core/train.h"

namespace nq {

// One structured config drives every stage. JSON on disk; flags override.
struct RunConfig {
  std::uint64_t seed = 0;
  int jobs = 1;
  bool force = false;
  std::string data_root = "data";
  std::string output_root = "out";
  std::string manifest;  // defaults to <data_root>/manifest.tsv

  PhantomSpec synth;

  struct Preprocess {
    double target_spacing_mm = 1.0;
    double lo_percentile = 5.0;
    double hi_percentile = 95.0;
    double closing_radius_mm = 2.0;
    bool skip_registration = false;
    RegistrationConfig registration;
  } preprocess;

  struct Quant {
    std::string target_mask;     // defaults to <data_root>/target_mask.nii.gz
    std::string reference_mask;  // defaults to <data_root>/reference_mask.nii.gz
    std::map<std::string, TracerCalibration> profiles;  // name -> calibration
    std::map<std::string, std::string> profile_by_tracer;
  } quant;

  struct Split {
    SplitFractions fractions;
    int folds = 5;
    CivilDate window_lo{2010, 1, 1};
    CivilDate window_hi{2023, 12, 31};
  } split;

  NetworkConfig network = NetworkConfig::make_preset("tiny", 2);
  TrainingConfig training;

  struct Evaluate {
    int bootstrap = 2000;
    std::optional<double> threshold;  // unset: Youden on the input scores
  } evaluate;

  struct Occlude {
    int kernel = 7;
    int stride = 2;
    std::string checkpoint;  // defaults to <output_root>/train/fold0.ckpt
    std::string exam_id;     // empty: first test exam in the split manifest
    bool mask_all_channels = true;
  } occlude;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_json_file(const std::string& path);
  std::string canonical_json() const;
  std::string config_hash() const;  // 16-hex-digit FNV-1a of canonical_json
  std::string provenance() const;   // "config=<hash> seed=<s> version=<v>"

  // derived artifact paths
  std::string manifest_in() const;
  std::string quant_manifest() const;
  std::string split_manifest() const;
  std::string processed_dir() const;
  std::string train_dir() const;

  // resolved calibration for a tracer (built-in profiles: fbp, fbb, oasis3)
  TracerCalibration calibration_for(Tracer tracer) const;
};

struct StageSummary {
  int processed = 0;
  int skipped = 0;
  int failed = 0;
};

// synth: write a phantom cohort (volumes, masks, manifest, truth table)
// under data_root.
void run_synth(const RunConfig& cfg);

// preprocess: reorient -> register FLAIR to T1w -> extract brain ->
// resample isotropic -> percentile-normalize; per-exam provenance records;
// idempotent unless force. Per-exam failures are logged and skipped; throws
// only when every exam fails.
StageSummary run_preprocess(const RunConfig& cfg);

// quant: SUVR -> centiloid -> status per exam; writes the quantified
// manifest and a per-exam JSON report.
StageSummary run_quant(const RunConfig& cfg);

// split: date-window filter, optional MRI/PET pairing, subject-level
// split + folds; writes the split manifest.
void run_split(const RunConfig& cfg);

// train: 5-fold CV on preprocessed volumes; writes checkpoints, the epoch
// log, aggregated validation/test score tables, and a training summary with
// the Youden threshold from the validation scores.
void run_train(const RunConfig& cfg);

// evaluate one score table (global + cognitive-status subgroups).
MetricsReport run_evaluate(const RunConfig& cfg, const std::string& scores_path,
                           const std::string& out_prefix);

// compare two models' score tables on the same exams.
MetricsReport run_compare(const RunConfig& cfg, const std::string& scores_a,
                          const std::string& scores_b,
                          const std::string& out_prefix);

// occlusion map + case report for one exam.
void run_occlude(const RunConfig& cfg);

}  // namespace nq

#endif
