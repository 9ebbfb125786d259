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

#ifndef NEUROQUANT_CORE_COHORT_H
#define NEUROQUANT_CORE_COHORT_H

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/quant.h"

namespace nq {

// Proleptic Gregorian calendar date with an absolute day number for
// arithmetic.
struct CivilDate {
  int year = 1970;
  int month = 1;
  int day = 1;

  static CivilDate parse(const std::string& iso);  // "YYYY-MM-DD"
  std::string iso() const;
  std::int64_t day_number() const;  // days since 1970-01-01

  bool operator==(const CivilDate& o) const {
    return year == o.year && month == o.month && day == o.day;
  }
  bool operator<(const CivilDate& o) const {
    return day_number() < o.day_number();
  }
};

enum class Sex { Male, Female };
enum class CognitiveStatus { CN, MCI, Dementia };
enum class Partition { Unassigned, Train, Validation, Test };

std::string sex_to_string(Sex s);
Sex sex_from_string(const std::string& s);
std::string cognitive_to_string(CognitiveStatus s);
CognitiveStatus cognitive_from_string(const std::string& s);
std::string partition_to_string(Partition p);
Partition partition_from_string(const std::string& s);

// One subject visit. Paths are relative to the manifest's data root.
// centiloid/label appear once the quant stage has run; partition/fold once
// the split stage has run.
struct ExamRecord {
  std::string subject_id;
  CivilDate exam_date;
  std::string t1w_path;
  std::string flair_path;
  std::string pet_path;
  Tracer tracer = Tracer::Custom;
  double age = 0;
  Sex sex = Sex::Female;
  CognitiveStatus cognitive_status = CognitiveStatus::CN;
  std::string dataset = "default";
  std::optional<double> centiloid;
  std::optional<int> label;  // 1 = amyloid positive
  Partition partition = Partition::Unassigned;
  std::optional<int> fold;
};

// Tab-separated manifest with a header row; '#' lines are comments.
// Base columns: subject_id date t1w_path flair_path pet_path tracer age sex
// cognitive_status dataset. Optional columns (centiloid label partition
// fold) are written when any record carries them; missing cells hold "-".
std::vector<ExamRecord> read_manifest(const std::string& path);
void write_manifest(const std::vector<ExamRecord>& records,
                    const std::string& path,
                    const std::string& provenance_comment = "");

struct PairingResult {
  std::vector<ExamRecord> paired;
  std::size_t unpaired_mri = 0;
  std::size_t unpaired_pet = 0;
};

// Pair each MRI exam with its subject's nearest-in-time PET exam within
// window_days (inclusive); ties resolve to the earlier PET. Unpaired exams
// of either kind are excluded and counted, never an error.
PairingResult pair_mri_pet(const std::vector<ExamRecord>& mri_exams,
                           const std::vector<ExamRecord>& pet_exams,
                           int window_days = 30);

// Inclusion window filter (paper cohorts span 2010-2023); returns kept
// records, increments excluded.
std::vector<ExamRecord> filter_date_window(const std::vector<ExamRecord>& records,
                                           const CivilDate& lo, const CivilDate& hi,
                                           std::size_t* excluded = nullptr);

struct SplitFractions {
  double train = 0.64;
  double validation = 0.16;
  double test = 0.20;
};

// Subject-level random split, independently per dataset. Subjects with more
// than one exam are never assigned to test. Partition sizes land within one
// subject of the fractional targets. Deterministic given the seed.
// Returns records with partition populated.
std::vector<ExamRecord> split_cohort(const std::vector<ExamRecord>& records,
                                     const SplitFractions& fractions,
                                     std::uint64_t seed);

// Subject-level k-fold partition of the training records; fold labels are
// written onto the returned copies of train-partition records (other
// partitions pass through untouched).
std::vector<ExamRecord> make_folds(const std::vector<ExamRecord>& records,
                                   int k, std::uint64_t seed);

struct DemographicsGroup {
  std::size_t n = 0;
  double age_mean = 0;
  double age_sd = 0;
  std::size_t male = 0;
  std::size_t female = 0;
  std::size_t cn = 0;
  std::size_t mci = 0;
  std::size_t dementia = 0;
};

struct DemographicsTable {
  DemographicsGroup positive;
  DemographicsGroup negative;
  double p_age = 1;
  double p_sex = 1;
  double p_cognitive = 1;
};

// Stratifies labeled exams by amyloid status; Welch t for age, Pearson
// chi-square (no continuity correction) for sex and cognitive status.
DemographicsTable demographics_table(const std::vector<ExamRecord>& records);

}  // namespace nq

#endif
