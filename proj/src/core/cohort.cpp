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

#include "core/cohort.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "core/error.h"
#include "core/metrics.h"
#include "core/rng.h"

namespace nq {

namespace {

constexpr const char* kMissing = "-";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, '\t')) out.push_back(cell);
  if (!line.empty() && line.back() == '\t') out.push_back("");
  return out;
}

// subjects sorted by id then shuffled with a derived seed, so the split is
// independent of manifest row order
std::vector<std::string> shuffled_subjects(const std::set<std::string>& ids,
                                           std::uint64_t seed,
                                           const std::string& tag) {
  std::vector<std::string> v(ids.begin(), ids.end());
  auto rng = make_rng(seed, tag);
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

}  // namespace

// Howard Hinnant's civil-calendar algorithms.
std::int64_t CivilDate::day_number() const {
  int y = year;
  const unsigned m = static_cast<unsigned>(month);
  const unsigned d = static_cast<unsigned>(day);
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<std::int64_t>(era) * 146097 + doe - 719468;
}

CivilDate CivilDate::parse(const std::string& iso) {
  CivilDate d;
  char dash1 = 0, dash2 = 0;
  std::istringstream ss(iso);
  if (!(ss >> d.year >> dash1 >> d.month >> dash2 >> d.day) || dash1 != '-' ||
      dash2 != '-' || d.month < 1 || d.month > 12 || d.day < 1 || d.day > 31)
    throw Error(ErrorCode::SchemaError, "bad date '" + iso + "'");
  return d;
}

std::string CivilDate::iso() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
  return buf;
}

std::string sex_to_string(Sex s) { return s == Sex::Male ? "M" : "F"; }

Sex sex_from_string(const std::string& s) {
  if (s == "M" || s == "male" || s == "Male") return Sex::Male;
  if (s == "F" || s == "female" || s == "Female") return Sex::Female;
  throw Error(ErrorCode::SchemaError, "bad sex '" + s + "'");
}

std::string cognitive_to_string(CognitiveStatus s) {
  switch (s) {
    case CognitiveStatus::CN: return "CN";
    case CognitiveStatus::MCI: return "MCI";
    case CognitiveStatus::Dementia: return "dementia";
  }
  return "CN";
}

CognitiveStatus cognitive_from_string(const std::string& s) {
  if (s == "CN" || s == "cn") return CognitiveStatus::CN;
  if (s == "MCI" || s == "mci") return CognitiveStatus::MCI;
  if (s == "dementia" || s == "Dementia") return CognitiveStatus::Dementia;
  throw Error(ErrorCode::SchemaError, "bad cognitive status '" + s + "'");
}

std::string partition_to_string(Partition p) {
  switch (p) {
    case Partition::Train: return "train";
    case Partition::Validation: return "validation";
    case Partition::Test: return "test";
    case Partition::Unassigned: return kMissing;
  }
  return kMissing;
}

Partition partition_from_string(const std::string& s) {
  if (s == "train") return Partition::Train;
  if (s == "validation") return Partition::Validation;
  if (s == "test") return Partition::Test;
  if (s == kMissing || s.empty()) return Partition::Unassigned;
  throw Error(ErrorCode::SchemaError, "bad partition '" + s + "'");
}

std::vector<ExamRecord> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot open manifest " + path);
  std::string line;
  std::vector<std::string> header;
  std::map<std::string, std::size_t> col;
  std::vector<ExamRecord> out;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_tabs(line);
    if (header.empty()) {
      header = cells;
      for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
      for (const char* required :
           {"subject_id", "date", "t1w_path", "flair_path", "pet_path",
            "tracer", "age", "sex", "cognitive_status", "dataset"})
        if (!col.count(required))
          throw Error(ErrorCode::SchemaError,
                      std::string("manifest missing column '") + required + "'");
      continue;
    }
    if (cells.size() != header.size())
      throw Error(ErrorCode::SchemaError,
                  "manifest row " + std::to_string(lineno) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    auto cell = [&](const char* name) -> const std::string& {
      return cells[col.at(name)];
    };
    ExamRecord r;
    r.subject_id = cell("subject_id");
    r.exam_date = CivilDate::parse(cell("date"));
    r.t1w_path = cell("t1w_path") == kMissing ? "" : cell("t1w_path");
    r.flair_path = cell("flair_path") == kMissing ? "" : cell("flair_path");
    r.pet_path = cell("pet_path") == kMissing ? "" : cell("pet_path");
    r.tracer = tracer_from_string(cell("tracer"));
    r.age = std::stod(cell("age"));
    r.sex = sex_from_string(cell("sex"));
    r.cognitive_status = cognitive_from_string(cell("cognitive_status"));
    r.dataset = cell("dataset");
    if (col.count("centiloid") && cells[col.at("centiloid")] != kMissing)
      r.centiloid = std::stod(cells[col.at("centiloid")]);
    if (col.count("label") && cells[col.at("label")] != kMissing)
      r.label = std::stoi(cells[col.at("label")]);
    if (col.count("partition"))
      r.partition = partition_from_string(cells[col.at("partition")]);
    if (col.count("fold") && cells[col.at("fold")] != kMissing)
      r.fold = std::stoi(cells[col.at("fold")]);
    out.push_back(std::move(r));
  }
  if (header.empty())
    throw Error(ErrorCode::SchemaError, "manifest has no header row");
  return out;
}

void write_manifest(const std::vector<ExamRecord>& records,
                    const std::string& path,
                    const std::string& provenance_comment) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoError, "cannot create manifest " + path);
  const bool any_quant =
      std::any_of(records.begin(), records.end(),
                  [](const ExamRecord& r) { return r.centiloid || r.label; });
  const bool any_split = std::any_of(records.begin(), records.end(),
                                     [](const ExamRecord& r) {
                                       return r.partition != Partition::Unassigned ||
                                              r.fold.has_value();
                                     });
  if (!provenance_comment.empty()) f << "# " << provenance_comment << "\n";
  f << "subject_id\tdate\tt1w_path\tflair_path\tpet_path\ttracer\tage\tsex"
       "\tcognitive_status\tdataset";
  if (any_quant) f << "\tcentiloid\tlabel";
  if (any_split) f << "\tpartition\tfold";
  f << "\n";
  char num[64];
  for (const auto& r : records) {
    f << r.subject_id << '\t' << r.exam_date.iso() << '\t'
      << (r.t1w_path.empty() ? kMissing : r.t1w_path) << '\t'
      << (r.flair_path.empty() ? kMissing : r.flair_path) << '\t'
      << (r.pet_path.empty() ? kMissing : r.pet_path) << '\t'
      << tracer_to_string(r.tracer) << '\t';
    std::snprintf(num, sizeof(num), "%.6g", r.age);
    f << num << '\t' << sex_to_string(r.sex) << '\t'
      << cognitive_to_string(r.cognitive_status) << '\t' << r.dataset;
    if (any_quant) {
      if (r.centiloid) {
        std::snprintf(num, sizeof(num), "%.17g", *r.centiloid);
        f << '\t' << num;
      } else {
        f << '\t' << kMissing;
      }
      f << '\t' << (r.label ? std::to_string(*r.label) : kMissing);
    }
    if (any_split) {
      f << '\t' << partition_to_string(r.partition) << '\t'
        << (r.fold ? std::to_string(*r.fold) : kMissing);
    }
    f << "\n";
  }
  if (!f) throw Error(ErrorCode::IoError, "short write to " + path);
}

PairingResult pair_mri_pet(const std::vector<ExamRecord>& mri_exams,
                           const std::vector<ExamRecord>& pet_exams,
                           int window_days) {
  std::map<std::string, std::vector<const ExamRecord*>> pets_by_subject;
  for (const auto& p : pet_exams) pets_by_subject[p.subject_id].push_back(&p);

  PairingResult out;
  std::set<const ExamRecord*> used_pets;
  for (const auto& mri : mri_exams) {
    const auto it = pets_by_subject.find(mri.subject_id);
    const ExamRecord* best = nullptr;
    std::int64_t best_abs = 0;
    if (it != pets_by_subject.end()) {
      for (const ExamRecord* pet : it->second) {
        const std::int64_t delta =
            pet->exam_date.day_number() - mri.exam_date.day_number();
        const std::int64_t a = std::llabs(delta);
        if (a > window_days) continue;
        if (!best || a < best_abs ||
            (a == best_abs && pet->exam_date < best->exam_date)) {
          best = pet;
          best_abs = a;
        }
      }
    }
    if (!best) {
      ++out.unpaired_mri;
      continue;
    }
    used_pets.insert(best);
    ExamRecord r = mri;
    r.pet_path = best->pet_path;
    r.tracer = best->tracer;
    r.centiloid = best->centiloid;
    r.label = best->label;
    out.paired.push_back(std::move(r));
  }
  for (const auto& p : pet_exams)
    if (!used_pets.count(&p)) ++out.unpaired_pet;
  return out;
}

std::vector<ExamRecord> filter_date_window(const std::vector<ExamRecord>& records,
                                           const CivilDate& lo, const CivilDate& hi,
                                           std::size_t* excluded) {
  std::vector<ExamRecord> kept;
  std::size_t dropped = 0;
  for (const auto& r : records) {
    const auto d = r.exam_date.day_number();
    if (d < lo.day_number() || d > hi.day_number()) {
      ++dropped;
      continue;
    }
    kept.push_back(r);
  }
  if (excluded) *excluded = dropped;
  return kept;
}

std::vector<ExamRecord> split_cohort(const std::vector<ExamRecord>& records,
                                     const SplitFractions& fractions,
                                     std::uint64_t seed) {
  const double total = fractions.train + fractions.validation + fractions.test;
  if (std::abs(total - 1.0) > 1e-9)
    throw Error(ErrorCode::ConfigError, "split fractions must sum to 1");

  std::map<std::string, std::set<std::string>> subjects_by_dataset;
  std::map<std::string, std::size_t> exams_per_subject;
  for (const auto& r : records) {
    subjects_by_dataset[r.dataset].insert(r.subject_id);
    ++exams_per_subject[r.subject_id];
  }

  std::map<std::string, Partition> assignment;
  for (const auto& [dataset, subject_set] : subjects_by_dataset) {
    const std::size_t n = subject_set.size();
    if (n < 5)
      throw Error(ErrorCode::InsufficientSubjects,
                  "dataset '" + dataset + "' has only " + std::to_string(n) +
                      " subjects");
    const auto t_test = static_cast<std::size_t>(std::llround(fractions.test * n));
    const auto t_val =
        static_cast<std::size_t>(std::llround(fractions.validation * n));

    std::set<std::string> singles, multis;
    for (const auto& s : subject_set)
      (exams_per_subject[s] > 1 ? multis : singles).insert(s);

    // test subjects come from the single-exam pool only
    const auto test_order =
        shuffled_subjects(singles, seed, "split/test/" + dataset);
    const std::size_t n_test = std::min(t_test, test_order.size());
    std::set<std::string> rest = multis;
    for (std::size_t i = 0; i < test_order.size(); ++i) {
      if (i < n_test)
        assignment[test_order[i]] = Partition::Test;
      else
        rest.insert(test_order[i]);
    }

    const auto rest_order =
        shuffled_subjects(rest, seed, "split/trainval/" + dataset);
    for (std::size_t i = 0; i < rest_order.size(); ++i)
      assignment[rest_order[i]] =
          i < t_val ? Partition::Validation : Partition::Train;
  }

  std::vector<ExamRecord> out = records;
  for (auto& r : out) {
    r.partition = assignment.at(r.subject_id);
    r.fold.reset();
  }
  return out;
}

std::vector<ExamRecord> make_folds(const std::vector<ExamRecord>& records,
                                   int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::ConfigError, "fold count must be >= 2");
  std::set<std::string> train_subjects;
  for (const auto& r : records)
    if (r.partition == Partition::Train) train_subjects.insert(r.subject_id);
  if (train_subjects.size() < static_cast<std::size_t>(k))
    throw Error(ErrorCode::InsufficientSubjects,
                "need at least k training subjects for k folds");

  const auto order = shuffled_subjects(train_subjects, seed, "folds");
  std::map<std::string, int> fold_of;
  for (std::size_t i = 0; i < order.size(); ++i)
    fold_of[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));

  std::vector<ExamRecord> out = records;
  for (auto& r : out)
    if (r.partition == Partition::Train) r.fold = fold_of.at(r.subject_id);
  return out;
}

DemographicsTable demographics_table(const std::vector<ExamRecord>& records) {
  std::vector<double> age_pos, age_neg;
  DemographicsTable t;
  for (const auto& r : records) {
    if (!r.label) continue;
    DemographicsGroup& g = *r.label ? t.positive : t.negative;
    (*r.label ? age_pos : age_neg).push_back(r.age);
    ++g.n;
    (r.sex == Sex::Male ? g.male : g.female) += 1;
    switch (r.cognitive_status) {
      case CognitiveStatus::CN: ++g.cn; break;
      case CognitiveStatus::MCI: ++g.mci; break;
      case CognitiveStatus::Dementia: ++g.dementia; break;
    }
  }
  if (age_pos.size() < 2 || age_neg.size() < 2)
    throw Error(ErrorCode::DegenerateGroup,
                "both label groups need at least two exams");

  auto mean_sd = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / (static_cast<double>(v.size()) - 1.0));
  };
  mean_sd(age_pos, t.positive.age_mean, t.positive.age_sd);
  mean_sd(age_neg, t.negative.age_mean, t.negative.age_sd);

  t.p_age = welch_t_test_p(t.positive.age_mean, t.positive.age_sd, t.positive.n,
                           t.negative.age_mean, t.negative.age_sd, t.negative.n);
  t.p_sex = chi_square_p(
      {{static_cast<double>(t.positive.male), static_cast<double>(t.positive.female)},
       {static_cast<double>(t.negative.male), static_cast<double>(t.negative.female)}});
  t.p_cognitive = chi_square_p({{static_cast<double>(t.positive.cn),
                                 static_cast<double>(t.positive.mci),
                                 static_cast<double>(t.positive.dementia)},
                                {static_cast<double>(t.negative.cn),
                                 static_cast<double>(t.negative.mci),
                                 static_cast<double>(t.negative.dementia)}});
  return t;
}

}  // namespace nq
