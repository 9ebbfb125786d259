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

#include "core/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include "core/error.h"
#include "core/metrics.h"
#include "core/nifti_io.h"
#include "core/occlusion.h"
#include "core/rng.h"

namespace nq {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string version_string() { return NEUROQUANT_VERSION; }

std::map<std::string, TracerCalibration> builtin_profiles() {
  return {{"fbp", TracerCalibration::fbp_default()},
          {"fbb", TracerCalibration::fbb_default()},
          {"oasis3", TracerCalibration::oasis3_default()}};
}

TracerCalibration calibration_from_json(const json& j) {
  TracerCalibration cal;
  cal.tracer = tracer_from_string(j.value("tracer", std::string("custom")));
  cal.slope = j.at("slope").get<double>();
  cal.intercept = j.at("intercept").get<double>();
  cal.cutoff_cl = j.at("cutoff").get<double>();
  cal.validate();
  return cal;
}

json calibration_to_json(const TracerCalibration& cal) {
  return {{"tracer", tracer_to_string(cal.tracer)},
          {"slope", cal.slope},
          {"intercept", cal.intercept},
          {"cutoff", cal.cutoff_cl}};
}

// ensure the directory of a file path exists
void ensure_parent(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text_file(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoError, "cannot create " + path);
  f << text;
  if (!f) throw Error(ErrorCode::IoError, "short write to " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

RunConfig RunConfig::from_json_file(const std::string& path) {
  try {
    return from_json_text(read_text_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::IoError)
      throw Error(ErrorCode::ConfigError, "cannot read config " + path);
    throw;
  }
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("bad config JSON: ") + e.what());
  }
  RunConfig cfg;
  try {
    cfg.seed = j.value("seed", 0ULL);
    cfg.jobs = j.value("jobs", 1);
    cfg.data_root = j.value("data_root", std::string("data"));
    cfg.output_root = j.value("output_root", std::string("out"));
    cfg.manifest = j.value("manifest", std::string());

    if (j.contains("synth")) {
      const auto& s = j["synth"];
      cfg.synth.n_subjects = s.value("n_subjects", cfg.synth.n_subjects);
      cfg.synth.grid = s.value("grid", cfg.synth.grid);
      cfg.synth.positive_fraction =
          s.value("positive_fraction", cfg.synth.positive_fraction);
      cfg.synth.channel1_effect_mm =
          s.value("channel1_effect_mm", cfg.synth.channel1_effect_mm);
      cfg.synth.channel2_effect =
          s.value("channel2_effect", cfg.synth.channel2_effect);
      cfg.synth.noise_sd = s.value("noise_sd", cfg.synth.noise_sd);
      cfg.synth.longitudinal_fraction =
          s.value("longitudinal_fraction", cfg.synth.longitudinal_fraction);
      cfg.synth.dataset = s.value("dataset", cfg.synth.dataset);
      cfg.synth.tracer_mode = s.value("tracer_mode", cfg.synth.tracer_mode);
    }
    cfg.synth.seed = cfg.seed;

    if (j.contains("preprocess")) {
      const auto& p = j["preprocess"];
      cfg.preprocess.target_spacing_mm =
          p.value("target_spacing_mm", cfg.preprocess.target_spacing_mm);
      cfg.preprocess.lo_percentile =
          p.value("lo_percentile", cfg.preprocess.lo_percentile);
      cfg.preprocess.hi_percentile =
          p.value("hi_percentile", cfg.preprocess.hi_percentile);
      cfg.preprocess.closing_radius_mm =
          p.value("closing_radius_mm", cfg.preprocess.closing_radius_mm);
      cfg.preprocess.skip_registration =
          p.value("skip_registration", cfg.preprocess.skip_registration);
      if (p.contains("registration")) {
        const auto& r = p["registration"];
        cfg.preprocess.registration.max_sweeps_per_level =
            r.value("max_sweeps_per_level",
                    cfg.preprocess.registration.max_sweeps_per_level);
        cfg.preprocess.registration.param_tolerance = r.value(
            "param_tolerance", cfg.preprocess.registration.param_tolerance);
        cfg.preprocess.registration.max_samples_per_level =
            r.value("max_samples_per_level",
                    cfg.preprocess.registration.max_samples_per_level);
      }
    }

    cfg.quant.profiles = builtin_profiles();
    cfg.quant.profile_by_tracer = {{"FBB", "fbb"}, {"FBP", "fbp"},
                                   {"custom", "oasis3"}};
    if (j.contains("quant")) {
      const auto& q = j["quant"];
      cfg.quant.target_mask = q.value("target_mask", std::string());
      cfg.quant.reference_mask = q.value("reference_mask", std::string());
      if (q.contains("profiles"))
        for (const auto& [name, pj] : q["profiles"].items())
          cfg.quant.profiles[name] = calibration_from_json(pj);
      if (q.contains("profile_by_tracer"))
        for (const auto& [tracer, name] : q["profile_by_tracer"].items())
          cfg.quant.profile_by_tracer[tracer] = name.get<std::string>();
    }

    if (j.contains("split")) {
      const auto& s = j["split"];
      if (s.contains("fractions")) {
        const auto f = s["fractions"].get<std::vector<double>>();
        if (f.size() != 3)
          throw Error(ErrorCode::ConfigError, "split.fractions needs 3 entries");
        cfg.split.fractions = {f[0], f[1], f[2]};
      }
      cfg.split.folds = s.value("folds", cfg.split.folds);
      if (s.contains("date_window")) {
        const auto w = s["date_window"].get<std::vector<std::string>>();
        if (w.size() != 2)
          throw Error(ErrorCode::ConfigError, "split.date_window needs 2 dates");
        cfg.split.window_lo = CivilDate::parse(w[0]);
        cfg.split.window_hi = CivilDate::parse(w[1]);
      }
    }

    if (j.contains("network")) {
      const auto& n = j["network"];
      if (n.contains("preset")) {
        cfg.network = NetworkConfig::make_preset(
            n["preset"].get<std::string>(), n.value("in_channels", 2));
        if (n.contains("input_grid"))
          cfg.network.input_grid = n["input_grid"].get<int>();
      } else {
        cfg.network = NetworkConfig::from_json_text(n.dump());
      }
      cfg.network.validate();
    }

    if (j.contains("training")) {
      const auto& t = j["training"];
      cfg.training.epochs = t.value("epochs", cfg.training.epochs);
      cfg.training.batch_size = t.value("batch_size", cfg.training.batch_size);
      cfg.training.lr_max = t.value("lr_max", cfg.training.lr_max);
      cfg.training.warmup_epochs =
          t.value("warmup_epochs", cfg.training.warmup_epochs);
      cfg.training.aug_max_angle_rad =
          t.value("aug_max_angle_rad", cfg.training.aug_max_angle_rad);
      cfg.training.aug_per_axis_prob =
          t.value("aug_per_axis_prob", cfg.training.aug_per_axis_prob);
      cfg.training.n_folds = t.value("folds", cfg.training.n_folds);
      cfg.training.checkpoint_selection =
          t.value("selection", cfg.training.checkpoint_selection);
      cfg.training.validate();
    }
    cfg.training.seed = cfg.seed;

    if (j.contains("evaluate")) {
      const auto& e = j["evaluate"];
      cfg.evaluate.bootstrap = e.value("bootstrap", cfg.evaluate.bootstrap);
      if (e.contains("threshold") && !e["threshold"].is_null())
        cfg.evaluate.threshold = e["threshold"].get<double>();
    }

    if (j.contains("occlude")) {
      const auto& o = j["occlude"];
      cfg.occlude.kernel = o.value("kernel", cfg.occlude.kernel);
      cfg.occlude.stride = o.value("stride", cfg.occlude.stride);
      cfg.occlude.checkpoint = o.value("checkpoint", std::string());
      cfg.occlude.exam_id = o.value("exam_id", std::string());
      cfg.occlude.mask_all_channels =
          o.value("mask_all_channels", cfg.occlude.mask_all_channels);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("bad config value: ") + e.what());
  }
  return cfg;
}

std::string RunConfig::canonical_json() const {
  json j;
  j["seed"] = seed;
  j["data_root"] = data_root;
  j["output_root"] = output_root;
  j["manifest"] = manifest_in();
  j["synth"] = {{"n_subjects", synth.n_subjects},
                {"grid", synth.grid},
                {"positive_fraction", synth.positive_fraction},
                {"channel1_effect_mm", synth.channel1_effect_mm},
                {"channel2_effect", synth.channel2_effect},
                {"noise_sd", synth.noise_sd},
                {"longitudinal_fraction", synth.longitudinal_fraction},
                {"dataset", synth.dataset},
                {"tracer_mode", synth.tracer_mode}};
  j["preprocess"] = {{"target_spacing_mm", preprocess.target_spacing_mm},
                     {"lo_percentile", preprocess.lo_percentile},
                     {"hi_percentile", preprocess.hi_percentile},
                     {"closing_radius_mm", preprocess.closing_radius_mm},
                     {"skip_registration", preprocess.skip_registration}};
  json profiles;
  for (const auto& [name, cal] : quant.profiles)
    profiles[name] = calibration_to_json(cal);
  j["quant"] = {{"target_mask", quant.target_mask},
                {"reference_mask", quant.reference_mask},
                {"profiles", profiles},
                {"profile_by_tracer", quant.profile_by_tracer}};
  j["split"] = {{"fractions",
                 {split.fractions.train, split.fractions.validation,
                  split.fractions.test}},
                {"folds", split.folds},
                {"date_window", {split.window_lo.iso(), split.window_hi.iso()}}};
  j["network"] = json::parse(network.canonical_json());
  j["training"] = {{"epochs", training.epochs},
                   {"batch_size", training.batch_size},
                   {"lr_max", training.lr_max},
                   {"warmup_epochs", training.warmup_epochs},
                   {"aug_max_angle_rad", training.aug_max_angle_rad},
                   {"aug_per_axis_prob", training.aug_per_axis_prob},
                   {"folds", training.n_folds},
                   {"selection", training.checkpoint_selection}};
  j["evaluate"] = {{"bootstrap", evaluate.bootstrap}};
  if (evaluate.threshold) j["evaluate"]["threshold"] = *evaluate.threshold;
  j["occlude"] = {{"kernel", occlude.kernel},
                  {"stride", occlude.stride},
                  {"mask_all_channels", occlude.mask_all_channels}};
  return j.dump();
}

std::string RunConfig::config_hash() const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_json())));
  return buf;
}

std::string RunConfig::provenance() const {
  return "config=" + config_hash() + " seed=" + std::to_string(seed) +
         " version=" + version_string();
}

std::string RunConfig::manifest_in() const {
  return manifest.empty() ? data_root + "/manifest.tsv" : manifest;
}
std::string RunConfig::quant_manifest() const {
  return output_root + "/manifest_quant.tsv";
}
std::string RunConfig::split_manifest() const {
  return output_root + "/manifest_split.tsv";
}
std::string RunConfig::processed_dir() const {
  return output_root + "/processed";
}
std::string RunConfig::train_dir() const { return output_root + "/train"; }

TracerCalibration RunConfig::calibration_for(Tracer tracer) const {
  const std::string key = tracer_to_string(tracer);
  const auto name_it = quant.profile_by_tracer.find(key);
  if (name_it == quant.profile_by_tracer.end())
    throw Error(ErrorCode::ConfigError,
                "no calibration profile mapped for tracer " + key);
  const auto cal_it = quant.profiles.find(name_it->second);
  if (cal_it == quant.profiles.end())
    throw Error(ErrorCode::ConfigError,
                "calibration profile '" + name_it->second + "' is not defined");
  return cal_it->second;
}

// --- synth --------------------------------------------------------------------

void run_synth(const RunConfig& cfg) {
  PhantomSpec spec = cfg.synth;
  spec.seed = cfg.seed;
  write_cohort(spec, cfg.data_root, cfg.provenance());
}

// --- preprocess -----------------------------------------------------------------

StageSummary run_preprocess(const RunConfig& cfg) {
  const auto records = read_manifest(cfg.manifest_in());
  StageSummary summary;
  std::string first_error;
  for (const auto& r : records) {
    const std::string exam = r.subject_id + "/" + r.exam_date.iso();
    const fs::path out_dir = fs::path(cfg.processed_dir()) / r.subject_id /
                             r.exam_date.iso();
    const std::string provenance_path = (out_dir / "provenance.json").string();
    try {
      if (!cfg.force && fs::exists(provenance_path)) {
        const json prev = json::parse(read_text_file(provenance_path));
        if (prev.value("config_hash", std::string()) == cfg.config_hash()) {
          ++summary.skipped;
          continue;
        }
      }
      if (r.t1w_path.empty() || r.flair_path.empty())
        throw Error(ErrorCode::IoError, "exam lacks an MRI channel path");

      const auto t1 = reorient_to_lpi(
          read_nifti_file(cfg.data_root + "/" + r.t1w_path));
      const auto fl = reorient_to_lpi(
          read_nifti_file(cfg.data_root + "/" + r.flair_path));

      RigidTransform transform;
      double reg_mse = 0;
      bool converged = true;
      Volume3D fl_on_t1 = [&]() {
        if (cfg.preprocess.skip_registration) return resample_to_grid(fl, t1);
        const auto reg = rigid_register(fl, t1, cfg.preprocess.registration);
        transform = reg.transform;
        reg_mse = reg.final_mse;
        converged = reg.converged;
        return resample_through_rigid(fl, t1, reg.transform);
      }();

      const auto mask = extract_brain(
          t1, BrainExtractConfig{cfg.preprocess.closing_radius_mm});

      const auto t1_iso = resample_isotropic(t1, cfg.preprocess.target_spacing_mm);
      const auto fl_iso = resample_to_grid(fl_on_t1, t1_iso);
      const auto mask_iso = BrainMask::from_volume(
          resample_to_grid(mask.volume(), t1_iso), 0.5);

      const auto t1_pcts = mask_percentiles(t1_iso, mask_iso,
                                            cfg.preprocess.lo_percentile,
                                            cfg.preprocess.hi_percentile);
      const auto fl_pcts = mask_percentiles(fl_iso, mask_iso,
                                            cfg.preprocess.lo_percentile,
                                            cfg.preprocess.hi_percentile);
      const auto t1_norm = percentile_normalize(t1_iso, mask_iso,
                                                cfg.preprocess.lo_percentile,
                                                cfg.preprocess.hi_percentile);
      const auto fl_norm = percentile_normalize(fl_iso, mask_iso,
                                                cfg.preprocess.lo_percentile,
                                                cfg.preprocess.hi_percentile);

      fs::create_directories(out_dir);
      const std::string descrip = "nq " + cfg.provenance();
      write_nifti_file(t1_norm, (out_dir / "t1w.nii.gz").string(),
                       NiftiDatatype::Float32, descrip);
      write_nifti_file(fl_norm, (out_dir / "flair.nii.gz").string(),
                       NiftiDatatype::Float32, descrip);
      write_nifti_file(mask_iso.volume(), (out_dir / "mask.nii.gz").string(),
                       NiftiDatatype::Uint8, descrip);

      json prov;
      prov["config_hash"] = cfg.config_hash();
      prov["seed"] = cfg.seed;
      prov["version"] = version_string();
      prov["exam"] = exam;
      prov["registration"] = {
          {"rx", transform.rx}, {"ry", transform.ry}, {"rz", transform.rz},
          {"tx", transform.tx}, {"ty", transform.ty}, {"tz", transform.tz},
          {"mse", reg_mse},     {"converged", converged},
          {"skipped", cfg.preprocess.skip_registration}};
      prov["percentiles"] = {
          {"t1w", {t1_pcts.first, t1_pcts.second}},
          {"flair", {fl_pcts.first, fl_pcts.second}},
          {"lo_pct", cfg.preprocess.lo_percentile},
          {"hi_pct", cfg.preprocess.hi_percentile}};
      write_text_file(provenance_path, prov.dump(2) + "\n");
      ++summary.processed;
    } catch (const std::exception& e) {
      ++summary.failed;
      if (first_error.empty()) first_error = e.what();
      std::cerr << "[preprocess] skipping " << exam << ": " << e.what() << "\n";
    }
  }
  if (summary.processed == 0 && summary.skipped == 0 && summary.failed > 0)
    throw Error(ErrorCode::IoError,
                "every exam failed preprocessing; first error: " + first_error);
  return summary;
}

// --- quant ----------------------------------------------------------------------

StageSummary run_quant(const RunConfig& cfg) {
  auto records = read_manifest(cfg.manifest_in());
  const std::string target_path = cfg.quant.target_mask.empty()
                                      ? cfg.data_root + "/target_mask.nii.gz"
                                      : cfg.quant.target_mask;
  const std::string reference_path =
      cfg.quant.reference_mask.empty()
          ? cfg.data_root + "/reference_mask.nii.gz"
          : cfg.quant.reference_mask;
  if (!fs::exists(target_path) || !fs::exists(reference_path))
    throw Error(ErrorCode::ConfigError,
                "quantification masks not found (target: " + target_path +
                    ", reference: " + reference_path + ")");
  const auto target =
      BrainMask::from_volume(reorient_to_lpi(read_nifti_file(target_path)), 0.5);
  const auto reference = BrainMask::from_volume(
      reorient_to_lpi(read_nifti_file(reference_path)), 0.5);

  // configuration problems surface before any compute
  {
    std::set<Tracer> tracers;
    for (const auto& r : records) tracers.insert(r.tracer);
    for (const Tracer t : tracers) cfg.calibration_for(t);
  }

  StageSummary summary;
  json per_exam = json::array();
  for (auto& r : records) {
    const std::string exam = r.subject_id + "/" + r.exam_date.iso();
    try {
      if (r.pet_path.empty())
        throw Error(ErrorCode::IoError, "exam lacks a PET path");
      const auto pet =
          reorient_to_lpi(read_nifti_file(cfg.data_root + "/" + r.pet_path));
      const auto cal = cfg.calibration_for(r.tracer);
      const auto result = quantify(pet, target, reference, cal);
      r.centiloid = result.centiloid;
      r.label = result.status == AmyloidStatus::Positive ? 1 : 0;
      per_exam.push_back({{"exam", exam},
                          {"tracer", tracer_to_string(r.tracer)},
                          {"suvr", result.suvr},
                          {"centiloid", result.centiloid},
                          {"label", *r.label}});
      ++summary.processed;
    } catch (const std::exception& e) {
      ++summary.failed;
      std::cerr << "[quant] skipping " << exam << ": " << e.what() << "\n";
    }
  }
  if (summary.processed == 0)
    throw Error(ErrorCode::IoError, "every exam failed quantification");

  ensure_parent(cfg.quant_manifest());
  write_manifest(records, cfg.quant_manifest(), cfg.provenance());
  json report;
  report["meta"] = {{"config_hash", cfg.config_hash()},
                    {"seed", cfg.seed},
                    {"version", version_string()}};
  report["exams"] = per_exam;
  write_text_file(cfg.output_root + "/quant_report.json", report.dump(2) + "\n");
  return summary;
}

// --- split ----------------------------------------------------------------------

void run_split(const RunConfig& cfg) {
  const std::string source = fs::exists(cfg.quant_manifest())
                                 ? cfg.quant_manifest()
                                 : cfg.manifest_in();
  auto records = read_manifest(source);

  // separate-modality manifests get paired first
  const bool any_unpaired =
      std::any_of(records.begin(), records.end(), [](const ExamRecord& r) {
        return r.pet_path.empty() || r.t1w_path.empty();
      });
  if (any_unpaired) {
    std::vector<ExamRecord> mri, pet;
    for (const auto& r : records)
      (r.t1w_path.empty() ? pet : mri).push_back(r);
    const auto pairing = pair_mri_pet(mri, pet);
    std::cerr << "[split] paired " << pairing.paired.size() << " exams ("
              << pairing.unpaired_mri << " MRI and " << pairing.unpaired_pet
              << " PET unpaired)\n";
    records = pairing.paired;
  }

  std::size_t excluded = 0;
  records = filter_date_window(records, cfg.split.window_lo, cfg.split.window_hi,
                               &excluded);
  if (excluded)
    std::cerr << "[split] excluded " << excluded << " exams outside "
              << cfg.split.window_lo.iso() << ".." << cfg.split.window_hi.iso()
              << "\n";

  auto split = split_cohort(records, cfg.split.fractions, cfg.seed);
  split = make_folds(split, cfg.split.folds, cfg.seed);
  ensure_parent(cfg.split_manifest());
  write_manifest(split, cfg.split_manifest(), cfg.provenance());
}

// --- train ----------------------------------------------------------------------

namespace {

// channels resampled onto the network's cubic grid, spanning the source
// volume's world extent
Volume3D to_network_grid(const Volume3D& vol, int grid) {
  if (vol.nx() == grid && vol.ny() == grid && vol.nz() == grid) return vol;
  Mat4 target_affine = vol.affine();
  for (int col = 0; col < 3; ++col) {
    const Vec3 column = vol.affine().column3(col);
    const double scale = static_cast<double>(vol.shape()[col]) / grid;
    for (int row = 0; row < 3; ++row)
      target_affine.m[row][col] = column[row] * scale;
  }
  return resample_to_grid(
      vol, Volume3D::create({grid, grid, grid}, target_affine,
                            std::vector<double>(static_cast<std::size_t>(grid) *
                                                grid * grid)));
}

std::vector<TrainSample> load_train_samples(const RunConfig& cfg,
                                            const std::vector<ExamRecord>& records) {
  std::vector<TrainSample> samples;
  for (const auto& r : records) {
    if (r.partition == Partition::Unassigned) continue;
    if (!r.label)
      throw Error(ErrorCode::ConfigError,
                  "split manifest lacks labels; run quant before train");
    TrainSample s;
    s.exam_id = r.subject_id + "/" + r.exam_date.iso();
    s.subject_id = r.subject_id;
    s.label = *r.label;
    s.partition = r.partition;
    s.fold = r.fold.value_or(-1);
    const fs::path dir =
        fs::path(cfg.processed_dir()) / r.subject_id / r.exam_date.iso();
    const auto t1 = read_nifti_file((dir / "t1w.nii.gz").string());
    s.channels.push_back(to_network_grid(t1, cfg.network.input_grid));
    if (cfg.network.in_channels == 2) {
      const auto fl = read_nifti_file((dir / "flair.nii.gz").string());
      s.channels.push_back(to_network_grid(fl, cfg.network.input_grid));
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

std::map<std::string, const ExamRecord*> record_index(
    const std::vector<ExamRecord>& records) {
  std::map<std::string, const ExamRecord*> idx;
  for (const auto& r : records)
    idx[r.subject_id + "/" + r.exam_date.iso()] = &r;
  return idx;
}

std::vector<ScoreRow> scores_to_rows(
    const std::map<std::string, double>& scores,
    const std::map<std::string, const ExamRecord*>& index) {
  std::vector<ScoreRow> rows;
  for (const auto& [exam, score] : scores) {
    const ExamRecord* r = index.at(exam);
    rows.push_back({exam, r->subject_id, score, r->label.value_or(0),
                    cognitive_to_string(r->cognitive_status)});
  }
  return rows;
}

}  // namespace

void run_train(const RunConfig& cfg) {
  if (!fs::exists(cfg.split_manifest()))
    throw Error(ErrorCode::ConfigError,
                "split manifest not found; run split before train");
  const auto records = read_manifest(cfg.split_manifest());
  const auto samples = load_train_samples(cfg, records);
  if (samples.empty())
    throw Error(ErrorCode::InsufficientSubjects, "no assigned exams to train on");

  TrainingConfig tc = cfg.training;
  tc.seed = cfg.seed;
  tc.n_folds = cfg.split.folds;
  auto result = train_cv(samples, cfg.network, tc);

  fs::create_directories(cfg.train_dir());
  for (auto& fold : result.folds)
    write_file_bytes(cfg.train_dir() + "/fold" + std::to_string(fold.fold) +
                         ".ckpt",
                     save_checkpoint(fold.model));

  // per-epoch metrics log
  {
    std::ostringstream log;
    log << "# " << cfg.provenance() << "\n";
    log << "fold\tepoch\tlr\ttrain_loss\tval_auc\n";
    char num[96];
    for (const auto& row : result.log) {
      std::snprintf(num, sizeof(num), "%d\t%d\t%.10g\t%.10g\t%.10g", row.fold,
                    row.epoch, row.lr, row.train_loss, row.val_auc);
      log << num << "\n";
    }
    write_text_file(cfg.train_dir() + "/training_log.tsv", log.str());
  }

  const auto index = record_index(records);
  write_scores(scores_to_rows(result.validation_scores_mean, index),
               cfg.train_dir() + "/validation_scores.tsv", cfg.provenance());
  write_scores(scores_to_rows(result.test_scores_mean, index),
               cfg.train_dir() + "/test_scores.tsv", cfg.provenance());

  // per-fold test scores for pooled-style analyses
  {
    std::ostringstream f;
    f << "# " << cfg.provenance() << "\n";
    f << "exam_id\tsubject_id\tfold\tscore\tlabel\tgroup\n";
    char num[64];
    for (const auto& fold : result.folds)
      for (const auto& [exam, score] : fold.test_scores) {
        const ExamRecord* r = index.at(exam);
        std::snprintf(num, sizeof(num), "%.17g", score);
        f << exam << '\t' << r->subject_id << '\t' << fold.fold << '\t' << num
          << '\t' << r->label.value_or(0) << '\t'
          << cognitive_to_string(r->cognitive_status) << "\n";
      }
    write_text_file(cfg.train_dir() + "/test_scores_by_fold.tsv", f.str());
  }

  // training summary: Youden operating point from the validation scores
  json summary;
  summary["config_hash"] = cfg.config_hash();
  summary["seed"] = cfg.seed;
  summary["version"] = version_string();
  summary["n_folds"] = static_cast<int>(result.folds.size());
  {
    json selected = json::array();
    for (const auto& fold : result.folds) selected.push_back(fold.selected_epoch);
    summary["selected_epochs"] = selected;
  }
  if (!result.validation_scores_mean.empty()) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& [exam, score] : result.validation_scores_mean) {
      scores.push_back(score);
      labels.push_back(index.at(exam)->label.value_or(0));
    }
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 &&
                      std::count(labels.begin(), labels.end(), 0) > 0;
    if (both) {
      const auto youden = youden_threshold(scores, labels);
      summary["youden_threshold"] = youden.threshold;
      summary["youden_j"] = youden.j;
    }
  }
  {
    Classifier probe(cfg.network, 0);
    summary["parameter_count"] = probe.parameter_count();
  }
  write_text_file(cfg.train_dir() + "/summary.json", summary.dump(2) + "\n");
}

// --- evaluate / compare -----------------------------------------------------------

namespace {

MetricsRow build_row(const std::string& model, const std::string& group,
                     const std::vector<double>& scores,
                     const std::vector<int>& labels,
                     const std::vector<std::string>& subjects, double threshold,
                     const std::string& threshold_source, int n_boot,
                     std::uint64_t seed) {
  MetricsRow row;
  row.model = model;
  row.group = group;
  row.threshold = threshold;
  row.threshold_source = threshold_source;
  const auto analysis = analyze_roc(scores, labels, threshold);
  row.n = analysis.n;
  row.prevalence = analysis.prevalence;
  row.auc_defined = analysis.auc_defined;
  if (analysis.auc_defined) {
    row.auc = analysis.auc;
    row.auc_lo = analysis.auc_ci.first;
    row.auc_hi = analysis.auc_ci.second;
    row.auc_var_degenerate = analysis.delong_degenerate;
  }
  row.accuracy = analysis.at_threshold.accuracy;
  row.sens_defined = analysis.at_threshold.sensitivity_defined;
  row.sensitivity = analysis.at_threshold.sensitivity;
  row.spec_defined = analysis.at_threshold.specificity_defined;
  row.specificity = analysis.at_threshold.specificity;

  // bootstrap CIs for the threshold metrics (subject-level resampling)
  if (scores.size() >= 10 && row.auc_defined) {
    auto run_boot = [&](const char* tag, auto metric) {
      return bootstrap_ci(scores, labels, metric, n_boot,
                          derive_seed(seed, std::string("eval/") + group + "/" +
                                                model + "/" + tag),
                          0.95, subjects);
    };
    const auto acc = run_boot("acc", [&](const std::vector<double>& s,
                                         const std::vector<int>& l) {
      return threshold_metrics(s, l, threshold).accuracy;
    });
    // percentile intervals are widened, if needed, to cover the estimate
    row.accuracy_lo = std::min(acc.lo, row.accuracy);
    row.accuracy_hi = std::max(acc.hi, row.accuracy);
    if (row.sens_defined) {
      const auto sens = run_boot("sens", [&](const std::vector<double>& s,
                                             const std::vector<int>& l) {
        return threshold_metrics(s, l, threshold).sensitivity;
      });
      row.sensitivity_lo = std::min(sens.lo, row.sensitivity);
      row.sensitivity_hi = std::max(sens.hi, row.sensitivity);
    }
    if (row.spec_defined) {
      const auto spec = run_boot("spec", [&](const std::vector<double>& s,
                                             const std::vector<int>& l) {
        return threshold_metrics(s, l, threshold).specificity;
      });
      row.specificity_lo = std::min(spec.lo, row.specificity);
      row.specificity_hi = std::max(spec.hi, row.specificity);
    }
  } else {
    row.accuracy_lo = row.accuracy;
    row.accuracy_hi = row.accuracy;
    row.sensitivity_lo = row.sensitivity;
    row.sensitivity_hi = row.sensitivity;
    row.specificity_lo = row.specificity;
    row.specificity_hi = row.specificity;
  }
  return row;
}

struct LoadedScores {
  std::vector<std::string> exam_ids;
  std::vector<std::string> subjects;
  std::vector<std::string> groups;
  std::vector<double> scores;
  std::vector<int> labels;
};

LoadedScores load_scores(const std::string& path,
                         const std::string& score_column = "") {
  LoadedScores out;
  for (const auto& r : read_scores(path, score_column)) {
    out.exam_ids.push_back(r.exam_id);
    out.subjects.push_back(r.subject_id.empty() ? r.exam_id : r.subject_id);
    out.groups.push_back(r.group);
    out.scores.push_back(r.score);
    out.labels.push_back(r.label);
  }
  if (out.scores.empty())
    throw Error(ErrorCode::SchemaError, "score file " + path + " is empty");
  return out;
}

void emit_report(const MetricsReport& report, const std::string& out_prefix) {
  write_text_file(out_prefix + ".json", report_to_json(report));
  write_text_file(out_prefix + ".txt", report_to_text(report));
  const std::string mismatch = report_cross_check(report);
  if (!mismatch.empty())
    throw Error(ErrorCode::Internal, "report cross-check failed: " + mismatch);
}

// per-group index lists: "all" plus each distinct group value
std::map<std::string, std::vector<std::size_t>> group_indices(
    const std::vector<std::string>& groups) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    out["all"].push_back(i);
    out[groups[i]].push_back(i);
  }
  return out;
}

template <typename T>
std::vector<T> take(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace

namespace {

bool has_both_classes(const std::vector<int>& labels) {
  return std::count(labels.begin(), labels.end(), 1) > 0 &&
         std::count(labels.begin(), labels.end(), 0) > 0;
}

}  // namespace

MetricsReport run_evaluate(const RunConfig& cfg, const std::string& scores_path,
                           const std::string& out_prefix) {
  const auto data = load_scores(scores_path);

  double threshold;
  std::string source;
  if (cfg.evaluate.threshold) {
    threshold = *cfg.evaluate.threshold;
    source = "config";
  } else if (has_both_classes(data.labels)) {
    threshold = youden_threshold(data.scores, data.labels).threshold;
    source = "youden_on_input";
  } else {
    threshold = 0.5;
    source = "default_single_class";
  }

  MetricsReport report;
  report.meta = {cfg.config_hash(), cfg.seed, version_string()};
  for (const auto& [group, idx] : group_indices(data.groups)) {
    report.rows.push_back(build_row(
        "model", group, take(data.scores, idx), take(data.labels, idx),
        take(data.subjects, idx), threshold, source, cfg.evaluate.bootstrap,
        cfg.seed));
  }
  // keep "all" first for readability
  std::stable_partition(report.rows.begin(), report.rows.end(),
                        [](const MetricsRow& r) { return r.group == "all"; });
  emit_report(report, out_prefix);
  return report;
}

MetricsReport run_compare(const RunConfig& cfg, const std::string& scores_a,
                          const std::string& scores_b,
                          const std::string& out_prefix) {
  // one combined table with score_a/score_b columns is accepted too
  const bool combined = scores_a == scores_b &&
                        score_file_has_column(scores_a, "score_a") &&
                        score_file_has_column(scores_a, "score_b");
  const auto a = load_scores(scores_a, combined ? "score_a" : "");
  auto b = load_scores(scores_b, combined ? "score_b" : "");

  // align b to a's exam order
  std::map<std::string, std::size_t> b_index;
  for (std::size_t i = 0; i < b.exam_ids.size(); ++i)
    b_index[b.exam_ids[i]] = i;
  if (a.exam_ids.size() != b.exam_ids.size())
    throw Error(ErrorCode::SchemaError, "score files cover different exam sets");
  std::vector<double> b_scores(a.exam_ids.size());
  for (std::size_t i = 0; i < a.exam_ids.size(); ++i) {
    const auto it = b_index.find(a.exam_ids[i]);
    if (it == b_index.end())
      throw Error(ErrorCode::SchemaError,
                  "exam " + a.exam_ids[i] + " missing from " + scores_b);
    if (b.labels[it->second] != a.labels[i])
      throw Error(ErrorCode::SchemaError,
                  "labels disagree for exam " + a.exam_ids[i]);
    b_scores[i] = b.scores[it->second];
  }

  double thr_a, thr_b;
  std::string source;
  if (cfg.evaluate.threshold) {
    thr_a = thr_b = *cfg.evaluate.threshold;
    source = "config";
  } else if (has_both_classes(a.labels)) {
    thr_a = youden_threshold(a.scores, a.labels).threshold;
    thr_b = youden_threshold(b_scores, a.labels).threshold;
    source = "youden_on_input";
  } else {
    thr_a = thr_b = 0.5;
    source = "default_single_class";
  }

  MetricsReport report;
  report.meta = {cfg.config_hash(), cfg.seed, version_string()};
  for (const auto& [group, idx] : group_indices(a.groups)) {
    const auto ls = take(a.labels, idx);
    const auto sa = take(a.scores, idx);
    const auto sb = take(b_scores, idx);
    const auto subj = take(a.subjects, idx);
    report.rows.push_back(build_row("model_a", group, sa, ls, subj, thr_a,
                                    source, cfg.evaluate.bootstrap, cfg.seed));
    report.rows.push_back(build_row("model_b", group, sb, ls, subj, thr_b,
                                    source, cfg.evaluate.bootstrap, cfg.seed));

    ComparisonRow cmp;
    cmp.group = group;
    cmp.model_a = "model_a";
    cmp.model_b = "model_b";
    // the paired test needs at least two exams per class
    const bool both_classes = std::count(ls.begin(), ls.end(), 1) >= 2 &&
                              std::count(ls.begin(), ls.end(), 0) >= 2;
    if (both_classes) {
      const auto paired = delong_paired_test(sa, sb, ls);
      cmp.auc_a = paired.auc_a;
      cmp.auc_b = paired.auc_b;
      cmp.z = paired.z;
      cmp.p_delong = paired.p;
      cmp.delong_degenerate = paired.degenerate;
    } else {
      cmp.delong_degenerate = true;
    }
    long long discordant_b = 0, discordant_c = 0;
    for (std::size_t i = 0; i < ls.size(); ++i) {
      const bool ca = (sa[i] >= thr_a) == (ls[i] == 1);
      const bool cb = (sb[i] >= thr_b) == (ls[i] == 1);
      discordant_b += ca && !cb;
      discordant_c += !ca && cb;
    }
    cmp.discordant_b = discordant_b;
    cmp.discordant_c = discordant_c;
    cmp.p_mcnemar = mcnemar_test(discordant_b, discordant_c);
    cmp.accuracy_a = threshold_metrics(sa, ls, thr_a).accuracy;
    cmp.accuracy_b = threshold_metrics(sb, ls, thr_b).accuracy;
    report.comparisons.push_back(std::move(cmp));
  }
  std::stable_partition(report.rows.begin(), report.rows.end(),
                        [](const MetricsRow& r) { return r.group == "all"; });
  std::stable_partition(report.comparisons.begin(), report.comparisons.end(),
                        [](const ComparisonRow& c) { return c.group == "all"; });
  emit_report(report, out_prefix);
  return report;
}

// --- occlude -------------------------------------------------------------------

void run_occlude(const RunConfig& cfg) {
  const std::string ckpt_path = cfg.occlude.checkpoint.empty()
                                    ? cfg.train_dir() + "/fold0.ckpt"
                                    : cfg.occlude.checkpoint;
  const auto model = load_checkpoint(read_file_bytes(ckpt_path));

  if (!fs::exists(cfg.split_manifest()))
    throw Error(ErrorCode::ConfigError,
                "split manifest not found; run split before occlude");
  const auto records = read_manifest(cfg.split_manifest());
  const ExamRecord* exam = nullptr;
  if (cfg.occlude.exam_id.empty()) {
    for (const auto& r : records)
      if (r.partition == Partition::Test) {
        exam = &r;
        break;
      }
    if (!exam && !records.empty()) exam = &records.front();
  } else {
    for (const auto& r : records)
      if (r.subject_id + "/" + r.exam_date.iso() == cfg.occlude.exam_id)
        exam = &r;
  }
  if (!exam)
    throw Error(ErrorCode::ConfigError,
                "occlusion exam not found in the split manifest");

  const fs::path dir = fs::path(cfg.processed_dir()) / exam->subject_id /
                       exam->exam_date.iso();
  std::vector<Volume3D> channels;
  channels.push_back(read_nifti_file((dir / "t1w.nii.gz").string()));
  if (model.config().in_channels == 2)
    channels.push_back(read_nifti_file((dir / "flair.nii.gz").string()));

  const NetworkScorer scorer(model);
  OcclusionConfig occ;
  occ.kernel = cfg.occlude.kernel;
  occ.stride = cfg.occlude.stride;
  occ.mask_all_channels = cfg.occlude.mask_all_channels;
  occ.jobs = cfg.jobs;
  const auto map = occlusion_map(channels, scorer, occ);

  const std::string out_dir = cfg.output_root + "/occlusion/" +
                              exam->subject_id + "_" + exam->exam_date.iso();
  Volume3D pet = channels[0];
  if (!exam->pet_path.empty() &&
      fs::exists(cfg.data_root + "/" + exam->pet_path)) {
    auto raw_pet =
        reorient_to_lpi(read_nifti_file(cfg.data_root + "/" + exam->pet_path));
    pet = resample_to_grid(raw_pet, channels[0]);
  }
  case_report(channels, pet, map, out_dir, "nq " + cfg.provenance());

  json meta;
  meta["config_hash"] = cfg.config_hash();
  meta["seed"] = cfg.seed;
  meta["version"] = version_string();
  meta["exam"] = exam->subject_id + "/" + exam->exam_date.iso();
  meta["kernel"] = map.kernel;
  meta["stride"] = map.stride;
  meta["baseline"] = map.baseline;
  meta["degenerate"] = map.degenerate;
  meta["checkpoint"] = ckpt_path;
  write_text_file(out_dir + "/meta.json", meta.dump(2) + "\n");
}

}  // namespace nq
