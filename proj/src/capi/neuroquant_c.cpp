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

#include "neuroquant/neuroquant.h"

#include <cstring>
#include <string>

#include "core/error.h"
#include "core/nifti_io.h"
#include "core/pipeline.h"

namespace {

thread_local std::string g_last_error;

nq_status status_for(nq::ErrorCode code) {
  using nq::ErrorCode;
  switch (code) {
    case ErrorCode::IoError:
      return NQ_ERR_IO;
    case ErrorCode::BadMagic:
    case ErrorCode::UnsupportedDatatype:
    case ErrorCode::TruncatedData:
    case ErrorCode::NonFinite:
    case ErrorCode::RangeOverflow:
    case ErrorCode::VersionMismatch:
    case ErrorCode::ConfigMismatch:
    case ErrorCode::SchemaError:
      return NQ_ERR_FORMAT;
    case ErrorCode::ConfigError:
      return NQ_ERR_CONFIG;
    case ErrorCode::Internal:
      return NQ_ERR_INTERNAL;
    default:
      return NQ_ERR_INVALID;
  }
}

template <typename Fn>
nq_status guarded(Fn&& fn) {
  try {
    fn();
    return NQ_OK;
  } catch (const nq::Error& e) {
    g_last_error = e.what();
    return status_for(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return NQ_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return NQ_ERR_INTERNAL;
  }
}

nq_status invalid_argument(const char* message) {
  g_last_error = message;
  return NQ_ERR_INVALID;
}

}  // namespace

struct nq_session {
  nq::RunConfig config;
  std::string last_report_text;
};

struct nq_volume {
  nq::Volume3D volume;
};

extern "C" {

const char* nq_version(void) { return NEUROQUANT_VERSION; }

const char* nq_last_error(void) { return g_last_error.c_str(); }

nq_status nq_session_open(const char* config_path, nq_session** out) {
  if (!config_path || !out) return invalid_argument("null argument");
  *out = nullptr;
  return guarded([&]() {
    auto session = new nq_session;
    try {
      session->config = nq::RunConfig::from_json_file(config_path);
    } catch (...) {
      delete session;
      throw;
    }
    *out = session;
  });
}

nq_status nq_session_open_json(const char* config_json, nq_session** out) {
  if (!config_json || !out) return invalid_argument("null argument");
  *out = nullptr;
  return guarded([&]() {
    auto session = new nq_session;
    try {
      session->config = nq::RunConfig::from_json_text(config_json);
    } catch (...) {
      delete session;
      throw;
    }
    *out = session;
  });
}

void nq_session_close(nq_session* session) { delete session; }

nq_status nq_session_set_seed(nq_session* session, uint64_t seed) {
  if (!session) return invalid_argument("null session");
  session->config.seed = seed;
  session->config.synth.seed = seed;
  session->config.training.seed = seed;
  return NQ_OK;
}

nq_status nq_session_set_jobs(nq_session* session, int jobs) {
  if (!session) return invalid_argument("null session");
  if (jobs < 1) return invalid_argument("jobs must be >= 1");
  session->config.jobs = jobs;
  return NQ_OK;
}

nq_status nq_session_set_force(nq_session* session, int force) {
  if (!session) return invalid_argument("null session");
  session->config.force = force != 0;
  return NQ_OK;
}

nq_status nq_run_synth(nq_session* session) {
  if (!session) return invalid_argument("null session");
  return guarded([&]() { nq::run_synth(session->config); });
}

nq_status nq_run_preprocess(nq_session* session) {
  if (!session) return invalid_argument("null session");
  return guarded([&]() { nq::run_preprocess(session->config); });
}

nq_status nq_run_quant(nq_session* session) {
  if (!session) return invalid_argument("null session");
  return guarded([&]() { nq::run_quant(session->config); });
}

nq_status nq_run_split(nq_session* session) {
  if (!session) return invalid_argument("null session");
  return guarded([&]() { nq::run_split(session->config); });
}

nq_status nq_run_train(nq_session* session) {
  if (!session) return invalid_argument("null session");
  return guarded([&]() { nq::run_train(session->config); });
}

nq_status nq_run_occlude(nq_session* session) {
  if (!session) return invalid_argument("null session");
  return guarded([&]() { nq::run_occlude(session->config); });
}

nq_status nq_run_evaluate(nq_session* session, const char* scores_path,
                          const char* out_prefix) {
  if (!session || !scores_path || !out_prefix)
    return invalid_argument("null argument");
  return guarded([&]() {
    const auto report =
        nq::run_evaluate(session->config, scores_path, out_prefix);
    session->last_report_text = nq::report_to_text(report);
  });
}

nq_status nq_run_compare(nq_session* session, const char* scores_a,
                         const char* scores_b, const char* out_prefix) {
  if (!session || !scores_a || !scores_b || !out_prefix)
    return invalid_argument("null argument");
  return guarded([&]() {
    const auto report =
        nq::run_compare(session->config, scores_a, scores_b, out_prefix);
    session->last_report_text = nq::report_to_text(report);
  });
}

const char* nq_session_last_report_text(const nq_session* session) {
  if (!session || session->last_report_text.empty()) return nullptr;
  return session->last_report_text.c_str();
}

nq_status nq_volume_read(const char* path, nq_volume** out) {
  if (!path || !out) return invalid_argument("null argument");
  *out = nullptr;
  return guarded([&]() {
    auto volume = new nq_volume{nq::read_nifti_file(path)};
    *out = volume;
  });
}

nq_status nq_volume_write(const nq_volume* volume, const char* path,
                          int datatype) {
  if (!volume || !path) return invalid_argument("null argument");
  return guarded([&]() {
    switch (datatype) {
      case 2: case 4: case 8: case 16: case 64: break;
      default:
        throw nq::Error(nq::ErrorCode::UnsupportedDatatype,
                        "datatype code " + std::to_string(datatype));
    }
    nq::write_nifti_file(volume->volume, path,
                         static_cast<nq::NiftiDatatype>(datatype));
  });
}

void nq_volume_free(nq_volume* volume) { delete volume; }

nq_status nq_volume_dims(const nq_volume* volume, int64_t dims[3]) {
  if (!volume || !dims) return invalid_argument("null argument");
  for (int i = 0; i < 3; ++i) dims[i] = volume->volume.shape()[i];
  return NQ_OK;
}

nq_status nq_volume_spacing(const nq_volume* volume, double spacing[3]) {
  if (!volume || !spacing) return invalid_argument("null argument");
  for (int i = 0; i < 3; ++i) spacing[i] = volume->volume.spacing()[i];
  return NQ_OK;
}

nq_status nq_volume_orientation(const nq_volume* volume, char code[4]) {
  if (!volume || !code) return invalid_argument("null argument");
  const std::string& o = volume->volume.orientation();
  std::memset(code, 0, 4);
  std::memcpy(code, o.c_str(), std::min<std::size_t>(3, o.size()));
  return NQ_OK;
}

const double* nq_volume_data(const nq_volume* volume, int64_t* count) {
  if (!volume) return nullptr;
  if (count) *count = static_cast<int64_t>(volume->volume.size());
  return volume->volume.data().data();
}

nq_status nq_volume_reorient_lpi(const nq_volume* volume, nq_volume** out) {
  if (!volume || !out) return invalid_argument("null argument");
  *out = nullptr;
  return guarded([&]() {
    *out = new nq_volume{nq::reorient_to_lpi(volume->volume)};
  });
}

}  // extern "C"
