/*
 * neuroquant : amyloid status prediction from multi-contrast MRI
 *
 * Public C API. The pipeline core is C++; this header exposes it as a
 * plain shared-library interface with opaque handles and error codes so
 * that clients (the bundled CLI included) need no C++ ABI.
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

#ifndef NEUROQUANT_H
#define NEUROQUANT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined _WIN32
#define NQ_API __declspec(dllexport)
#else
#define NQ_API __attribute__((visibility("default")))
#endif

typedef enum nq_status {
  NQ_OK = 0,
  NQ_ERR_IO = 1,       /* missing/corrupt files, short writes            */
  NQ_ERR_FORMAT = 2,   /* malformed NIfTI/checkpoint/manifest content    */
  NQ_ERR_CONFIG = 3,   /* invalid or missing configuration               */
  NQ_ERR_INVALID = 4,  /* precondition violated (shapes, masks, classes) */
  NQ_ERR_INTERNAL = 5, /* unexpected internal failure                    */
} nq_status;

/* Library version, "major.minor.patch". Static storage; do not free. */
NQ_API const char* nq_version(void);

/* Human-readable message for the most recent failure on this thread.
 * Static thread-local storage; valid until the next failing call. */
NQ_API const char* nq_last_error(void);

/* ------------------------------------------------------------------ *
 * Sessions: one loaded run configuration plus run-time overrides.     *
 * ------------------------------------------------------------------ */

typedef struct nq_session nq_session;

/* Load a JSON run configuration from a file. */
NQ_API nq_status nq_session_open(const char* config_path, nq_session** out);
/* Same, from a JSON string. */
NQ_API nq_status nq_session_open_json(const char* config_json, nq_session** out);
NQ_API void nq_session_close(nq_session* session);

NQ_API nq_status nq_session_set_seed(nq_session* session, uint64_t seed);
NQ_API nq_status nq_session_set_jobs(nq_session* session, int jobs);
NQ_API nq_status nq_session_set_force(nq_session* session, int force);

/* Pipeline stages. Each returns NQ_OK on success; inspect nq_last_error()
 * otherwise. Stage outputs land under the configured output root. */
NQ_API nq_status nq_run_synth(nq_session* session);
NQ_API nq_status nq_run_preprocess(nq_session* session);
NQ_API nq_status nq_run_quant(nq_session* session);
NQ_API nq_status nq_run_split(nq_session* session);
NQ_API nq_status nq_run_train(nq_session* session);
NQ_API nq_status nq_run_occlude(nq_session* session);

/* Evaluation of a score table (exam_id/subject_id/score/label/group TSV);
 * writes <out_prefix>.json and <out_prefix>.txt. */
NQ_API nq_status nq_run_evaluate(nq_session* session, const char* scores_path,
                                 const char* out_prefix);
/* Paired comparison of two score tables over the same exams. */
NQ_API nq_status nq_run_compare(nq_session* session, const char* scores_a,
                                const char* scores_b, const char* out_prefix);

/* Rendered text report of the last evaluate/compare call on this session,
 * or NULL if none. Owned by the session. */
NQ_API const char* nq_session_last_report_text(const nq_session* session);

/* ------------------------------------------------------------------ *
 * Volumes: minimal NIfTI access for tooling and tests.                *
 * ------------------------------------------------------------------ */

typedef struct nq_volume nq_volume;

NQ_API nq_status nq_volume_read(const char* path, nq_volume** out);
/* datatype: 2=uint8, 4=int16, 8=int32, 16=float32, 64=float64 */
NQ_API nq_status nq_volume_write(const nq_volume* volume, const char* path,
                                 int datatype);
NQ_API void nq_volume_free(nq_volume* volume);

NQ_API nq_status nq_volume_dims(const nq_volume* volume, int64_t dims[3]);
NQ_API nq_status nq_volume_spacing(const nq_volume* volume, double spacing[3]);
/* 3-letter orientation code plus NUL, e.g. "LPI". */
NQ_API nq_status nq_volume_orientation(const nq_volume* volume, char code[4]);
/* Borrowed pointer to nx*ny*nz doubles (x fastest); valid until free. */
NQ_API const double* nq_volume_data(const nq_volume* volume, int64_t* count);
NQ_API nq_status nq_volume_reorient_lpi(const nq_volume* volume, nq_volume** out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* NEUROQUANT_H */
