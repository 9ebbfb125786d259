/*
 * neuroquant : amyloid status prediction from multi-contrast MRI
 *
 * Command-line driver. Links only the public C API.
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

#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "neuroquant/neuroquant.h"

namespace {

struct SessionGuard {
  nq_session* handle = nullptr;
  ~SessionGuard() { nq_session_close(handle); }
};

int exit_code_for(nq_status status) {
  if (status == NQ_OK) return 0;
  if (status == NQ_ERR_CONFIG) return 2;
  return 1;
}

int report_failure(const char* stage, nq_status status) {
  std::fprintf(stderr, "neuroquant %s failed: %s\n", stage, nq_last_error());
  return exit_code_for(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neuroquant: MRI-based amyloid status pipeline"};
  app.set_version_flag("--version", std::string(nq_version()));
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
  bool force = false;

  app.add_option("--config", config_path, "JSON run configuration")->required();
  app.add_option("--seed", seed, "override the configured seed")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--jobs", jobs, "worker threads for parallel stages");
  app.add_flag("--force", force, "redo work even when outputs look current");

  auto* synth = app.add_subcommand("synth", "generate a synthetic phantom cohort");
  auto* preprocess =
      app.add_subcommand("preprocess", "reorient, register, strip, resample, normalize");
  auto* quant =
      app.add_subcommand("quant", "SUVR -> centiloid -> amyloid status per exam");
  auto* split =
      app.add_subcommand("split", "subject-level train/validation/test split + folds");
  auto* train = app.add_subcommand("train", "cross-validated classifier training");
  auto* evaluate = app.add_subcommand("evaluate", "metrics report for one score table");
  auto* compare = app.add_subcommand("compare", "paired comparison of two score tables");
  auto* occlude = app.add_subcommand("occlude", "occlusion activation map for one exam");

  std::string scores, scores_a, scores_b, out_prefix = "report";
  evaluate->add_option("--scores", scores, "score table (TSV)")->required();
  evaluate->add_option("--out", out_prefix, "output path prefix");
  compare->add_option("--scores-a", scores_a, "first model's score table")->required();
  compare->add_option("--scores-b", scores_b, "second model's score table")->required();
  compare->add_option("--out", out_prefix, "output path prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    // bad invocations count as configuration errors; --help/--version exit 0
    return code == 0 ? 0 : 2;
  }

  SessionGuard session;
  nq_status status = nq_session_open(config_path.c_str(), &session.handle);
  if (status != NQ_OK) return report_failure("config", status);
  if (seed_set) nq_session_set_seed(session.handle, seed);
  if (jobs > 0) nq_session_set_jobs(session.handle, jobs);
  if (force) nq_session_set_force(session.handle, 1);

  if (synth->parsed()) {
    status = nq_run_synth(session.handle);
    if (status != NQ_OK) return report_failure("synth", status);
  } else if (preprocess->parsed()) {
    status = nq_run_preprocess(session.handle);
    if (status != NQ_OK) return report_failure("preprocess", status);
  } else if (quant->parsed()) {
    status = nq_run_quant(session.handle);
    if (status != NQ_OK) return report_failure("quant", status);
  } else if (split->parsed()) {
    status = nq_run_split(session.handle);
    if (status != NQ_OK) return report_failure("split", status);
  } else if (train->parsed()) {
    status = nq_run_train(session.handle);
    if (status != NQ_OK) return report_failure("train", status);
  } else if (evaluate->parsed()) {
    status = nq_run_evaluate(session.handle, scores.c_str(), out_prefix.c_str());
    if (status != NQ_OK) return report_failure("evaluate", status);
    if (const char* text = nq_session_last_report_text(session.handle))
      std::fputs(text, stdout);
  } else if (compare->parsed()) {
    status = nq_run_compare(session.handle, scores_a.c_str(), scores_b.c_str(),
                            out_prefix.c_str());
    if (status != NQ_OK) return report_failure("compare", status);
    if (const char* text = nq_session_last_report_text(session.handle))
      std::fputs(text, stdout);
  } else if (occlude->parsed()) {
    status = nq_run_occlude(session.handle);
    if (status != NQ_OK) return report_failure("occlude", status);
  }
  return 0;
}
