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

#ifndef NEUROQUANT_CORE_TRAIN_H
#define NEUROQUANT_CORE_TRAIN_H

#include <map>
#include <string>
#include <vector>

#include "core/cohort.h"
#include "core/network.h"
#include "core/volume.h"

namespace nq {

struct TrainingConfig {
  int epochs = 500;
  int batch_size = 8;
  double lr_max = 5e-4;
  int warmup_epochs = 20;
  AdamConfig adam;
  double aug_max_angle_rad = 0.2;
  double aug_per_axis_prob = 0.3;
  int n_folds = 5;
  std::uint64_t seed = 0;
  // "best_val_auc": keep the epoch with the highest AUC on the shared
  // validation partition; "last": keep the final epoch
  std::string checkpoint_selection = "best_val_auc";

  void validate() const;
};

// Linear warmup from 0 to lr_max over warmup_epochs, then cosine annealing
// to 0 across the remaining epochs.
double lr_at_epoch(const TrainingConfig& cfg, int epoch);

// One exam prepared for the network: channel volumes already resampled to
// the model's input grid.
struct TrainSample {
  std::string exam_id;
  std::string subject_id;
  int label = 0;
  Partition partition = Partition::Unassigned;
  int fold = -1;  // meaningful for train-partition samples
  std::vector<Volume3D> channels;
};

struct EpochLogRow {
  int fold = 0;
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_auc = 0;  // NaN when the validation partition is single-class
};

struct FoldResult {
  int fold = 0;
  Classifier model;  // selected checkpoint
  int selected_epoch = -1;
  std::map<std::string, double> validation_scores;
  std::map<std::string, double> test_scores;
};

struct TrainResult {
  std::vector<FoldResult> folds;
  std::vector<EpochLogRow> log;
  std::map<std::string, double> validation_scores_mean;
  std::map<std::string, double> test_scores_mean;
};

// 5-fold cross-validated training: fold k trains on the train partition
// minus fold k with rotation augmentation, selects its checkpoint on the
// shared validation partition, and scores validation + test exams.
// Deterministic given cfg.seed.
TrainResult train_cv(const std::vector<TrainSample>& samples,
                     const NetworkConfig& net_cfg, const TrainingConfig& cfg);

// Scores one set of samples with a trained model (eval mode).
std::map<std::string, double> score_samples(Classifier& model,
                                            const std::vector<TrainSample>& samples,
                                            int batch_size = 8);

// Mean per-exam score across folds; throws FoldMismatch when the exam sets
// differ.
std::map<std::string, double> aggregate_fold_scores_mean(
    const std::vector<std::map<std::string, double>>& per_fold);

// Pooled mode: every fold's prediction kept as its own observation.
std::vector<std::pair<std::string, double>> aggregate_fold_scores_pooled(
    const std::vector<std::map<std::string, double>>& per_fold);

}  // namespace nq

#endif
