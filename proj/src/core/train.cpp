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

#include "core/train.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "core/error.h"
#include "core/metrics.h"
#include "core/rng.h"

namespace nq {

void TrainingConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::ConfigError, "epochs must be >= 1");
  if (!(warmup_epochs < epochs))
    throw Error(ErrorCode::ConfigError, "warmup_epochs must be < epochs");
  if (warmup_epochs < 0)
    throw Error(ErrorCode::ConfigError, "warmup_epochs must be >= 0");
  if (!(lr_max > 0)) throw Error(ErrorCode::ConfigError, "lr_max must be > 0");
  if (batch_size < 1)
    throw Error(ErrorCode::ConfigError, "batch_size must be >= 1");
  if (n_folds < 2) throw Error(ErrorCode::ConfigError, "n_folds must be >= 2");
  if (checkpoint_selection != "best_val_auc" && checkpoint_selection != "last")
    throw Error(ErrorCode::ConfigError,
                "checkpoint_selection must be best_val_auc or last");
}

double lr_at_epoch(const TrainingConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw Error(ErrorCode::ConfigError, "epoch out of range");
  if (epoch < cfg.warmup_epochs)
    return cfg.lr_max * static_cast<double>(epoch) /
           static_cast<double>(cfg.warmup_epochs);
  const double progress =
      static_cast<double>(epoch - cfg.warmup_epochs) /
      static_cast<double>(cfg.epochs - cfg.warmup_epochs);
  return cfg.lr_max * (1.0 + std::cos(M_PI * progress)) / 2.0;
}

namespace {

// Stack channel volumes (already on the input grid) into [N,C,Z,Y,X].
Tensor build_batch(const std::vector<const TrainSample*>& samples,
                   const std::vector<std::vector<Volume3D>>* augmented,
                   int in_channels, int grid) {
  const int n = static_cast<int>(samples.size());
  Tensor x({n, in_channels, grid, grid, grid});
  const std::size_t vox = static_cast<std::size_t>(grid) * grid * grid;
  for (int i = 0; i < n; ++i) {
    const auto& channels = augmented ? (*augmented)[i] : samples[i]->channels;
    if (static_cast<int>(channels.size()) != in_channels)
      throw Error(ErrorCode::ShapeMismatch, "sample channel count mismatch");
    for (int c = 0; c < in_channels; ++c) {
      const auto& vol = channels[c];
      if (vol.nx() != grid || vol.ny() != grid || vol.nz() != grid)
        throw Error(ErrorCode::ShapeMismatch,
                    "sample volume is not on the network input grid");
      std::memcpy(&x.v[(static_cast<std::size_t>(i) * in_channels + c) * vox],
                  vol.data().data(), vox * sizeof(double));
    }
  }
  return x;
}

double validation_auc(Classifier& model,
                      const std::vector<const TrainSample*>& val,
                      int batch_size) {
  if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> scores;
  std::vector<int> labels;
  const int grid = model.config().input_grid;
  for (std::size_t at = 0; at < val.size(); at += batch_size) {
    std::vector<const TrainSample*> chunk(
        val.begin() + at,
        val.begin() + std::min(at + batch_size, val.size()));
    const Tensor x = build_batch(chunk, nullptr, model.config().in_channels, grid);
    const auto probs = model.probabilities(x, RunMode::Eval);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      scores.push_back(probs[i]);
      labels.push_back(chunk[i]->label);
    }
  }
  const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
  const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
  if (!has_pos || !has_neg) return std::numeric_limits<double>::quiet_NaN();
  return auc_mann_whitney(scores, labels);
}

}  // namespace

std::map<std::string, double> score_samples(Classifier& model,
                                            const std::vector<TrainSample>& samples,
                                            int batch_size) {
  std::map<std::string, double> out;
  const int grid = model.config().input_grid;
  std::vector<const TrainSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  for (std::size_t at = 0; at < ptrs.size(); at += batch_size) {
    std::vector<const TrainSample*> chunk(
        ptrs.begin() + at, ptrs.begin() + std::min(at + batch_size, ptrs.size()));
    const Tensor x = build_batch(chunk, nullptr, model.config().in_channels, grid);
    const auto probs = model.probabilities(x, RunMode::Eval);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      out[chunk[i]->exam_id] = probs[i];
  }
  return out;
}

TrainResult train_cv(const std::vector<TrainSample>& samples,
                     const NetworkConfig& net_cfg, const TrainingConfig& cfg) {
  cfg.validate();
  net_cfg.validate();

  std::vector<const TrainSample*> val_ptrs;
  std::vector<TrainSample> val_samples, test_samples;
  for (const auto& s : samples) {
    if (s.partition == Partition::Validation) val_samples.push_back(s);
    if (s.partition == Partition::Test) test_samples.push_back(s);
  }
  for (const auto& s : val_samples) val_ptrs.push_back(&s);

  TrainResult result;
  std::vector<std::map<std::string, double>> val_by_fold, test_by_fold;

  for (int fold = 0; fold < cfg.n_folds; ++fold) {
    std::vector<const TrainSample*> train_ptrs;
    for (const auto& s : samples)
      if (s.partition == Partition::Train && s.fold != fold)
        train_ptrs.push_back(&s);
    if (train_ptrs.empty())
      throw Error(ErrorCode::InsufficientSubjects, "fold has no training exams");
    {
      bool pos = false, neg = false;
      for (const auto* s : train_ptrs) (s->label ? pos : neg) = true;
      if (!pos || !neg)
        throw Error(ErrorCode::SingleClassFold,
                    "fold " + std::to_string(fold) +
                        " training set has a single class");
    }

    Classifier model(net_cfg,
                     derive_seed(cfg.seed, "fold" + std::to_string(fold)));
    AdamState adam;
    adam.init(model.trainable_params());

    Classifier best = model;
    double best_auc = -1.0;
    int best_epoch = -1;

    const std::string fold_tag = "fold" + std::to_string(fold);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const double lr = lr_at_epoch(cfg, epoch);
      const std::string epoch_tag = fold_tag + "/epoch" + std::to_string(epoch);

      std::vector<std::size_t> order(train_ptrs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      {
        auto rng = make_rng(cfg.seed, epoch_tag + "/shuffle");
        std::shuffle(order.begin(), order.end(), rng);
      }

      double epoch_loss = 0;
      std::size_t seen = 0;
      for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
        const std::size_t hi = std::min(at + cfg.batch_size, order.size());
        std::vector<const TrainSample*> chunk;
        std::vector<std::vector<Volume3D>> augmented;
        std::vector<int> labels;
        for (std::size_t i = at; i < hi; ++i) {
          const TrainSample* s = train_ptrs[order[i]];
          chunk.push_back(s);
          auto rng = make_rng(cfg.seed, epoch_tag + "/aug/" + s->exam_id);
          augmented.push_back(random_rotation_augment(
              s->channels, rng, cfg.aug_max_angle_rad, cfg.aug_per_axis_prob));
          labels.push_back(s->label);
        }
        const Tensor x = build_batch(chunk, &augmented, net_cfg.in_channels,
                                     net_cfg.input_grid);
        model.zero_grads();
        const double loss = model.loss_and_backward(x, labels);
        adam_step(model.trainable_params(), adam, lr, cfg.adam);
        epoch_loss += loss * static_cast<double>(chunk.size());
        seen += chunk.size();
      }
      epoch_loss /= static_cast<double>(seen);

      const double val_auc = validation_auc(model, val_ptrs, cfg.batch_size);
      result.log.push_back({fold, epoch, lr, epoch_loss, val_auc});
      if (cfg.checkpoint_selection == "best_val_auc" && std::isfinite(val_auc) &&
          val_auc > best_auc) {
        best_auc = val_auc;
        best = model;
        best_epoch = epoch;
      }
    }

    FoldResult fr;
    fr.fold = fold;
    if (cfg.checkpoint_selection == "best_val_auc" && best_epoch >= 0) {
      fr.model = std::move(best);
      fr.selected_epoch = best_epoch;
    } else {
      fr.model = std::move(model);
      fr.selected_epoch = cfg.epochs - 1;
    }
    fr.validation_scores = score_samples(fr.model, val_samples, cfg.batch_size);
    fr.test_scores = score_samples(fr.model, test_samples, cfg.batch_size);
    val_by_fold.push_back(fr.validation_scores);
    test_by_fold.push_back(fr.test_scores);
    result.folds.push_back(std::move(fr));
  }

  if (!val_samples.empty())
    result.validation_scores_mean = aggregate_fold_scores_mean(val_by_fold);
  if (!test_samples.empty())
    result.test_scores_mean = aggregate_fold_scores_mean(test_by_fold);
  return result;
}

std::map<std::string, double> aggregate_fold_scores_mean(
    const std::vector<std::map<std::string, double>>& per_fold) {
  if (per_fold.empty())
    throw Error(ErrorCode::FoldMismatch, "no fold scores to aggregate");
  std::map<std::string, double> out;
  for (const auto& fold : per_fold) {
    if (fold.size() != per_fold.front().size())
      throw Error(ErrorCode::FoldMismatch, "folds scored different exam sets");
    for (const auto& [exam, score] : fold) {
      if (!per_fold.front().count(exam))
        throw Error(ErrorCode::FoldMismatch, "folds scored different exam sets");
      out[exam] += score;
    }
  }
  for (auto& [_, score] : out) score /= static_cast<double>(per_fold.size());
  return out;
}

std::vector<std::pair<std::string, double>> aggregate_fold_scores_pooled(
    const std::vector<std::map<std::string, double>>& per_fold) {
  if (per_fold.empty())
    throw Error(ErrorCode::FoldMismatch, "no fold scores to aggregate");
  std::vector<std::pair<std::string, double>> out;
  for (const auto& fold : per_fold) {
    if (fold.size() != per_fold.front().size())
      throw Error(ErrorCode::FoldMismatch, "folds scored different exam sets");
    for (const auto& [exam, score] : fold) out.emplace_back(exam, score);
  }
  return out;
}

}  // namespace nq
