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

#ifndef NEUROQUANT_CORE_OCCLUSION_H
#define NEUROQUANT_CORE_OCCLUSION_H

#include <string>
#include <vector>

#include "core/network.h"
#include "core/volume.h"

namespace nq {

// Pluggable model-evaluation contract for occlusion mapping: multi-channel
// volume in, probability out. Implementations must be deterministic and
// side-effect free per call.
class Scorer {
public:
  virtual ~Scorer() = default;
  virtual int channels() const = 0;
  virtual double score(const std::vector<Volume3D>& input) const = 0;
};

// sigmoid(sum_c sum_v w[c][v] * x[c][v] + bias); the analytic oracle
// partner for occlusion tests.
class LinearScorer : public Scorer {
public:
  LinearScorer(std::vector<std::vector<double>> weights, double bias);
  int channels() const override;
  double score(const std::vector<Volume3D>& input) const override;
  double logit(const std::vector<Volume3D>& input) const;
  const std::vector<std::vector<double>>& weights() const { return weights_; }
  double bias() const { return bias_; }

private:
  std::vector<std::vector<double>> weights_;
  double bias_;
};

// Wraps a trained classifier: channels are resampled to the model's input
// grid, scored in eval mode.
class NetworkScorer : public Scorer {
public:
  explicit NetworkScorer(Classifier model);
  int channels() const override;
  double score(const std::vector<Volume3D>& input) const override;

private:
  mutable Classifier model_;  // forward caches are scratch state
};

struct OcclusionConfig {
  int kernel = 7;   // odd, >= 1
  int stride = 1;   // >= 1; off-grid voxels take their nearest center's score
  bool mask_all_channels = true;  // false: mask only mask_channel
  int mask_channel = 0;
  int jobs = 1;
};

struct ActivationMap {
  Volume3D values;      // final impact map in [0,1]; low = high impact
  Volume3D raw_scores;  // scorer output per voxel (nearest evaluated center)
  double baseline = 0;  // scorer output on the unmasked input
  int kernel = 7;
  int stride = 1;
  bool degenerate = false;  // max |score - baseline| < 1e-12
};

// Slides a zero-masking kernel (clipped at the boundaries) over the input,
// scores each masked copy, and assigns the score to the kernel's central
// voxel. The final map is 1 - minmax(|score - baseline|), so lower values
// mark regions with greater impact on the prediction.
ActivationMap occlusion_map(const std::vector<Volume3D>& input,
                            const Scorer& scorer,
                            const OcclusionConfig& cfg = {});

// Writes the input channels, the PET volume, and the map as NIfTI files
// plus a mid-axial-slice PGM montage for eyeballing. All grids must match.
void case_report(const std::vector<Volume3D>& channels, const Volume3D& pet,
                 const ActivationMap& map, const std::string& out_dir,
                 const std::string& descrip = "");

// 8-bit binary PGM (P5) encoding of a midslice montage; exposed for tests.
std::vector<std::uint8_t> midslice_montage_pgm(
    const std::vector<const Volume3D*>& panels);

}  // namespace nq

#endif
