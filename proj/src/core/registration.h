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

#ifndef NEUROQUANT_CORE_REGISTRATION_H
#define NEUROQUANT_CORE_REGISTRATION_H

#include <vector>

#include "core/volume.h"

namespace nq {

// 6-DOF rigid registration by derivative-free minimization of the
// mean-squared intensity error over a 3-level multiresolution pyramid.
// This is a deliberately simple mono-modal stand-in for an external
// registration suite, not a parity reimplementation.
struct RegistrationConfig {
  std::vector<double> pyramid = {4.0, 2.0, 1.0};  // spacing multipliers
  int max_sweeps_per_level = 100;
  double param_tolerance = 1e-4;
  double rotation_bracket_rad = 0.15;   // initial search half-width, coarsest level
  double translation_bracket_mm = 10.0;
  std::size_t max_samples_per_level = 20000;  // MSE sample budget
  double min_overlap_fraction = 0.10;
};

struct RegistrationResult {
  RigidTransform transform;
  double final_mse = 0;
  int iterations = 0;  // accepted parameter sweeps, summed over levels
  bool converged = false;
  // accepted objective values in order, per level boundary concatenated;
  // non-increasing within each level by construction
  std::vector<double> objective_trace;
  std::vector<std::size_t> level_offsets;  // index into the trace per level
};

// Finds T minimizing MSE(fixed, moving resampled through T). Rotation center
// is the moving volume's world center. Throws EmptyOverlap when fewer than
// min_overlap_fraction of the fixed voxels see the moving volume at the
// identity pose.
RegistrationResult rigid_register(const Volume3D& moving, const Volume3D& fixed,
                                  const RegistrationConfig& cfg = {});

// Threshold/morphology brain extractor: Otsu threshold, largest 6-connected
// component, then morphological closing with a ball of the given radius (mm).
struct BrainExtractConfig {
  double closing_radius_mm = 2.0;
};

BrainMask extract_brain(const Volume3D& vol, const BrainExtractConfig& cfg = {});

// Otsu's threshold over a 256-bin histogram of [min, max]; returns the bin
// upper edge maximizing inter-class variance (ties -> lowest threshold).
double otsu_threshold(const Volume3D& vol);

}  // namespace nq

#endif
