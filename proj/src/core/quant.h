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

#ifndef NEUROQUANT_CORE_QUANT_H
#define NEUROQUANT_CORE_QUANT_H

#include <string>

#include "core/volume.h"

namespace nq {

enum class Tracer { FBP, FBB, Custom };

Tracer tracer_from_string(const std::string& s);
std::string tracer_to_string(Tracer t);

// Linear SUVR -> centiloid map plus the positivity cutoff for one tracer.
// The slope/intercept pairs are configuration (profiles ship in the config
// file); the FBB/FBP cutoffs default to 12 and 18.
struct TracerCalibration {
  Tracer tracer = Tracer::Custom;
  double slope = 100.0;
  double intercept = -100.0;
  double cutoff_cl = 20.0;

  void validate() const;

  static TracerCalibration fbp_default();
  static TracerCalibration fbb_default();
  static TracerCalibration oasis3_default();
};

enum class AmyloidStatus { Negative = 0, Positive = 1 };

struct AmyloidResult {
  double suvr = 0;
  double centiloid = 0;
  AmyloidStatus status = AmyloidStatus::Negative;
  Tracer tracer = Tracer::Custom;
};

// mean(pet over target) / mean(pet over reference); masks must be nonempty
// and live on pet's grid.
double compute_suvr(const Volume3D& pet, const BrainMask& target,
                    const BrainMask& reference);

double centiloid_from_suvr(double suvr, const TracerCalibration& cal);

// Positive iff centiloid >= cutoff (boundary counts as positive).
AmyloidStatus classify_status(double centiloid, const TracerCalibration& cal);

AmyloidResult quantify(const Volume3D& pet, const BrainMask& target,
                       const BrainMask& reference, const TracerCalibration& cal);

}  // namespace nq

#endif
