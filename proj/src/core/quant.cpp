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

#include "core/quant.h"

#include <cmath>

#include "core/error.h"

namespace nq {

Tracer tracer_from_string(const std::string& s) {
  if (s == "FBP" || s == "fbp") return Tracer::FBP;
  if (s == "FBB" || s == "fbb") return Tracer::FBB;
  if (s == "custom" || s == "Custom" || s == "CUSTOM") return Tracer::Custom;
  throw Error(ErrorCode::SchemaError, "unknown tracer '" + s + "'");
}

std::string tracer_to_string(Tracer t) {
  switch (t) {
    case Tracer::FBP: return "FBP";
    case Tracer::FBB: return "FBB";
    case Tracer::Custom: return "custom";
  }
  return "custom";
}

void TracerCalibration::validate() const {
  if (!(slope > 0.0))
    throw Error(ErrorCode::ConfigError, "calibration slope must be > 0");
  if (!std::isfinite(cutoff_cl))
    throw Error(ErrorCode::ConfigError, "calibration cutoff must be finite");
}

// Default slope/intercept values follow the published GAAIN-style linear
// conversions for each tracer; they are plain configuration and can be
// overridden per profile in the run config.
TracerCalibration TracerCalibration::fbp_default() {
  return {Tracer::FBP, 175.4, -182.3, 18.0};
}
TracerCalibration TracerCalibration::fbb_default() {
  return {Tracer::FBB, 153.4, -154.9, 12.0};
}
TracerCalibration TracerCalibration::oasis3_default() {
  return {Tracer::Custom, 93.7, -94.6, 20.6};
}

double compute_suvr(const Volume3D& pet, const BrainMask& target,
                    const BrainMask& reference) {
  if (!target.same_grid(pet) || !reference.same_grid(pet))
    throw Error(ErrorCode::GridMismatch, "masks must live on the PET grid");
  double target_sum = 0, ref_sum = 0;
  std::size_t target_n = 0, ref_n = 0;
  const auto& data = pet.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (target.at(i)) {
      target_sum += data[i];
      ++target_n;
    }
    if (reference.at(i)) {
      ref_sum += data[i];
      ++ref_n;
    }
  }
  if (target_n == 0 || ref_n == 0)
    throw Error(ErrorCode::EmptyMask, "SUVR masks must be nonempty");
  const double ref_mean = ref_sum / static_cast<double>(ref_n);
  if (std::abs(ref_mean) < 1e-12)
    throw Error(ErrorCode::ZeroReference, "reference region mean is ~0");
  return (target_sum / static_cast<double>(target_n)) / ref_mean;
}

double centiloid_from_suvr(double suvr, const TracerCalibration& cal) {
  cal.validate();
  return cal.slope * suvr + cal.intercept;
}

AmyloidStatus classify_status(double centiloid, const TracerCalibration& cal) {
  return centiloid >= cal.cutoff_cl ? AmyloidStatus::Positive
                                    : AmyloidStatus::Negative;
}

AmyloidResult quantify(const Volume3D& pet, const BrainMask& target,
                       const BrainMask& reference, const TracerCalibration& cal) {
  AmyloidResult r;
  r.tracer = cal.tracer;
  r.suvr = compute_suvr(pet, target, reference);
  r.centiloid = centiloid_from_suvr(r.suvr, cal);
  r.status = classify_status(r.centiloid, cal);
  return r;
}

}  // namespace nq
