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

#ifndef NEUROQUANT_CORE_ERROR_H
#define NEUROQUANT_CORE_ERROR_H

#include <stdexcept>
#include <string>

namespace nq {

enum class ErrorCode {
  // file formats
  BadMagic,
  UnsupportedDatatype,
  TruncatedData,
  NonFinite,
  RangeOverflow,
  VersionMismatch,
  ConfigMismatch,
  SchemaError,
  // geometry / intensity
  ObliqueAffine,
  DegenerateIntensityRange,
  GridMismatch,
  ShapeMismatch,
  // masks and quantification
  EmptyMask,
  ZeroReference,
  EmptyOverlap,
  // cohort / statistics
  InsufficientSubjects,
  DegenerateGroup,
  SingleClass,
  TooSmall,
  FoldMismatch,
  // network
  NonFiniteActivation,
  NonFiniteGradient,
  NonFiniteLoss,
  SingleClassFold,
  ScorerChannelMismatch,
  // io / configuration
  IoError,
  ConfigError,
  Internal,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::RangeOverflow: return "RangeOverflow";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::ObliqueAffine: return "ObliqueAffine";
    case ErrorCode::DegenerateIntensityRange: return "DegenerateIntensityRange";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::ZeroReference: return "ZeroReference";
    case ErrorCode::EmptyOverlap: return "EmptyOverlap";
    case ErrorCode::InsufficientSubjects: return "InsufficientSubjects";
    case ErrorCode::DegenerateGroup: return "DegenerateGroup";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::FoldMismatch: return "FoldMismatch";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::SingleClassFold: return "SingleClassFold";
    case ErrorCode::ScorerChannelMismatch: return "ScorerChannelMismatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

}  // namespace nq

#endif
