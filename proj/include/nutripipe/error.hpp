// Copyright 2026 The Nutripipe Authors. All Rights Reserved.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nutripipe {

enum class ErrorCode {
  kInvalidArgument,
  kIo,
  kConfig,
  // food_db
  kMissingColumn,
  kBadNumeric,
  kDuplicateId,
  // embeddings
  kDimTooSmall,
  kBadMagic,
  kDimMismatch,
  kTruncatedFile,
  // matcher
  kEmptySample,
  kMissingVector,
  // corpus
  kMissingRequiredKey,
  kNotEnoughNonResonant,
  // statistics
  kDegenerateTable,
  kZeroVariance,
  // model
  kSingleClassInput,
  kFeatureMaskMismatch,
  kResampleExhaustion,
  kClassTooSmall,
  // explain
  kTooManyFeatures,
  kEmptyBackground,
  kHeterogeneousMask,
  // pipeline
  kStageFailure,
  kIncompleteRun,
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kConfig: return "Config";
    case ErrorCode::kMissingColumn: return "MissingColumn";
    case ErrorCode::kBadNumeric: return "BadNumeric";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kDimTooSmall: return "DimTooSmall";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kEmptySample: return "EmptySample";
    case ErrorCode::kMissingVector: return "MissingVector";
    case ErrorCode::kMissingRequiredKey: return "MissingRequiredKey";
    case ErrorCode::kNotEnoughNonResonant: return "NotEnoughNonResonant";
    case ErrorCode::kDegenerateTable: return "DegenerateTable";
    case ErrorCode::kZeroVariance: return "ZeroVariance";
    case ErrorCode::kSingleClassInput: return "SingleClassInput";
    case ErrorCode::kFeatureMaskMismatch: return "FeatureMaskMismatch";
    case ErrorCode::kResampleExhaustion: return "ResampleExhaustion";
    case ErrorCode::kClassTooSmall: return "ClassTooSmall";
    case ErrorCode::kTooManyFeatures: return "TooManyFeatures";
    case ErrorCode::kEmptyBackground: return "EmptyBackground";
    case ErrorCode::kHeterogeneousMask: return "HeterogeneousMask";
    case ErrorCode::kStageFailure: return "StageFailure";
    case ErrorCode::kIncompleteRun: return "IncompleteRun";
  }
  return "Unknown";
}

// All library failures are reported through this exception. The code is
// stable and meant for programmatic dispatch (tests, CLI exit codes).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nutripipe
