#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vfm {

enum class Errc {
  // data
  MissingFile,
  SchemaViolation,
  UnknownModality,
  DanglingPath,
  UnwritableOutputDir,
  UnwritablePath,
  DegenerateSplit,
  EmptyManifest,
  MixedModalities,
  CacheCorruption,
  CorruptCheckpoint,
  InsufficientExamples,
  SingleClassTrainSet,
  TooFewImages,
  InsufficientSynthetic,
  UnorderedCheckpoints,
  // config / contract
  InvalidSpec,
  ConfigError,
  IndivisibleImage,
  ShapeMismatch,
  DimMismatch,
  LayerOutOfRange,
  ModalityMismatch,
  CropLargerThanImage,
  NonPositiveInterval,
  SingleClass,
  NoPositives,
  CountMismatch,
  PanelMismatch,
  TooFewSamples,
  EmptyResponses,
  OutOfRangeClass,
  // numerical
  NonFiniteActivation,
  NonFiniteLoss,
  DivergedLoss,
};

std::string_view errc_name(Errc code);

// Process exit code used by the CLI for an error class: 2 config, 3 data, 4 numerical.
int exit_code_for(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  Errc code() const noexcept { return code_; }
  // The message without the error-name prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace vfm
