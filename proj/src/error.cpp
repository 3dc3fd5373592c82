#include "vfm/error.hpp"

namespace vfm {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::SchemaViolation: return "SchemaViolation";
    case Errc::UnknownModality: return "UnknownModality";
    case Errc::DanglingPath: return "DanglingPath";
    case Errc::UnwritableOutputDir: return "UnwritableOutputDir";
    case Errc::UnwritablePath: return "UnwritablePath";
    case Errc::DegenerateSplit: return "DegenerateSplit";
    case Errc::EmptyManifest: return "EmptyManifest";
    case Errc::MixedModalities: return "MixedModalities";
    case Errc::CacheCorruption: return "CacheCorruption";
    case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
    case Errc::InsufficientExamples: return "InsufficientExamples";
    case Errc::SingleClassTrainSet: return "SingleClassTrainSet";
    case Errc::TooFewImages: return "TooFewImages";
    case Errc::InsufficientSynthetic: return "InsufficientSynthetic";
    case Errc::UnorderedCheckpoints: return "UnorderedCheckpoints";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IndivisibleImage: return "IndivisibleImage";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::LayerOutOfRange: return "LayerOutOfRange";
    case Errc::ModalityMismatch: return "ModalityMismatch";
    case Errc::CropLargerThanImage: return "CropLargerThanImage";
    case Errc::NonPositiveInterval: return "NonPositiveInterval";
    case Errc::SingleClass: return "SingleClass";
    case Errc::NoPositives: return "NoPositives";
    case Errc::CountMismatch: return "CountMismatch";
    case Errc::PanelMismatch: return "PanelMismatch";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::EmptyResponses: return "EmptyResponses";
    case Errc::OutOfRangeClass: return "OutOfRangeClass";
    case Errc::NonFiniteActivation: return "NonFiniteActivation";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::DivergedLoss: return "DivergedLoss";
  }
  return "Unknown";
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::NonFiniteActivation:
    case Errc::NonFiniteLoss:
    case Errc::DivergedLoss:
      return 4;
    case Errc::InvalidSpec:
    case Errc::ConfigError:
    case Errc::IndivisibleImage:
    case Errc::ShapeMismatch:
    case Errc::DimMismatch:
    case Errc::LayerOutOfRange:
    case Errc::CropLargerThanImage:
    case Errc::NonPositiveInterval:
      return 2;
    default:
      return 3;
  }
}

}  // namespace vfm
