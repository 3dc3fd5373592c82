#pragma once

namespace vfm {

inline constexpr const char* kArtifactVersion = "0.1.0";

}  // namespace vfm
