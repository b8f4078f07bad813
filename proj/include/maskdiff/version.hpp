#pragma once

namespace maskdiff {

inline constexpr const char* kToolVersion = "0.1.0";

// Checkpoint container format. Loaders accept any file whose major version
// matches; minor bumps must stay readable.
inline constexpr int kCheckpointMajor = 1;
inline constexpr int kCheckpointMinor = 0;

}  // namespace maskdiff
