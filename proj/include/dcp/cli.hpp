#pragma once

namespace dcp {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the dcpclip tool. Returns 0 on success, 1 when a check or run
/// fails, 2 on a usage or configuration error.
int cli_main(int argc, char** argv);

}  // namespace dcp
