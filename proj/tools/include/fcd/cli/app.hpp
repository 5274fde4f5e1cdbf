#pragma once

#include <string>
#include <vector>

namespace fcd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInputError = 2;

/// Entry point of fcd_pipeline. Subcommands: synth, preprocess, extract,
/// pretrain, train, evaluate, ablate, render. Returns the process exit code.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace fcd::cli
