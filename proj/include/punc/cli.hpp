#pragma once

#include <ostream>

namespace punc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Subcommands: prepare-data, pretrain, train, train-adversarial, evaluate,
// predict. Every subcommand accepts --seed, --config and --out-dir.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace punc
