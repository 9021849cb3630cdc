#pragma once

#include <string>
#include <vector>

namespace mpose {

// Parses argv and runs one subcommand, mapping every failure to the
// documented exit codes: 0 success, 1 runtime error, 2 usage error,
// 3 training divergence, 4 checkpoint mismatch, 5 evaluation mismatch,
// 6 one-shot / sliding-window disagreement.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& argv);

} // namespace mpose
