#pragma once

// Command-line entry point: preprocess, synth, train, predict, evaluate.
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace tof::cli {

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

/// Applies "a.b.c=value" overrides onto `config`. Every key must already
/// exist; values parse as JSON, falling back to a plain string.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides);

}  // namespace tof::cli
