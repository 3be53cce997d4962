#pragma once

#include <string>
#include <vector>

#include "fcac/config.hpp"
#include "fcac/protocol.hpp"

namespace fcac::cli {

// Exit codes: 0 success, 1 validation error, 2 runtime/divergence error,
// 3 verification failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitVerification = 3;

int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // without argv[0]

// Report renderings, exposed for tests.
std::string report_csv(const protocol::RunReport& report);
nlohmann::json report_json(const protocol::RunReport& report, const config::RunConfig& cfg);

}  // namespace fcac::cli
