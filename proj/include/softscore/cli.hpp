#pragma once

#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "softscore/optimizer.hpp"

namespace softscore::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kInputError = 1;
inline constexpr int kNumericError = 2;

// args excludes the program name. Never throws; maps failures to exit codes.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

OptimizerConfig optimizer_config_from_json(const nlohmann::json& doc);
nlohmann::json optimizer_config_to_json(const OptimizerConfig& config);

std::string sha256_hex(const std::string& data);

}  // namespace softscore::cli
