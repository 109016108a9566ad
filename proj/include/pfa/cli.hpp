#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfa/config.hpp"

namespace pfa {

// Exit codes: 0 success, 1 unexpected failure, 2 config/argument error,
// 3 data error, 4 numerical failure. Failures print one line
// "error[<class>]: <message>" on `err`.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string code_version();

// Command, argv, resolved config, seed, code version and start time.
nlohmann::json run_manifest(const std::string& command, const std::vector<std::string>& args, const Config& config,
                            std::uint64_t seed);
// Writes the manifest; refuses to replace an existing one.
void write_run_manifest(const std::filesystem::path& path, const nlohmann::json& manifest);

// $PFA_RUN_DIR (or ./run) joined with a timestamp.
std::filesystem::path default_run_dir();

}  // namespace pfa
