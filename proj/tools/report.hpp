#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

namespace ctxattn::cli {

/// Bad flags, bad config values or missing inputs. Exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr const char* kReportDirEnv = "CTXATTN_REPORT_DIR";

struct Globals {
  std::uint64_t seed = 1;
  std::string report_dir = "reports";
};

/// Report directory after applying the environment override.
std::filesystem::path report_dir(const Globals& g);

/// Stable hash over the subcommand's effective option values.
std::string config_hash(const CLI::App& sub);

/// Common report header: command, tool version, seed, config hash.
nlohmann::json report_header(const CLI::App& sub, const Globals& g);

void write_report(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

void require_file(const std::string& path, const std::string& flag);

}  // namespace ctxattn::cli
