#include "report.hpp"

#include <cstdlib>

#include "ctxattn/checkpoint.hpp"

namespace ctxattn::cli {

std::filesystem::path report_dir(const Globals& g) {
  if (const char* env = std::getenv(kReportDirEnv); env && *env) return env;
  return g.report_dir;
}

std::string config_hash(const CLI::App& sub) {
  // default_also=true so unspecified options still enter the hash
  return hex64(fnv1a(sub.get_name() + "\n" + sub.config_to_str(true, false)));
}

nlohmann::json report_header(const CLI::App& sub, const Globals& g) {
  return {{"command", sub.get_name()},
          {"version", CTXATTN_VERSION},
          {"checkpoint_format", Checkpoint::kVersion},
          {"seed", g.seed},
          {"config_hash", config_hash(sub)}};
}

void write_report(const std::filesystem::path& path, const std::string& text) { atomic_write(path, text); }

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { atomic_write(path, j.dump(2) + "\n"); }

void require_file(const std::string& path, const std::string& flag) {
  if (path.empty()) throw ValidationError(flag + " is required");
  if (!std::filesystem::is_regular_file(path)) throw ValidationError(flag + ": no such file '" + path + "'");
}

}  // namespace ctxattn::cli
