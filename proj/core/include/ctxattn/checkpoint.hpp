#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxattn/nnmodel.hpp"

namespace ctxattn {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  Parameters m;
  Parameters v;
  std::uint64_t step = 0;

  bool operator==(const AdamState&) const = default;
};

/// Serialized model. Parameter values are rounded to float32 on capture so
/// that a save/load round trip is bit-exact.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  Hyperparams hyperparams;
  Parameters params;
  std::optional<AdamState> optimizer;
  std::uint64_t seed = 0;
  std::string rng_state;  // textual std::mt19937_64 state, may be empty
  std::vector<std::string> vocab;  // non-reserved tokens, may be empty
  std::optional<ContextConfig> context;

  static Checkpoint capture(const Transformer& model, std::uint64_t seed);
  Transformer model() const;
  bool operator==(const Checkpoint&) const = default;
};

/// Layout: 8-byte magic "CTXATTN\0", uint32 version, uint64 header length,
/// UTF-8 JSON header (hyperparams, tensor names and shapes, metadata), then
/// little-endian float32 arrays in header order.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// Writes to a sibling temporary file then renames over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, used for report hashes and per-item seeds.
std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace ctxattn
