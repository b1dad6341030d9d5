#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "metasched/mlrsnet.hpp"

namespace metasched::mlrsnet {

inline constexpr int kCheckpointFormatVersion = 1;

/// A serialised meta-network plus provenance.
struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  Params params;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::string config_hash;  // lowercase hex

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// JSON text: format_version, hidden_size, gamma, params{<block name>: array},
/// step, seed, config_hash. Matrices are nested row arrays, biases flat.
/// Doubles are written in shortest round-trip form, so parsing restores
/// every bit.
std::string to_json_text(const Checkpoint& checkpoint);

/// Throws ParseError (location = byte offset) on malformed text and
/// IncompatibleVersionError on an unknown format_version.
Checkpoint parse_checkpoint(std::string_view text);

/// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metasched::mlrsnet
