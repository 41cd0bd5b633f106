#pragma once

// Single-file checkpoint container:
//
//   magic "SCINCKPT" | u32 version | u64 config hash | u64 step |
//   u64 payload size | payload bytes | u32 CRC-32 of everything before it
//
// Integers are little-endian. The payload is opaque here (the trainer stores
// a torch archive in it).

#include <cstdint>
#include <filesystem>
#include <string>

namespace scinet {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  uint32_t version = kCheckpointVersion;
  uint64_t config_hash = 0;
  uint64_t step = 0;
};

struct CheckpointFile {
  CheckpointHeader header;
  std::string payload;
};

// Writes to a sibling temporary file and renames it into place, so a crash
// never leaves a half-written checkpoint under `path`. Parent directories are
// created.
void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);

// Missing file -> IoError. Bad magic, unsupported version, truncation or CRC
// mismatch -> IntegrityError.
CheckpointFile read_checkpoint(const std::filesystem::path& path);

// Throws ConfigError when the stored hash differs from `expected`.
void require_config_hash(const CheckpointHeader& header, uint64_t expected,
                         const std::filesystem::path& path);

}  // namespace scinet
