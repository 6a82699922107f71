#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace npdet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Little-endian layout:
//   "NPDK" | u32 version | u64 n, config text | u64 blobs | (u64 count, f32 x count)*
//   | u64 FNV-1a of every preceding byte
struct CheckpointData {
  std::string config_text;
  std::vector<std::vector<float>> blobs;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
// Throws BadMagicError, VersionMismatchError, TruncatedError or ChecksumError.
CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint_file(const CheckpointData& data, const std::filesystem::path& path);
CheckpointData read_checkpoint_file(const std::filesystem::path& path);  // IoError if unreadable

}  // namespace npdet
