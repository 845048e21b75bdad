#pragma once

// Versioned binary checkpoint. Layout, all integers little-endian:
//   "MMTF" magic, u32 version, u64 parameter count
//   per parameter: u32 name length, name bytes, u32 rank, u64 dims..., f64 payload
//   trailer: u64 step, u8 norm mode, f64 mean, f64 std, u8 std substituted,
//            u64 config length, config JSON bytes

#include <cstdint>
#include <filesystem>
#include <string>

#include "mmtfd/datapipe.hpp"
#include "mmtfd/tensor.hpp"

namespace mmtfd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  Params params;
  NormStats norm;
  std::string config_json;
  std::uint64_t step = 0;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

// Byte-level serialization, used by save/load and for bitwise comparison.
std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace mmtfd
