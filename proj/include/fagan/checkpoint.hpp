#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "fagan/networks.hpp"
#include "fagan/optimizer.hpp"

namespace fagan {

// On-disk layout (all integers little-endian):
//
//   "FAGN"  u32 version
//   u32 len, fingerprint bytes
//   u32 len, metadata JSON (network/train config, schema)
//   u64 step
//   u32 count, then per tensor: u8 partition, u8 trainable, name, tensor
//   u32 count, then per optimizer entry: u8 partition, name, i64 step,
//               u8 has_moments, [tensor exp_avg, tensor exp_avg_sq]
//   u32 len, rng state (textual engine state)
//   footer: u64 payload length, u32 crc32 of payload
//
// where name = u32 len + bytes and tensor = u8 dtype, u32 ndim, i64 dims...,
// u64 byte count, raw data.
inline constexpr char kCheckpointMagic[4] = {'F', 'A', 'G', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParameterStore store;
  OptimizerState optimizer;
  std::uint64_t step = 0;
  std::string rng_state;
  std::string fingerprint;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path);

// Verifies magic, version, length and checksum. Throws CheckpointError.
Checkpoint read_checkpoint(const std::filesystem::path& path);

// read_checkpoint plus FingerprintMismatch when the stored fingerprint differs
// from `expected_fingerprint`.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::string& expected_fingerprint);

}  // namespace fagan
