#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ssdrl/adam.h"
#include "ssdrl/param_store.h"
#include "ssdrl/rng.h"

// Binary checkpoint, little-endian, no padding:
//
//   "SSDM"  u32 version  u64 config_digest  u32 flags  u64 iteration
//   u32 n_tensors  { str name  u32 rank  u64 extents[rank]  f32 data[numel] }
//   u32 n_counters { str name  i64 value }
//   u32 n_rngs     { str name  str state }
//   u64 checksum   (FNV-1a of every preceding byte)
//
// where str is u32 length followed by the bytes. Adam moments are stored as
// tensors named "<param>/adam_m" and "<param>/adam_v".

namespace ssdrl {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kCheckpointDowncast = 1u << 0;  // source was 64-bit

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  friend bool operator==(const CheckpointTensor&, const CheckpointTensor&) = default;
};

struct Checkpoint {
  std::uint64_t config_digest = 0;
  std::uint32_t flags = 0;
  std::uint64_t iteration = 0;
  std::vector<CheckpointTensor> tensors;
  std::vector<std::pair<std::string, std::int64_t>> counters;
  std::vector<std::pair<std::string, std::string>> rngs;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);

// Throws IntegrityError (with the byte offset) on truncation, bad magic,
// unsupported version or checksum mismatch.
Checkpoint decode_checkpoint(const std::string& bytes);

// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameter values plus both Adam moments of every entry.
template <typename T>
void store_params(Checkpoint& ck, const ParamStore<T>& store);

// Restores values and moments. Throws IntegrityError when a parameter is
// missing or its shape differs.
template <typename T>
void restore_params(const Checkpoint& ck, ParamStore<T>& store);

void store_counter(Checkpoint& ck, const std::string& name, std::int64_t value);
std::int64_t find_counter(const Checkpoint& ck, const std::string& name);
void store_rng(Checkpoint& ck, const std::string& name, const Rng& rng);
void restore_rng(const Checkpoint& ck, const std::string& name, Rng& rng);

}  // namespace ssdrl
