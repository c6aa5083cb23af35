#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lsta/tensor.hpp"

namespace lsta {

// Binary model snapshot. Layout (all little-endian): magic "LSTACKP1",
// u32 version, u64 config hash, u32 config JSON length + bytes, u32 epoch,
// u64 PRNG state, tensor table (u32 count; per tensor u32 name length + name,
// u8 rank, u32 dims, f64 data), optimizer table in the same tensor-less
// format (u32 count; per entry name, u64 length, f64 data), u64 optimizer
// step count. save -> load -> save is byte-identical.
struct Checkpoint {
  uint32_t version = 1;
  uint64_t config_hash = 0;
  std::string config_json;
  uint32_t epoch = 0;
  uint64_t rng_state = 0;
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, std::vector<double>>> opt_state;
  uint64_t opt_steps = 0;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace lsta
