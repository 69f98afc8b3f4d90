#pragma once

#include <string>
#include <utility>
#include <vector>

#include "probact/tensor.hpp"

namespace probact::io {

// Versioned binary container. Layout (all integers little-endian):
//   magic "PBCK" | u32 version | u32 real width (bytes)
//   u64 config length | config bytes (the run's JSON document)
//   u64 pass count | u64 epochs completed | u64 optimizer step count
//   u8 has-optimizer
//   three tensor sections: parameters, buffers, optimizer state
// Tensor section: u64 count, then per tensor
//   u64 name length | name bytes | u32 rank | u64 dims[rank] | raw values.
// Values are stored at the build's real width; loading at a different width
// is a checkpoint error (round trips must be bit-exact, not approximate).
struct Checkpoint {
  std::string config_json;
  std::uint64_t pass_count = 0;
  std::uint64_t epochs_completed = 0;
  std::uint64_t optimizer_steps = 0;
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, Tensor>> buffers;
  std::vector<std::pair<std::string, Tensor>> optimizer;  // empty when absent
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace probact::io
