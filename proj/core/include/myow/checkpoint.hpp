#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "myow/nn.hpp"

namespace myow {

/// Everything needed to resume a run bit-exactly: the canonical config text,
/// counters, every named tensor (params, buffers, optimizer slots, loader
/// state), and the raw RNG stream states.
struct Checkpoint {
  std::string config_text;
  long step = 0;
  long epoch = 0;
  long optimizer_steps = 0;
  NamedTensors tensors;
  std::vector<std::pair<std::string, std::array<std::uint64_t, 4>>> rng_states;
};

/// Little-endian chunked binary file; doubles are stored verbatim so a
/// save/load round trip is bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace myow
