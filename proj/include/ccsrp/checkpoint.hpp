#pragma once

#include <string>

#include "ccsrp/attack.hpp"
#include "ccsrp/network.hpp"

namespace ccsrp {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint file: a JSON manifest (layer specs, LIF config, block byte
// offsets), a NUL byte, then raw little-endian float32 weight/bias blocks
// in layer order. Offsets are relative to the first byte after the NUL.
// Round-trips bit-exactly.
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

// Adversarial dataset persistence: same float-block scheme with a JSON
// manifest holding labels, provenance, and the attack config used.
void save_adv_dataset(const AdvDataset& da, const AttackConfig& cfg,
                      const std::string& path);
AdvDataset load_adv_dataset(const std::string& path,
                            AttackConfig* cfg_out = nullptr);

// Atomic write: write to path + ".tmp" then rename.
void atomic_write_text(const std::string& path, const std::string& content);

}  // namespace ccsrp
