#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "adaprune/backbones.hpp"

namespace adaprune {

// Checkpoint container: 8-byte magic, little-endian u32 format version,
// u64 manifest length, JSON manifest (name/shape/dtype/offset per tensor
// plus free-form metadata), then raw little-endian f64 payloads.

struct CheckpointMeta {
  std::string network;
  std::string variant;
  std::string phase;
  std::map<std::string, std::string> extra;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const CheckpointMeta& meta,
                      std::span<const NamedTensor> entries);

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<NamedTensor> entries;
  const Tensor* find(const std::string& name) const;
};

/// DataError on bad magic, version mismatch or truncation; IoError when
/// the file cannot be opened.
Checkpoint read_checkpoint(const std::string& path);

/// FNV-1a over the file bytes; identifies the checkpoint in decision logs.
uint64_t file_hash(const std::string& path);

/// Parameters and buffers of a network under "param." / "buffer." prefixes.
std::vector<NamedTensor> network_state(Network& net);

/// Copies matching entries into the network. Shape mismatches raise
/// DataError naming the first offending tensor. With allow_missing, state
/// absent from the checkpoint (e.g. saliency heads when warm-starting from
/// an unpruned run) keeps its current initialisation.
void load_network_state(Network& net, const Checkpoint& ckpt, bool allow_missing);

}  // namespace adaprune
