#pragma once

#include <string>
#include <utility>
#include <vector>

#include "reshape/nets.hpp"
#include "reshape/tensor.hpp"

namespace reshape {

// Checkpoint container: magic "RSGN", u32 format version, u64 header length,
// JSON header (kind, spec, step, seed, parameter manifest with shapes, extra
// metadata), then raw little-endian float32 payloads in manifest order.

struct CheckpointHeader {
  std::string kind;       // "generator" | "discriminator" | "train_state" | ...
  std::string spec_json;  // network spec, empty for composite checkpoints
  int64_t step = 0;
  uint64_t seed = 0;
  std::string extra_json;  // kind-specific metadata, "{}" when unused
};

void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);

struct LoadedCheckpoint {
  CheckpointHeader header;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Whole-network convenience wrappers.
void save_generator(const std::string& path, const Generator& g, int64_t step);
Generator load_generator(const std::string& path);
void save_discriminator(const std::string& path, const Discriminator& d, int64_t step);
Discriminator load_discriminator(const std::string& path);

/// Lists (name, &value) pairs of a store in creation order.
std::vector<std::pair<std::string, const Tensor*>> store_tensors(const ParamStore& store);

/// Copies checkpoint tensors into an existing store; throws on any mismatch.
void restore_store(ParamStore& store, const LoadedCheckpoint& ckpt,
                   const std::string& prefix = "");

}  // namespace reshape
