#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dgcvc/nn.hpp"

namespace dgcvc::ckpt {

// Single container format for every trained artifact: named parameter blobs,
// optimizer moments, normalization buffers, training step, a canonical config
// snapshot and a content hash verified on load.
struct Checkpoint {
  std::string config_text;
  uint64_t config_hash = 0;
  int64_t step = 0;
  std::map<std::string, std::string> meta;  // kind, variant, asv_config_hash, ...
  std::map<std::string, Mat> blobs;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  // hash of the saved byte stream (filled by save; recomputed by load)
  uint64_t content_hash = 0;
};

void put_params(Checkpoint& c, const nn::ParamList& params);
// shape-checked; throws on missing blob or architecture mismatch
void load_params(const Checkpoint& c, const nn::ParamList& params);

void put_buffers(Checkpoint& c, const std::vector<std::pair<std::string, Mat*>>& buffers);
void load_buffers(const Checkpoint& c, const std::vector<std::pair<std::string, Mat*>>& buffers);

void put_adam(Checkpoint& c, nn::Adam& opt);
void load_adam(const Checkpoint& c, nn::Adam& opt);

}  // namespace dgcvc::ckpt
