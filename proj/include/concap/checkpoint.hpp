#pragma once

#include <string>

#include "concap/nn.hpp"

namespace concap {

// Binary checkpoint: magic string, version, then records sorted by name of
// (name length, name, rank, dims, little-endian 64-bit float payload).
std::string checkpoint_bytes(nn::Params& params);
void save_checkpoint(const std::string& path, nn::Params& params);

// Loads into an existing parameter registry; names and shapes must match
// the model built from the accompanying config exactly.
void load_checkpoint(const std::string& path, nn::Params& params);

}  // namespace concap
