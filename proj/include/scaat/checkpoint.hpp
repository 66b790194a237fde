#pragma once

// SCT1 parameter checkpoints.
//
// Layout, all integers little-endian:
//   "SCT1"
//   repeated until end of file:
//     u32 name length, name bytes,
//     u32 rank, u32 extents[rank],
//     f32 values[product(extents)]

#include "scaat/model.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace scaat {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

/// Loads a checkpoint and checks it against the parameter layout of `spec`.
ParamSet<float> load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec,
                                bool trainable = false);

}  // namespace scaat
