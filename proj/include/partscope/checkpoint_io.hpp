#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "partscope/tensor.hpp"

namespace partscope {

// "PSEG" container: magic, u32 version, architecture descriptor string, u32
// K, then named parameter blocks (u32 name length, name, u32 ndims, u32 dims,
// row-major 64-bit floats). All integers little-endian. The segmenter stores
// model parameters; the trainer appends optimizer state under "opt." names.
struct CheckpointFile {
  std::string architecture;
  std::uint32_t k_parts = 0;
  std::vector<std::pair<std::string, Tensor>> blocks;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile load_checkpoint_file(const std::filesystem::path& path);

// Exact on-disk size of a checkpoint, for format tests.
std::size_t checkpoint_byte_size(const CheckpointFile& file);

}  // namespace partscope
