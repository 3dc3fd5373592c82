#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vfm/nn.hpp"
#include "vfm/tensor.hpp"

namespace vfm {

inline constexpr int kCheckpointFormatVersion = 1;

// On-disk layout (little-endian):
//   8 bytes  magic "VFMCKPT\0"
//   u32      format_version
//   u64      header length in bytes
//   header   UTF-8 JSON: {"meta": {...}, "arrays": [{"name","shape","offset"}]}
//   payload  raw float64 arrays, offsets relative to payload start
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor& array(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void append_params(Checkpoint& ckpt, const nn::ConstParamRefs& params);
// Copies arrays into params by name; shapes must agree.
void restore_params(const Checkpoint& ckpt, const nn::ParamRefs& params);

}  // namespace vfm
