#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "glann/tensor.hpp"

namespace glann {

// On-disk checkpoint container. Layout, all little-endian:
//
//   magic "GLCK" | u32 version | u64 epoch | u32 config_len | config JSON
//   | u32 n_tensors | tensors | u32 crc32
//
// each tensor:
//   u16 name_len | name | u8 dtype (0 = f32) | u8 ndim | u64 dims[ndim]
//   | payload (numel * 4 bytes, LE)
//
// The trailing crc32 covers every byte before it, magic included. Loading
// verifies magic, version and checksum before any payload is interpreted.
class Checkpoint {
 public:
  static constexpr uint32_t kVersion = 1;

  int64_t epoch = 0;
  std::string config_json;

  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;  // MissingTensorError
  const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  std::vector<uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<uint8_t>& bytes);

 private:
  std::vector<std::pair<std::string, Tensor>> tensors_;
};

}  // namespace glann
