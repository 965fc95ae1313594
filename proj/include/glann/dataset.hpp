#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glann/tensor.hpp"

namespace glann {

// One minibatch: pixels (count, C, H, W) in [-1,1], ids index the source
// dataset and stay stable across epochs.
struct ImageBatch {
  Tensor pixels;
  std::vector<int64_t> ids;
  int64_t count() const { return static_cast<int64_t>(ids.size()); }
};

// Fully materialized dataset (desk scale keeps everything in memory).
// Read-only after construction; minibatch order is a pure function of
// (seed, epoch).
class DatasetHandle {
 public:
  // IDX image file (big-endian magic 0x00000803). Bytes map linearly from
  // [0,255] to [-1,1]. `limit` > 0 keeps only the first `limit` images.
  static DatasetHandle load_idx(const std::string& path, uint64_t seed = 0, int64_t limit = 0);

  // Directory of raster images, lexicographic filename order. Short side is
  // bilinearly scaled to `size`, then the center size x size window is kept.
  // Undecodable files are skipped with a warning on stderr.
  static DatasetHandle load_image_dir(const std::string& path, int64_t size, uint64_t seed = 0);

  // In-memory dataset from a (T,C,H,W) tensor already in [-1,1].
  static DatasetHandle from_tensor(Tensor images, std::string name = "memory",
                                   uint64_t seed = 0);

  int64_t count() const { return images_.empty() ? 0 : images_.dim(0); }
  int64_t channels() const { return images_.dim(1); }
  int64_t height() const { return images_.dim(2); }
  int64_t width() const { return images_.dim(3); }
  const Tensor& images() const { return images_; }
  const std::string& source() const { return source_; }
  uint64_t seed() const { return seed_; }

  // Gather rows by dataset id, preserving order.
  ImageBatch batch(const std::vector<int64_t>& ids) const;

 private:
  Tensor images_;  // (T,C,H,W)
  std::string source_;
  uint64_t seed_ = 0;
};

// Epoch permutation of 0..T-1 as a pure function of (seed, epoch).
std::vector<int64_t> epoch_order(const DatasetHandle& data, int64_t epoch);

// Split one epoch into batches of `batch` ids (last one may be smaller).
std::vector<ImageBatch> minibatches(const DatasetHandle& data, int64_t batch, int64_t epoch);

// IDX label file (big-endian magic 0x00000801), one byte per label.
std::vector<int> load_idx_labels(const std::string& path, int64_t limit = 0);

}  // namespace glann
