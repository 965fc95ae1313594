#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glann/tensor.hpp"

namespace glann {

// Procedurally rendered 28x28 digit corpus. Each sample is a stroke/arc
// skeleton for one of the glyphs 0-9, jittered (rotation, scale, shift,
// stroke width, control-point noise) and rasterised with an antialiased
// distance field. Pixels are in [-1,1] with background -1.
struct DigitCorpus {
  Tensor images;            // (count, 1, 28, 28)
  std::vector<int> labels;  // 0..9, drawn uniformly
};

DigitCorpus make_digit_corpus(int64_t count, uint64_t seed);

// One jittered sample of a specific glyph, shape (1, 28, 28).
Tensor render_digit(int digit, uint64_t seed);

// IDX serialisation (big-endian headers). Images must be (T,1,H,W) in
// [-1,1]; values map to bytes via round(255*(v+1)/2).
void write_idx_images(const std::string& path, const Tensor& images);
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

}  // namespace glann
