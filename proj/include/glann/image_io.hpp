#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "glann/tensor.hpp"

namespace glann {

// Raster I/O and pixel-space geometry. Tensors are (C,H,W) or (N,C,H,W),
// C = 1 or 3, values in [-1,1]. Files use the x -> round(255*(x+1)/2) byte
// mapping; loading inverts it as b -> b/255*2-1.

// Decode one image file; empty optional if the file cannot be decoded.
std::optional<Tensor> load_image(const std::string& path);

// Encode a single (C,H,W) or (1,C,H,W) image; format from the extension.
void save_image(const std::string& path, const Tensor& image);

// Write a batch as one row-major grid with `cols` images per row.
void save_image_grid(const std::string& path, const Tensor& batch, int64_t cols);

// In-memory grid assembly (grid rows x cols, missing cells filled with -1).
Tensor make_image_grid(const Tensor& batch, int64_t cols);

// Bilinear resample of (C,H,W) to (out_h, out_w), half-pixel-center mapping.
Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w);

// Central (h, w) window of a (C,H,W) image.
Tensor center_crop(const Tensor& image, int64_t h, int64_t w);

// Scatter/line plot on the unit square: curve points joined in order, marks
// drawn as filled squares. Used for precision-recall curve rasters.
void save_unit_square_plot(const std::string& path,
                           const std::vector<std::pair<double, double>>& curve,
                           const std::vector<std::pair<double, double>>& marks,
                           int64_t size = 512);

}  // namespace glann
