#include "glann/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "glann/errors.hpp"

namespace glann {

namespace {

uint8_t to_byte(float v) {
  float b = std::round(255.0f * (v + 1.0f) / 2.0f);
  return static_cast<uint8_t>(std::clamp(b, 0.0f, 255.0f));
}

float from_byte(uint8_t b) { return static_cast<float>(b) / 255.0f * 2.0f - 1.0f; }

// Accept (C,H,W) or (1,C,H,W); return (C,H,W)-shaped view data pointer info.
const Tensor as_chw(const Tensor& image) {
  if (image.ndim() == 4) {
    if (image.dim(0) != 1)
      throw ArgumentError("save_image: expected a single image, got batch of " +
                          std::to_string(image.dim(0)));
    return image.reshaped({image.dim(1), image.dim(2), image.dim(3)});
  }
  if (image.ndim() != 3) throw ArgumentError("save_image: expected (C,H,W), got " + image.shape_string());
  return image;
}

}  // namespace

std::optional<Tensor> load_image(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) return std::nullopt;
  if (m.depth() != CV_8U) {
    cv::Mat tmp;
    double scale = m.depth() == CV_16U ? 1.0 / 257.0 : 1.0;
    m.convertTo(tmp, CV_8U, scale);
    m = tmp;
  }
  int64_t C = m.channels() >= 3 ? 3 : 1;
  int64_t H = m.rows, W = m.cols;
  Tensor t({C, H, W});
  for (int64_t y = 0; y < H; ++y) {
    const uint8_t* row = m.ptr<uint8_t>(static_cast<int>(y));
    for (int64_t x = 0; x < W; ++x) {
      if (C == 1) {
        t[y * W + x] = from_byte(row[x * m.channels()]);
      } else {
        // OpenCV stores BGR(A); emit RGB planes
        t[0 * H * W + y * W + x] = from_byte(row[x * m.channels() + 2]);
        t[1 * H * W + y * W + x] = from_byte(row[x * m.channels() + 1]);
        t[2 * H * W + y * W + x] = from_byte(row[x * m.channels() + 0]);
      }
    }
  }
  return t;
}

void save_image(const std::string& path, const Tensor& image) {
  Tensor t = as_chw(image);
  int64_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
  if (C != 1 && C != 3)
    throw ArgumentError("save_image: expected 1 or 3 channels, got " + std::to_string(C));
  cv::Mat m(static_cast<int>(H), static_cast<int>(W), C == 1 ? CV_8UC1 : CV_8UC3);
  for (int64_t y = 0; y < H; ++y) {
    uint8_t* row = m.ptr<uint8_t>(static_cast<int>(y));
    for (int64_t x = 0; x < W; ++x) {
      if (C == 1) {
        row[x] = to_byte(t[y * W + x]);
      } else {
        row[x * 3 + 0] = to_byte(t[2 * H * W + y * W + x]);  // B
        row[x * 3 + 1] = to_byte(t[1 * H * W + y * W + x]);  // G
        row[x * 3 + 2] = to_byte(t[0 * H * W + y * W + x]);  // R
      }
    }
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path, m);
  } catch (const cv::Exception& e) {
    throw FormatError("cannot write image: " + path + " (" + e.what() + ")");
  }
  if (!ok) throw FormatError("cannot write image: " + path);
}

Tensor make_image_grid(const Tensor& batch, int64_t cols) {
  if (batch.ndim() != 4) throw ArgumentError("make_image_grid: expected (N,C,H,W)");
  if (cols < 1) throw ArgumentError("make_image_grid: cols must be >= 1");
  int64_t N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  if (N == 0) throw ArgumentError("make_image_grid: empty batch");
  int64_t rows = (N + cols - 1) / cols;
  Tensor grid = Tensor::full({C, rows * H, cols * W}, -1.0f);
  for (int64_t n = 0; n < N; ++n) {
    int64_t gy = (n / cols) * H, gx = (n % cols) * W;
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
          grid[(c * rows * H + gy + y) * cols * W + gx + x] =
              batch[((n * C + c) * H + y) * W + x];
  }
  return grid;
}

void save_image_grid(const std::string& path, const Tensor& batch, int64_t cols) {
  save_image(path, make_image_grid(batch, cols));
}

Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w) {
  if (image.ndim() != 3) throw ArgumentError("resize_bilinear: expected (C,H,W)");
  if (out_h < 1 || out_w < 1) throw ArgumentError("resize_bilinear: degenerate target size");
  int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor out({C, out_h, out_w});
  double sy = static_cast<double>(H) / out_h, sx = static_cast<double>(W) / out_w;
  for (int64_t y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int64_t y0 = static_cast<int64_t>(std::floor(fy));
    double wy = fy - y0;
    int64_t y0c = std::clamp<int64_t>(y0, 0, H - 1), y1c = std::clamp<int64_t>(y0 + 1, 0, H - 1);
    for (int64_t x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int64_t x0 = static_cast<int64_t>(std::floor(fx));
      double wx = fx - x0;
      int64_t x0c = std::clamp<int64_t>(x0, 0, W - 1), x1c = std::clamp<int64_t>(x0 + 1, 0, W - 1);
      for (int64_t c = 0; c < C; ++c) {
        const float* p = image.data() + c * H * W;
        double top = (1.0 - wx) * p[y0c * W + x0c] + wx * p[y0c * W + x1c];
        double bot = (1.0 - wx) * p[y1c * W + x0c] + wx * p[y1c * W + x1c];
        out[(c * out_h + y) * out_w + x] = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Tensor center_crop(const Tensor& image, int64_t h, int64_t w) {
  if (image.ndim() != 3) throw ArgumentError("center_crop: expected (C,H,W)");
  int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (h > H || w > W)
    throw ArgumentError("center_crop: window " + std::to_string(h) + "x" + std::to_string(w) +
                        " exceeds image " + std::to_string(H) + "x" + std::to_string(W));
  int64_t oy = (H - h) / 2, ox = (W - w) / 2;
  Tensor out({C, h, w});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        out[(c * h + y) * w + x] = image[(c * H + oy + y) * W + ox + x];
  return out;
}

void save_unit_square_plot(const std::string& path,
                           const std::vector<std::pair<double, double>>& curve,
                           const std::vector<std::pair<double, double>>& marks,
                           int64_t size) {
  const int64_t margin = size / 10;
  const int64_t span = size - 2 * margin;
  Tensor canvas = Tensor::full({3, size, size}, 1.0f);  // white

  auto put = [&](int64_t x, int64_t y, float r, float g, float b) {
    if (x < 0 || x >= size || y < 0 || y >= size) return;
    canvas[(0 * size + y) * size + x] = r;
    canvas[(1 * size + y) * size + x] = g;
    canvas[(2 * size + y) * size + x] = b;
  };
  // data coords (u,v) in [0,1]^2; v axis points up
  auto px = [&](double u) { return margin + static_cast<int64_t>(std::lround(u * span)); };
  auto py = [&](double v) { return size - margin - static_cast<int64_t>(std::lround(v * span)); };

  auto line = [&](double u0, double v0, double u1, double v1, float r, float g, float b) {
    int64_t x0 = px(u0), y0 = py(v0), x1 = px(u1), y1 = py(v1);
    int64_t steps = std::max<int64_t>(std::abs(x1 - x0), std::abs(y1 - y0)) + 1;
    for (int64_t s = 0; s <= steps; ++s) {
      double t = static_cast<double>(s) / steps;
      put(x0 + static_cast<int64_t>(std::lround(t * (x1 - x0))),
          y0 + static_cast<int64_t>(std::lround(t * (y1 - y0))), r, g, b);
    }
  };

  // axes and unit-square frame
  line(0, 0, 1, 0, 0, 0, 0);
  line(0, 0, 0, 1, 0, 0, 0);
  line(1, 0, 1, 1, 0.7f, 0.7f, 0.7f);
  line(0, 1, 1, 1, 0.7f, 0.7f, 0.7f);
  // gridlines every 0.25
  for (int i = 1; i < 4; ++i) {
    line(0.25 * i, 0, 0.25 * i, 1, 0.9f, 0.9f, 0.9f);
    line(0, 0.25 * i, 1, 0.25 * i, 0.9f, 0.9f, 0.9f);
  }

  for (size_t i = 0; i + 1 < curve.size(); ++i)
    line(curve[i].first, curve[i].second, curve[i + 1].first, curve[i + 1].second, 0.1f,
         0.2f, 0.8f);

  for (const auto& [u, v] : marks) {
    int64_t cx = px(u), cy = py(v);
    for (int64_t dy = -3; dy <= 3; ++dy)
      for (int64_t dx = -3; dx <= 3; ++dx) put(cx + dx, cy + dy, 0.85f, 0.15f, 0.1f);
  }

  save_image(path, canvas);
}

}  // namespace glann
