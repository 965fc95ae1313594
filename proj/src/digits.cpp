#include "glann/digits.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "glann/errors.hpp"
#include "glann/rng.hpp"

namespace glann {

namespace {

constexpr int kSize = 28;
constexpr float kPi = 3.14159265358979323846f;

using Pt = std::array<float, 2>;
using Stroke = std::vector<Pt>;  // polyline in unit coordinates, y down

void add_arc(std::vector<Stroke>& strokes, float cx, float cy, float rx, float ry,
             float deg0, float deg1) {
  int n = std::max(8, static_cast<int>(std::ceil(std::abs(deg1 - deg0) / 10.0f)));
  Stroke s;
  s.reserve(static_cast<size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    float a = (deg0 + (deg1 - deg0) * static_cast<float>(i) / static_cast<float>(n)) * kPi / 180.0f;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  strokes.push_back(std::move(s));
}

// Glyph skeletons live in the unit square with y pointing down; the outer
// ~0.12 band is left empty so jitter rarely clips.
std::vector<Stroke> glyph(int digit) {
  std::vector<Stroke> s;
  switch (digit) {
    case 0:
      add_arc(s, 0.50f, 0.50f, 0.28f, 0.38f, 0, 360);
      break;
    case 1:
      s.push_back({{0.36f, 0.30f}, {0.55f, 0.14f}, {0.55f, 0.86f}});
      break;
    case 2:
      add_arc(s, 0.50f, 0.34f, 0.21f, 0.21f, 150, 385);
      s.push_back({{0.68f, 0.44f}, {0.31f, 0.84f}, {0.73f, 0.84f}});
      break;
    case 3:
      add_arc(s, 0.47f, 0.32f, 0.21f, 0.21f, -120, 110);
      add_arc(s, 0.47f, 0.66f, 0.22f, 0.22f, -110, 120);
      break;
    case 4:
      s.push_back({{0.64f, 0.14f}, {0.32f, 0.60f}, {0.78f, 0.60f}});
      s.push_back({{0.64f, 0.30f}, {0.64f, 0.86f}});
      break;
    case 5:
      s.push_back({{0.68f, 0.16f}, {0.34f, 0.16f}, {0.32f, 0.46f}});
      add_arc(s, 0.47f, 0.63f, 0.24f, 0.23f, -110, 120);
      break;
    case 6:
      add_arc(s, 0.48f, 0.64f, 0.22f, 0.22f, 0, 360);
      add_arc(s, 0.66f, 0.55f, 0.38f, 0.42f, 195, 270);
      break;
    case 7:
      s.push_back({{0.28f, 0.16f}, {0.72f, 0.16f}, {0.40f, 0.86f}});
      break;
    case 8:
      add_arc(s, 0.50f, 0.32f, 0.19f, 0.19f, 0, 360);
      add_arc(s, 0.50f, 0.68f, 0.23f, 0.21f, 0, 360);
      break;
    case 9:
      add_arc(s, 0.52f, 0.36f, 0.21f, 0.21f, 0, 360);
      add_arc(s, 0.34f, 0.45f, 0.38f, 0.42f, -15, 60);
      break;
    default:
      throw ArgumentError("digit must be in 0..9, got " + std::to_string(digit));
  }
  return s;
}

float dist_to_segment(float px, float py, Pt a, Pt b) {
  float vx = b[0] - a[0], vy = b[1] - a[1];
  float wx = px - a[0], wy = py - a[1];
  float vv = vx * vx + vy * vy;
  float t = vv > 0 ? std::clamp((wx * vx + wy * vy) / vv, 0.0f, 1.0f) : 0.0f;
  float dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

void render_into(float* out, int digit, Rng& rng) {
  std::vector<Stroke> strokes = glyph(digit);

  float rot = (rng.uniform_f() * 2.0f - 1.0f) * 0.12f;
  float scale = 0.88f + rng.uniform_f() * 0.20f;
  float tx = (rng.uniform_f() * 2.0f - 1.0f) * 1.8f / (kSize - 1);
  float ty = (rng.uniform_f() * 2.0f - 1.0f) * 1.8f / (kSize - 1);
  float half_width = 0.045f + rng.uniform_f() * 0.030f;  // stroke half-width, unit coords
  float c = std::cos(rot), sn = std::sin(rot);

  for (auto& stroke : strokes)
    for (auto& p : stroke) {
      float wobble_x = rng.normal_f() * 0.010f;
      float wobble_y = rng.normal_f() * 0.010f;
      float x = p[0] - 0.5f + wobble_x, y = p[1] - 0.5f + wobble_y;
      p[0] = 0.5f + scale * (c * x - sn * y) + tx;
      p[1] = 0.5f + scale * (sn * x + c * y) + ty;
    }

  float px_scale = static_cast<float>(kSize - 1);
  float th_px = half_width * px_scale;
  const float aa = 1.0f;  // one-pixel antialiasing ramp
  for (int y = 0; y < kSize; ++y)
    for (int x = 0; x < kSize; ++x) {
      float ux = static_cast<float>(x), uy = static_cast<float>(y);
      float d = 1e30f;
      for (const auto& stroke : strokes)
        for (size_t i = 0; i + 1 < stroke.size(); ++i) {
          Pt a = {stroke[i][0] * px_scale, stroke[i][1] * px_scale};
          Pt b = {stroke[i + 1][0] * px_scale, stroke[i + 1][1] * px_scale};
          d = std::min(d, dist_to_segment(ux, uy, a, b));
        }
      float alpha = std::clamp((th_px - d) / aa + 0.5f, 0.0f, 1.0f);
      out[y * kSize + x] = alpha * 2.0f - 1.0f;
    }
}

uint8_t to_byte(float v) {
  float b = std::round((std::clamp(v, -1.0f, 1.0f) + 1.0f) * 0.5f * 255.0f);
  return static_cast<uint8_t>(b);
}

void write_be32(std::ofstream& f, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v >> 24), static_cast<uint8_t>(v >> 16),
                  static_cast<uint8_t>(v >> 8), static_cast<uint8_t>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

DigitCorpus make_digit_corpus(int64_t count, uint64_t seed) {
  if (count < 1) throw ArgumentError("make_digit_corpus: count must be >= 1");
  DigitCorpus corpus;
  corpus.images = Tensor({count, 1, kSize, kSize});
  corpus.labels.resize(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, "digit", static_cast<uint64_t>(i)));
    int digit = static_cast<int>(rng.below(10));
    corpus.labels[static_cast<size_t>(i)] = digit;
    render_into(corpus.images.data() + i * kSize * kSize, digit, rng);
  }
  return corpus;
}

Tensor render_digit(int digit, uint64_t seed) {
  Tensor out({1, kSize, kSize});
  Rng rng(seed);
  render_into(out.data(), digit, rng);
  return out;
}

void write_idx_images(const std::string& path, const Tensor& images) {
  if (images.ndim() != 4 || images.dim(1) != 1)
    throw ArgumentError("write_idx_images: expected (T,1,H,W), got " + images.shape_string());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open for write: " + path);
  write_be32(f, 0x00000803u);
  write_be32(f, static_cast<uint32_t>(images.dim(0)));
  write_be32(f, static_cast<uint32_t>(images.dim(2)));
  write_be32(f, static_cast<uint32_t>(images.dim(3)));
  std::vector<uint8_t> bytes(static_cast<size_t>(images.numel()));
  for (int64_t i = 0; i < images.numel(); ++i) bytes[static_cast<size_t>(i)] = to_byte(images[i]);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed: " + path);
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open for write: " + path);
  write_be32(f, 0x00000801u);
  write_be32(f, static_cast<uint32_t>(labels.size()));
  for (int v : labels) {
    if (v < 0 || v > 255) throw ArgumentError("label out of byte range");
    uint8_t b = static_cast<uint8_t>(v);
    f.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!f) throw FormatError("write failed: " + path);
}

}  // namespace glann
