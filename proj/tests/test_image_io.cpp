#include "glann/image_io.hpp"

#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "glann/errors.hpp"
#include "test_util.hpp"

using namespace glann;
using namespace glann::test;

namespace {

float from_byte(int b) { return static_cast<float>(b) / 255.0f * 2.0f - 1.0f; }

// Snap a float to the nearest representable byte value (what one encode
// round trip does to arbitrary inputs).
float quantized(float v) {
  float b = std::round(255.0f * (std::clamp(v, -1.0f, 1.0f) + 1.0f) / 2.0f);
  return from_byte(static_cast<int>(b));
}

}  // namespace

TEST_SUITE_BEGIN("image_io");

TEST_CASE("png round trip is exact on byte-representable values") {
  auto dir = temp_dir("imageio");
  Tensor gray({1, 3, 2});
  std::vector<int> bytes = {0, 1, 127, 128, 254, 255};
  for (size_t i = 0; i < bytes.size(); ++i) gray[static_cast<int64_t>(i)] = from_byte(bytes[i]);

  auto path = (dir / "gray.png").string();
  save_image(path, gray);
  auto back = load_image(path);
  REQUIRE(back.has_value());
  REQUIRE(back->same_shape(gray));
  for (int64_t i = 0; i < gray.numel(); ++i) CHECK((*back)[i] == gray[i]);
}

TEST_CASE("color channels survive the BGR storage order") {
  auto dir = temp_dir("imageio");
  Tensor rgb({3, 2, 2});
  for (int64_t i = 0; i < rgb.numel(); ++i)
    rgb[i] = from_byte(static_cast<int>((i * 17 + 3) % 256));

  auto path = (dir / "color.png").string();
  save_image(path, rgb);
  auto back = load_image(path);
  REQUIRE(back.has_value());
  REQUIRE(back->same_shape(rgb));
  for (int64_t i = 0; i < rgb.numel(); ++i) CHECK((*back)[i] == rgb[i]);
}

TEST_CASE("arbitrary floats land on their nearest byte") {
  auto dir = temp_dir("imageio");
  Tensor img = random_tensor({1, 4, 4}, 99, 0.7f);
  auto path = (dir / "quant.png").string();
  save_image(path, img);
  auto back = load_image(path);
  REQUIRE(back.has_value());
  for (int64_t i = 0; i < img.numel(); ++i) CHECK((*back)[i] == quantized(img[i]));
}

TEST_CASE("save accepts a singleton batch and rejects everything else") {
  auto dir = temp_dir("imageio");
  Tensor one({1, 1, 2, 2});
  one.fill(0.5f);
  save_image((dir / "one.png").string(), one);
  CHECK(load_image((dir / "one.png").string()).has_value());

  Tensor two({2, 1, 2, 2});
  CHECK_THROWS_AS(save_image((dir / "two.png").string(), two), ArgumentError);
  Tensor chans({2, 2, 2});
  CHECK_THROWS_AS(save_image((dir / "chans.png").string(), chans), ArgumentError);
  Tensor flat({4});
  CHECK_THROWS_AS(save_image((dir / "flat.png").string(), flat), ArgumentError);
}

TEST_CASE("load failures are soft, save failures are hard") {
  CHECK_FALSE(load_image("/nonexistent/nowhere.png").has_value());
  Tensor img({1, 2, 2});
  CHECK_THROWS_AS(save_image("/nonexistent/dir/out.png", img), FormatError);
}

TEST_CASE("grid layout places images row-major and pads with -1") {
  Tensor batch({3, 1, 2, 2});
  for (int64_t n = 0; n < 3; ++n)
    for (int64_t i = 0; i < 4; ++i) batch[n * 4 + i] = static_cast<float>(n) + 0.1f * static_cast<float>(i);

  Tensor grid = make_image_grid(batch, 2);
  REQUIRE(grid.shape() == std::vector<int64_t>{1, 4, 4});
  // image 0 occupies rows 0..1, cols 0..1
  CHECK(grid[0 * 4 + 0] == batch[0]);
  CHECK(grid[1 * 4 + 1] == batch[3]);
  // image 1 sits to its right
  CHECK(grid[0 * 4 + 2] == batch[4]);
  // image 2 starts the second grid row
  CHECK(grid[2 * 4 + 0] == batch[8]);
  // the fourth cell is fill
  CHECK(grid[2 * 4 + 2] == -1.0f);
  CHECK(grid[3 * 4 + 3] == -1.0f);

  CHECK_THROWS_AS(make_image_grid(batch, 0), ArgumentError);
  Tensor not4d({3, 2, 2});
  CHECK_THROWS_AS(make_image_grid(not4d, 2), ArgumentError);

  auto dir = temp_dir("imageio");
  save_image_grid((dir / "grid.png").string(), batch, 2);
  auto back = load_image((dir / "grid.png").string());
  REQUIRE(back.has_value());
  CHECK(back->shape() == grid.shape());
}

TEST_CASE("bilinear resize: identity, hand oracle, independent reference") {
  Tensor img({1, 2, 2});
  img[0] = 0.0f;
  img[1] = 1.0f;
  img[2] = 2.0f;
  img[3] = 3.0f;

  Tensor same = resize_bilinear(img, 2, 2);
  for (int64_t i = 0; i < 4; ++i) CHECK(same[i] == img[i]);

  Tensor up = resize_bilinear(img, 4, 4);
  // corners clamp to the source corners
  CHECK(up[0 * 4 + 0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(up[0 * 4 + 3] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(up[3 * 4 + 0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(up[3 * 4 + 3] == doctest::Approx(3.0).epsilon(1e-6));
  // interior point worked by hand with half-pixel centers
  CHECK(up[1 * 4 + 1] == doctest::Approx(0.75).epsilon(1e-6));

  // independent double-precision reference on a bigger case
  Tensor src = random_tensor({2, 5, 7}, 11);
  int64_t oh = 9, ow = 4;
  Tensor got = resize_bilinear(src, oh, ow);
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x) {
        double fy = (y + 0.5) * 5.0 / oh - 0.5;
        double fx = (x + 0.5) * 7.0 / ow - 0.5;
        auto clampi = [](double f, int64_t n) {
          int64_t i0 = static_cast<int64_t>(std::floor(f));
          return std::pair<int64_t, int64_t>{std::clamp<int64_t>(i0, 0, n - 1),
                                             std::clamp<int64_t>(i0 + 1, 0, n - 1)};
        };
        auto [y0, y1] = clampi(fy, 5);
        auto [x0, x1] = clampi(fx, 7);
        double wy = fy - std::floor(fy), wx = fx - std::floor(fx);
        auto at = [&](int64_t yy, int64_t xx) {
          return static_cast<double>(src[(c * 5 + yy) * 7 + xx]);
        };
        double want = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                      wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
        CHECK(got[(c * oh + y) * ow + x] == doctest::Approx(want).epsilon(1e-5));
      }

  CHECK_THROWS_AS(resize_bilinear(img, 0, 4), ArgumentError);
  Tensor not3d({1, 1, 2, 2});
  CHECK_THROWS_AS(resize_bilinear(not3d, 2, 2), ArgumentError);
}

TEST_CASE("center crop keeps the middle window") {
  Tensor img({1, 4, 6});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(i);
  Tensor crop = center_crop(img, 4, 4);
  REQUIRE(crop.shape() == std::vector<int64_t>{1, 4, 4});
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 4; ++x) CHECK(crop[y * 4 + x] == img[y * 6 + x + 1]);

  Tensor odd = center_crop(img, 2, 2);  // offsets (1, 2)
  CHECK(odd[0] == img[1 * 6 + 2]);

  CHECK_THROWS_AS(center_crop(img, 5, 4), ArgumentError);
  CHECK_THROWS_AS(center_crop(img, 4, 7), ArgumentError);
}

TEST_CASE("unit-square plot rasterizes curve and marks") {
  auto dir = temp_dir("imageio");
  auto path = (dir / "plot.png").string();
  save_unit_square_plot(path, {{0.0, 0.0}, {1.0, 1.0}}, {{0.5, 0.5}});
  auto img = load_image(path);
  REQUIRE(img.has_value());
  REQUIRE(img->shape() == std::vector<int64_t>{3, 512, 512});

  // mark at (0.5, 0.5) paints a red block at the canvas center
  int64_t cx = 51 + 205, cy = 512 - 51 - 205;
  float r = (*img)[(0 * 512 + cy) * 512 + cx];
  float g = (*img)[(1 * 512 + cy) * 512 + cx];
  CHECK(r == doctest::Approx(0.85).epsilon(0.02));
  CHECK(g == doctest::Approx(0.15).epsilon(0.1));

  // the diagonal leaves a visible blue trail somewhere
  int64_t blue_hits = 0;
  for (int64_t y = 0; y < 512; ++y)
    for (int64_t x = 0; x < 512; ++x) {
      float rr = (*img)[(0 * 512 + y) * 512 + x];
      float bb = (*img)[(2 * 512 + y) * 512 + x];
      if (bb - rr > 0.5f) ++blue_hits;
    }
  CHECK(blue_hits > 100);
}

TEST_SUITE_END();
