#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "glann/errors.hpp"
#include "glann/losses.hpp"
#include "test_util.hpp"

using namespace glann;
using test::fd_grad;
using test::random_tensor;
using test::rel_l2_err;

namespace {

// ---------------------------------------------------------------------------
// Independent straight-line pyramid reference, double precision. Same
// definition as the library (binomial 5-tap blur, clamped borders, even-index
// decimation, zero-stuff + doubled-kernel expansion), written as plain loops.
// ---------------------------------------------------------------------------

using Plane = std::vector<double>;

int64_t rclamp(int64_t i, int64_t n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

Plane ref_blur(const Plane& x, int64_t h, int64_t w, double scale) {
  const double k[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
  Plane t(static_cast<size_t>(h * w)), y(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int u = 0; u < 5; ++u) acc += k[u] * x[static_cast<size_t>(i * w + rclamp(j + u - 2, w))];
      t[static_cast<size_t>(i * w + j)] = scale * acc;
    }
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int u = 0; u < 5; ++u) acc += k[u] * t[static_cast<size_t>(rclamp(i + u - 2, h) * w + j)];
      y[static_cast<size_t>(i * w + j)] = scale * acc;
    }
  return y;
}

Plane ref_down(const Plane& x, int64_t h, int64_t w) {
  Plane b = ref_blur(x, h, w, 1.0);
  int64_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  Plane y(static_cast<size_t>(ho * wo));
  for (int64_t i = 0; i < ho; ++i)
    for (int64_t j = 0; j < wo; ++j)
      y[static_cast<size_t>(i * wo + j)] = b[static_cast<size_t>(2 * i * w + 2 * j)];
  return y;
}

Plane ref_up(const Plane& x, int64_t ho, int64_t wo, int64_t h, int64_t w) {
  Plane s(static_cast<size_t>(h * w), 0.0);
  for (int64_t i = 0; i < ho; ++i)
    for (int64_t j = 0; j < wo; ++j)
      s[static_cast<size_t>(2 * i * w + 2 * j)] = x[static_cast<size_t>(i * wo + j)];
  return ref_blur(s, h, w, 2.0);
}

// Band-pass stack for one plane: levels-1 residuals plus the low-pass residue.
std::vector<Plane> ref_lap(const Plane& img, int64_t h, int64_t w, int levels) {
  std::vector<Plane> gauss{img};
  std::vector<int64_t> hs{h}, ws{w};
  for (int j = 1; j < levels; ++j) {
    gauss.push_back(ref_down(gauss.back(), hs.back(), ws.back()));
    hs.push_back((hs.back() + 1) / 2);
    ws.push_back((ws.back() + 1) / 2);
  }
  std::vector<Plane> lap;
  for (int j = 0; j + 1 < levels; ++j) {
    Plane up = ref_up(gauss[static_cast<size_t>(j + 1)], hs[static_cast<size_t>(j + 1)],
                      ws[static_cast<size_t>(j + 1)], hs[static_cast<size_t>(j)],
                      ws[static_cast<size_t>(j)]);
    Plane l = gauss[static_cast<size_t>(j)];
    for (size_t i = 0; i < l.size(); ++i) l[i] -= up[i];
    lap.push_back(std::move(l));
  }
  lap.push_back(gauss.back());
  return lap;
}

double ref_lap_loss(const Tensor& a, const Tensor& b, int levels) {
  int64_t planes = a.dim(0) * a.dim(1), h = a.dim(2), w = a.dim(3);
  std::vector<double> sums(static_cast<size_t>(levels), 0.0);
  std::vector<int64_t> counts(static_cast<size_t>(levels), 0);
  for (int64_t p = 0; p < planes; ++p) {
    Plane pa(static_cast<size_t>(h * w)), pb(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h * w; ++i) {
      pa[static_cast<size_t>(i)] = a[p * h * w + i];
      pb[static_cast<size_t>(i)] = b[p * h * w + i];
    }
    auto la = ref_lap(pa, h, w, levels);
    auto lb = ref_lap(pb, h, w, levels);
    for (int j = 0; j < levels; ++j) {
      for (size_t i = 0; i < la[static_cast<size_t>(j)].size(); ++i)
        sums[static_cast<size_t>(j)] +=
            std::abs(la[static_cast<size_t>(j)][i] - lb[static_cast<size_t>(j)][i]);
      counts[static_cast<size_t>(j)] += static_cast<int64_t>(la[static_cast<size_t>(j)].size());
    }
  }
  double total = 0.0;
  for (int j = 0; j < levels; ++j)
    total += std::ldexp(sums[static_cast<size_t>(j)] / counts[static_cast<size_t>(j)], -2 * j);
  return total;
}

double ref_l2(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

}  // namespace

TEST_SUITE("losses") {

// --- L2 ---

TEST_CASE("l2 identity and constant cases") {
  Tensor a = random_tensor({2, 1, 4, 4}, 1);
  CHECK(l2_loss(a, a) == 0.0);
  Tensor lo = Tensor::full({2, 3, 4, 4}, -1.0f), hi = Tensor::full({2, 3, 4, 4}, 1.0f);
  CHECK(l2_loss(lo, hi) == doctest::Approx(4.0));
  CHECK_THROWS_AS(l2_loss(a, lo), ArgumentError);
}

TEST_CASE("l2 equals the elementwise double-loop oracle") {
  Tensor a = random_tensor({3, 2, 5, 5}, 2), b = random_tensor({3, 2, 5, 5}, 3);
  CHECK(l2_loss(a, b) == doctest::Approx(ref_l2(a, b)).epsilon(1e-12));
}

TEST_CASE("l2 gradient matches finite differences") {
  Tensor a = random_tensor({1, 1, 4, 4}, 4), b = random_tensor({1, 1, 4, 4}, 5);
  auto r = l2_loss_grad(a, b);
  CHECK(r.value == doctest::Approx(l2_loss(a, b)));
  Tensor fd = fd_grad([&]() { return l2_loss(a, b); }, a, 1e-3);
  CHECK(rel_l2_err(r.grad, fd) < 1e-3);
}

// --- Laplacian pyramid ---

TEST_CASE("pyramid loss is zero on identical inputs") {
  Tensor a = random_tensor({2, 1, 8, 8}, 6);
  for (int levels : {1, 2, 3}) CHECK(laplacian_pyramid_loss(a, a, levels) == 0.0);
}

TEST_CASE("one level reduces to mean absolute difference") {
  Tensor a = random_tensor({2, 1, 6, 6}, 7), b = random_tensor({2, 1, 6, 6}, 8);
  double mad = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) mad += std::abs(static_cast<double>(a[i]) - b[i]);
  mad /= static_cast<double>(a.numel());
  CHECK(laplacian_pyramid_loss(a, b, 1) == doctest::Approx(mad).epsilon(1e-9));
}

TEST_CASE("pyramid loss equals the straight-line reference") {
  Tensor a = random_tensor({2, 1, 8, 8}, 9), b = random_tensor({2, 1, 8, 8}, 10);
  CHECK(laplacian_pyramid_loss(a, b, 3) ==
        doctest::Approx(ref_lap_loss(a, b, 3)).epsilon(1e-5));
  // non-square, odd sides
  Tensor c = random_tensor({1, 2, 7, 10}, 11), d = random_tensor({1, 2, 7, 10}, 12);
  CHECK(laplacian_pyramid_loss(c, d, 3) ==
        doctest::Approx(ref_lap_loss(c, d, 3)).epsilon(1e-5));
}

TEST_CASE("pyramid rejects images too small for the level count") {
  Tensor a = random_tensor({1, 1, 4, 4}, 13);
  CHECK_THROWS_WITH_AS(laplacian_pyramid_loss(a, a, 4), doctest::Contains("too small"),
                       ArgumentError);
  CHECK_THROWS_AS(laplacian_pyramid_loss(a, a, 0), ArgumentError);
}

TEST_CASE("pyramid gradient matches finite differences") {
  Tensor a = random_tensor({1, 1, 4, 4}, 14), b = random_tensor({1, 1, 4, 4}, 15);
  auto r = laplacian_pyramid_loss_grad(a, b, 3);
  CHECK(r.value == doctest::Approx(laplacian_pyramid_loss(a, b, 3)));
  Tensor fd = fd_grad([&]() { return laplacian_pyramid_loss(a, b, 3); }, a, 1e-3);
  CHECK(rel_l2_err(r.grad, fd) < 1e-3);
}

// --- Perceptual ---

TEST_CASE("perceptual loss is zero on identical inputs") {
  FeatureExtractor fx = FeatureExtractor::random_conv(1, 3, 2);
  Tensor a = random_tensor({2, 1, 8, 8}, 16);
  CHECK(perceptual_feature_loss(a, a, fx) == 0.0);
}

TEST_CASE("identity extractor with zero pixel weight collapses to l2") {
  FeatureExtractor fx = FeatureExtractor::identity();
  Tensor a = random_tensor({2, 1, 4, 4}, 17), b = random_tensor({2, 1, 4, 4}, 18);
  CHECK(perceptual_feature_loss(a, b, fx, 0.0, {1.0}) == l2_loss(a, b));
}

TEST_CASE("layer weights form the stated weighted sum") {
  FeatureExtractor fx = FeatureExtractor::random_conv(1, 3, 2);
  Tensor a = random_tensor({2, 1, 8, 8}, 19), b = random_tensor({2, 1, 8, 8}, 20);
  auto fa = fx.features(a), fb = fx.features(b);
  REQUIRE(fa.size() == 2);
  double expect = 1.0 * ref_l2(fa[0], fb[0]) + 2.0 * ref_l2(fa[1], fb[1]);
  CHECK(perceptual_feature_loss(a, b, fx, 0.0, {1.0, 2.0}) ==
        doctest::Approx(expect).epsilon(1e-12));
  // default weighting is uniform 1/taps plus the pixel term
  double uniform = 0.5 * ref_l2(fa[0], fb[0]) + 0.5 * ref_l2(fa[1], fb[1]) + ref_l2(a, b);
  CHECK(perceptual_feature_loss(a, b, fx) == doctest::Approx(uniform).epsilon(1e-12));
  CHECK_THROWS_AS(perceptual_feature_loss(a, b, fx, 0.0, {1.0, 2.0, 3.0}), ConfigError);
}

TEST_CASE("grayscale input is replicated for a 3-channel extractor") {
  FeatureExtractor fx = FeatureExtractor::random_conv(3, 5, 2);
  Tensor g = random_tensor({2, 1, 8, 8}, 21), g2 = random_tensor({2, 1, 8, 8}, 22);
  Tensor c({2, 3, 8, 8}), c2({2, 3, 8, 8});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t ch = 0; ch < 3; ++ch)
      for (int64_t i = 0; i < 64; ++i) {
        c[(n * 3 + ch) * 64 + i] = g[n * 64 + i];
        c2[(n * 3 + ch) * 64 + i] = g2[n * 64 + i];
      }
  // feature terms agree exactly; pixel terms differ (16 vs 48 elements), so
  // compare with w_pix = 0
  CHECK(perceptual_feature_loss(g, g2, fx, 0.0) == perceptual_feature_loss(c, c2, fx, 0.0));
  // incompatible channel count is a configuration error
  Tensor two = random_tensor({1, 2, 8, 8}, 23);
  CHECK_THROWS_AS(perceptual_feature_loss(two, two, fx), ConfigError);
}

TEST_CASE("perceptual gradient matches finite differences") {
  FeatureExtractor fx = FeatureExtractor::random_conv(1, 7, 2);
  Tensor a = random_tensor({1, 1, 4, 4}, 24), b = random_tensor({1, 1, 4, 4}, 25);
  auto r = perceptual_feature_loss_grad(a, b, fx);
  CHECK(r.value == doctest::Approx(perceptual_feature_loss(a, b, fx)));
  Tensor fd = fd_grad([&]() { return perceptual_feature_loss(a, b, fx); }, a, 1e-3);
  CHECK(rel_l2_err(r.grad, fd) < 1e-2);

  // grayscale replication path
  FeatureExtractor fx3 = FeatureExtractor::random_conv(3, 8, 2);
  auto r3 = perceptual_feature_loss_grad(a, b, fx3);
  Tensor fd3 = fd_grad([&]() { return perceptual_feature_loss(a, b, fx3); }, a, 1e-3);
  CHECK(rel_l2_err(r3.grad, fd3) < 1e-2);
}

TEST_CASE("extractor save/load round-trips features bit-exactly") {
  auto dir = test::temp_dir("fx");
  auto path = (dir / "fx.ck").string();
  FeatureExtractor fx = FeatureExtractor::random_conv(1, 11, 3);
  fx.save(path);
  FeatureExtractor rt = FeatureExtractor::load(path);
  Tensor x = random_tensor({2, 1, 8, 8}, 26);
  auto fa = fx.features(x), fb = rt.features(x);
  REQUIRE(fa.size() == fb.size());
  for (size_t l = 0; l < fa.size(); ++l)
    for (int64_t i = 0; i < fa[l].numel(); ++i) CHECK(fa[l][i] == fb[l][i]);
  CHECK(rt.id().substr(0, 5) == "file:");
  std::filesystem::remove_all(dir);
}

TEST_CASE("random extractor is seed-deterministic") {
  FeatureExtractor a = FeatureExtractor::random_conv(1, 13, 2);
  FeatureExtractor b = FeatureExtractor::random_conv(1, 13, 2);
  FeatureExtractor c = FeatureExtractor::random_conv(1, 14, 2);
  CHECK(a.id() == b.id());
  CHECK(a.id() != c.id());
  Tensor x = random_tensor({1, 1, 8, 8}, 27);
  auto fa = a.features(x), fb = b.features(x), fc = c.features(x);
  for (int64_t i = 0; i < fa[0].numel(); ++i) CHECK(fa[0][i] == fb[0][i]);
  bool differ = false;
  for (int64_t i = 0; i < fa[0].numel(); ++i) differ |= fa[0][i] != fc[0][i];
  CHECK(differ);
}

// --- Multiscale ---

TEST_CASE("one scale equals the base loss exactly") {
  Tensor a = random_tensor({2, 1, 8, 8}, 28), b = random_tensor({2, 1, 8, 8}, 29);
  LossSpec base;
  base.kind = LossKind::L2;
  CHECK(multiscale_loss(a, b, base, nullptr, 1) == l2_loss(a, b));
}

TEST_CASE("two scales equal the explicit two-scale oracle") {
  Tensor a = random_tensor({1, 1, 32, 32}, 30), b = random_tensor({1, 1, 32, 32}, 31);
  LossSpec base;
  base.kind = LossKind::L2;
  // oracle: own 2x2 block means in double, then plain l2 at both scales
  auto down = [](const Tensor& x) {
    Tensor y({x.dim(0), x.dim(1), x.dim(2) / 2, x.dim(3) / 2});
    int64_t w = x.dim(3), wo = w / 2;
    for (int64_t p = 0; p < x.dim(0) * x.dim(1); ++p)
      for (int64_t i = 0; i < x.dim(2) / 2; ++i)
        for (int64_t j = 0; j < wo; ++j) {
          const float* s = x.data() + p * x.dim(2) * w;
          y[p * (x.dim(2) / 2) * wo + i * wo + j] =
              0.25f * (s[2 * i * w + 2 * j] + s[2 * i * w + 2 * j + 1] +
                       s[(2 * i + 1) * w + 2 * j] + s[(2 * i + 1) * w + 2 * j + 1]);
        }
    return y;
  };
  double expect = 0.5 * (ref_l2(a, b) + ref_l2(down(a), down(b)));
  CHECK(multiscale_loss(a, b, base, nullptr, 2) == doctest::Approx(expect).epsilon(1e-6));
  CHECK(multiscale_loss(a, a, base, nullptr, 2) == 0.0);
}

TEST_CASE("multiscale rejects indivisible sides") {
  Tensor a = random_tensor({1, 1, 6, 6}, 32);
  LossSpec base;
  CHECK_THROWS_AS(multiscale_loss(a, a, base, nullptr, 3), ArgumentError);
  CHECK_THROWS_AS(multiscale_loss(a, a, base, nullptr, 0), ArgumentError);
  CHECK_THROWS_AS(downsample2x(random_tensor({1, 1, 5, 5}, 33)), ArgumentError);
}

TEST_CASE("multiscale gradient matches finite differences") {
  Tensor a = random_tensor({1, 1, 4, 4}, 34), b = random_tensor({1, 1, 4, 4}, 35);
  LossSpec base;
  base.kind = LossKind::L2;
  auto r = multiscale_loss_grad(a, b, base, nullptr, 2);
  CHECK(r.value == doctest::Approx(multiscale_loss(a, b, base, nullptr, 2)));
  Tensor fd = fd_grad([&]() { return multiscale_loss(a, b, base, nullptr, 2); }, a, 1e-3);
  CHECK(rel_l2_err(r.grad, fd) < 1e-3);
}

TEST_CASE("downsample2x is the 2x2 block mean") {
  Tensor x({1, 1, 2, 4}, {0, 2, 4, 6, 8, 10, 12, 14});
  Tensor y = downsample2x(x);
  REQUIRE(y.shape() == std::vector<int64_t>{1, 1, 1, 2});
  CHECK(y[0] == doctest::Approx(5.0));
  CHECK(y[1] == doctest::Approx(9.0));
}

// --- properties across kinds ---

TEST_CASE("nonnegativity, identity and symmetry for every kind") {
  auto fx = std::make_shared<const FeatureExtractor>(FeatureExtractor::random_conv(1, 17, 2));
  std::vector<ReconLoss> kinds;
  LossSpec s;
  s.kind = LossKind::L2;
  kinds.emplace_back(s, nullptr);
  s.kind = LossKind::LapPyramid;
  s.levels = 2;
  kinds.emplace_back(s, nullptr);
  s.kind = LossKind::Perceptual;
  kinds.emplace_back(s, fx);
  s.kind = LossKind::MultiscalePerceptual;
  s.subsample_levels = 2;
  kinds.emplace_back(s, fx);

  for (uint64_t trial = 0; trial < 5; ++trial) {
    Tensor a = random_tensor({2, 1, 8, 8}, 100 + trial);
    Tensor b = random_tensor({2, 1, 8, 8}, 200 + trial);
    for (const auto& loss : kinds) {
      double ab = loss.value(a, b);
      CHECK(ab >= 0.0);
      CHECK(loss.value(a, a) == 0.0);
      CHECK(ab == loss.value(b, a));
    }
  }
}

TEST_CASE("recon loss dispatch matches the direct functions") {
  Tensor a = random_tensor({1, 1, 8, 8}, 40), b = random_tensor({1, 1, 8, 8}, 41);

  LossSpec s;
  s.kind = LossKind::L2;
  CHECK(make_recon_loss(s, 1).value(a, b) == l2_loss(a, b));

  s.kind = LossKind::LapPyramid;
  s.levels = 3;
  CHECK(make_recon_loss(s, 1).value(a, b) == laplacian_pyramid_loss(a, b, 3));

  s.kind = LossKind::Perceptual;
  s.extractor_kind = "randconv";
  s.extractor_seed = 9;
  s.extractor_levels = 2;
  ReconLoss perc = make_recon_loss(s, 1);
  FeatureExtractor fx = FeatureExtractor::random_conv(1, 9, 2);
  CHECK(perc.value(a, b) == perceptual_feature_loss(a, b, fx));

  s.kind = LossKind::MultiscalePerceptual;
  s.subsample_levels = 2;
  ReconLoss ms = make_recon_loss(s, 1);
  LossSpec basep = s;
  basep.kind = LossKind::Perceptual;
  CHECK(ms.value(a, b) == multiscale_loss(a, b, basep, &fx, 2));
  auto g = ms.value_grad(a, b);
  CHECK(g.value == doctest::Approx(ms.value(a, b)));
  Tensor fd = fd_grad([&]() { return ms.value(a, b); }, a, 1e-3);
  CHECK(rel_l2_err(g.grad, fd) < 1e-2);

  s.extractor_kind = "bogus";
  CHECK_THROWS_AS(make_recon_loss(s, 1), ConfigError);
}

TEST_CASE("loss kind names round-trip") {
  for (LossKind k : {LossKind::L2, LossKind::LapPyramid, LossKind::Perceptual,
                     LossKind::MultiscalePerceptual})
    CHECK(loss_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(loss_kind_from_string("huber"), ConfigError);
}

}  // TEST_SUITE
