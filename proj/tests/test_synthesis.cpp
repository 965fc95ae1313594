#include "glann/synthesis.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "doctest.h"
#include "glann/errors.hpp"
#include "test_util.hpp"

using namespace glann;
using namespace glann::test;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<size_t>(a.numel())) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  return worst;
}

// Small untrained model; sampling contracts do not depend on training.
TrainedModel toy_model(uint64_t seed = 1) {
  GeneratorSpec gs;
  gs.arch = "mlp";
  gs.latent_dim = 4;
  gs.width = 16;
  return make_trained_model(make_generator(gs, seed), make_mapper(MapperSpec{3, 4, 8}, seed));
}

}  // namespace

TEST_SUITE_BEGIN("synthesis");

TEST_CASE("model assembly validates the latent handshake") {
  GeneratorSpec gs;
  gs.arch = "mlp";
  gs.latent_dim = 4;
  gs.width = 16;
  CHECK_THROWS_AS(
      make_trained_model(make_generator(gs, 1), make_mapper(MapperSpec{3, 5, 8}, 1)),
      ArgumentError);
  TrainedModel m = toy_model();
  CHECK(m.latent_dim() == 4);
  CHECK(m.noise_dim() == 3);
}

TEST_CASE("sampling: empty batch, determinism, range and shape") {
  TrainedModel m = toy_model();
  SUBCASE("n = 0 gives an empty batch of the right shape") {
    ImageBatch b = sample_images(m, 0, 7);
    CHECK(b.count() == 0);
    CHECK(b.pixels.shape() == std::vector<int64_t>{0, 1, 28, 28});
    CHECK_THROWS_AS(sample_images(m, -1, 7), ArgumentError);
  }
  SUBCASE("the seed fully determines the output") {
    ImageBatch a = sample_images(m, 5, 7);
    ImageBatch b = sample_images(m, 5, 7);
    ImageBatch c = sample_images(m, 5, 8);
    CHECK(bit_equal(a.pixels, b.pixels));
    CHECK_FALSE(bit_equal(a.pixels, c.pixels));
  }
  SUBCASE("values stay in the tanh range at any scale") {
    ImageBatch b = sample_images(m, 64, 9);
    CHECK(b.pixels.shape() == std::vector<int64_t>{64, 1, 28, 28});
    float lo = 1.0f, hi = -1.0f;
    for (int64_t i = 0; i < b.pixels.numel(); ++i) {
      lo = std::min(lo, b.pixels[i]);
      hi = std::max(hi, b.pixels[i]);
    }
    CHECK(lo >= -1.0f);
    CHECK(hi <= 1.0f);
  }
}

TEST_CASE("sampling equals the manual pool-map-reconstruct composition") {
  TrainedModel m = toy_model(3);
  ImageBatch direct = sample_images(m, 6, 11);

  NoisePool pool = sample_noise_pool(6, m.noise_dim(), 11);
  map_pool(m.mapper, pool);
  LatentTable table = LatentTable::from_rows(pool.mapped);
  ImageBatch manual = glo_reconstruct(m.gen, table, {0, 1, 2, 3, 4, 5});
  CHECK(bit_equal(direct.pixels, manual.pixels));
}

TEST_CASE("gaussian prior: hand oracle, brute-force covariance, factor quality") {
  SUBCASE("basis-vector cloud reproduces the unbiased hand values") {
    Tensor rows({100, 2});
    for (int64_t i = 0; i < 100; ++i) {
      rows[i * 2 + 0] = i < 50 ? 1.0f : 0.0f;
      rows[i * 2 + 1] = i < 50 ? 0.0f : 1.0f;
    }
    GaussianLatentPrior prior = fit_gaussian_prior(LatentTable::from_rows(std::move(rows)));
    CHECK(prior.mean(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(prior.mean(1) == doctest::Approx(0.5).epsilon(1e-12));
    // var = 100 * 0.25 / 99, covar = -100 * 0.25 / 99
    CHECK(prior.cov(0, 0) == doctest::Approx(25.0 / 99.0).epsilon(1e-12));
    CHECK(prior.cov(1, 1) == doctest::Approx(25.0 / 99.0).epsilon(1e-12));
    CHECK(prior.cov(0, 1) == doctest::Approx(-25.0 / 99.0).epsilon(1e-12));
    CHECK(prior.cov(1, 0) == prior.cov(0, 1));
  }
  SUBCASE("random cloud matches a triple-loop covariance") {
    Tensor rows = random_tensor({30, 4}, 21);
    GaussianLatentPrior prior = fit_gaussian_prior(LatentTable::from_rows(rows));
    for (int64_t a = 0; a < 4; ++a) {
      double mu = 0.0;
      for (int64_t i = 0; i < 30; ++i) mu += rows[i * 4 + a];
      mu /= 30.0;
      CHECK(prior.mean(a) == doctest::Approx(mu).epsilon(1e-12));
      for (int64_t b = 0; b < 4; ++b) {
        double mb = 0.0;
        for (int64_t i = 0; i < 30; ++i) mb += rows[i * 4 + b];
        mb /= 30.0;
        double c = 0.0;
        for (int64_t i = 0; i < 30; ++i)
          c += (rows[i * 4 + a] - mu) * (rows[i * 4 + b] - mb);
        c /= 29.0;
        CHECK(prior.cov(a, b) == doctest::Approx(c).epsilon(1e-9));
      }
    }
  }
  SUBCASE("factor reproduces the covariance within 1e-6") {
    LatentTable table(200, 8, 22);
    GaussianLatentPrior prior = fit_gaussian_prior(table);
    double worst = (prior.factor * prior.factor.transpose() - prior.cov)
                       .cwiseAbs()
                       .maxCoeff();
    CHECK(worst < 1e-6);
  }
  SUBCASE("fewer rows than d+1 goes through shrinkage and still factors") {
    LatentTable table(4, 8, 23);
    GaussianLatentPrior prior = fit_gaussian_prior(table);
    double worst = (prior.factor * prior.factor.transpose() - prior.cov)
                       .cwiseAbs()
                       .maxCoeff();
    CHECK(worst < 1e-6);
  }
  SUBCASE("a single row is not enough") {
    Tensor rows({1, 3});
    rows[0] = 1.0f;
    CHECK_THROWS_AS(fit_gaussian_prior(LatentTable::from_rows(std::move(rows))),
                    ArgumentError);
  }
  SUBCASE("identical rows collapse to zero covariance") {
    Tensor rows({10, 3});
    for (int64_t i = 0; i < 10; ++i) {
      rows[i * 3 + 0] = 0.6f;
      rows[i * 3 + 1] = 0.8f;
      rows[i * 3 + 2] = 0.0f;
    }
    GaussianLatentPrior prior = fit_gaussian_prior(LatentTable::from_rows(std::move(rows)));
    CHECK(prior.cov.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(prior.factor.cwiseAbs().maxCoeff() < 1e-4);  // pure jitter
  }
}

TEST_CASE("prior sampling: Monte-Carlo mean and degenerate cloud") {
  SUBCASE("sample mean approaches the fitted mean") {
    LatentTable table(50, 3, 31);
    GaussianLatentPrior prior = fit_gaussian_prior(table);
    Tensor z = sample_prior_latents(prior, 100000, 32);
    for (int64_t j = 0; j < 3; ++j) {
      double mu = 0.0;
      for (int64_t i = 0; i < 100000; ++i) mu += z[i * 3 + j];
      mu /= 100000.0;
      CHECK(std::abs(mu - prior.mean(j)) < 0.02);
    }
  }
  SUBCASE("zero-covariance prior decodes to copies of the mean decode") {
    Tensor rows({6, 4});
    for (int64_t i = 0; i < 6; ++i) {
      rows[i * 4 + 0] = 0.6f;
      rows[i * 4 + 3] = 0.8f;
    }
    GaussianLatentPrior prior = fit_gaussian_prior(LatentTable::from_rows(rows));

    GeneratorSpec gs;
    gs.arch = "mlp";
    gs.latent_dim = 4;
    gs.width = 16;
    Generator gen = make_generator(gs, 33);
    ImageBatch b = gaussian_fit_sample(gen, prior, 5, 34);
    CHECK(b.count() == 5);

    Tensor mean_dir({1, 4});
    for (int64_t j = 0; j < 4; ++j) mean_dir[j] = rows[j];  // already unit norm
    Tensor want = gen.decode(mean_dir, false);
    int64_t chw = want.numel();
    for (int64_t i = 0; i < 5; ++i) {
      Tensor frame({1, 1, 28, 28});
      std::copy(b.pixels.data() + i * chw, b.pixels.data() + (i + 1) * chw, frame.data());
      CHECK(max_abs_diff(frame, want.reshaped({1, 1, 28, 28})) < 1e-3);
    }
  }
  SUBCASE("sampling is deterministic and in range") {
    LatentTable table(40, 4, 35);
    GaussianLatentPrior prior = fit_gaussian_prior(table);
    GeneratorSpec gs;
    gs.arch = "mlp";
    gs.latent_dim = 4;
    gs.width = 16;
    Generator gen = make_generator(gs, 36);
    ImageBatch a = gaussian_fit_sample(gen, prior, 8, 37);
    ImageBatch b = gaussian_fit_sample(gen, prior, 8, 37);
    CHECK(bit_equal(a.pixels, b.pixels));
    CHECK(a.pixels.shape() == std::vector<int64_t>{8, 1, 28, 28});
    for (int64_t i = 0; i < a.pixels.numel(); ++i) {
      CHECK(a.pixels[i] >= -1.0f);
      CHECK(a.pixels[i] <= 1.0f);
    }
    CHECK_THROWS_AS(gaussian_fit_sample(gen, fit_gaussian_prior(LatentTable(10, 3, 0)), 2, 0),
                    ArgumentError);
  }
}

TEST_CASE("inversion: zero steps, true initialization, loss reduction, divergence") {
  TrainedModel m = toy_model(41);
  LossSpec l2;
  l2.kind = LossKind::L2;

  ImageBatch target = sample_images(m, 1, 42);
  Tensor true_e = sample_noise_pool(1, m.noise_dim(), 42).noise;

  SUBCASE("zero steps returns the initialization and its loss") {
    Tensor init = random_tensor({1, 3}, 43);
    InversionResult r = invert_image(m, target, l2, 0, init);
    CHECK(bit_equal(r.e, init));
    ImageBatch decoded = decode_noise(m, init);
    CHECK(r.loss[0] == doctest::Approx(l2_loss(decoded.pixels, target.pixels)).epsilon(1e-12));
    CHECK_FALSE(r.diverged);
  }
  SUBCASE("initializing at the generating noise is already optimal") {
    InversionResult r = invert_image(m, target, l2, 50, true_e);
    CHECK(r.loss[0] < 1e-6);
    CHECK(max_abs_diff(r.e, true_e) < 1e-4);
  }
  SUBCASE("500 steps from a random start at least halve the loss") {
    InversionResult at_init = invert_image(m, target, l2, 0, 44u);
    InversionResult r = invert_image(m, target, l2, 500, 44u);
    CHECK(r.loss[0] < 0.5 * at_init.loss[0]);
    CHECK_FALSE(r.diverged);
  }
  SUBCASE("a non-finite target sets the divergence flag and keeps the start") {
    ImageBatch bad = target;
    bad.pixels[5] = std::numeric_limits<float>::infinity();
    Tensor init = random_tensor({1, 3}, 45);
    InversionResult r = invert_image(m, bad, l2, 50, init);
    CHECK(r.diverged);
    CHECK(bit_equal(r.e, init));
    CHECK(std::isinf(r.loss[0]));
  }
  SUBCASE("argument validation") {
    CHECK_THROWS_AS(invert_image(m, target, l2, -1, true_e), ArgumentError);
    CHECK_THROWS_AS(invert_image(m, target, l2, 5, random_tensor({2, 3}, 46)), ArgumentError);
    ImageBatch wrong;
    wrong.pixels = random_tensor({1, 1, 14, 14}, 47);
    CHECK_THROWS_AS(invert_image(m, wrong, l2, 5, 48u), ArgumentError);
  }
}

TEST_CASE("interpolation: endpoints, degenerate path, exact midpoint") {
  TrainedModel m = toy_model(51);
  Tensor e1 = random_tensor({1, 3}, 52);
  Tensor e2 = random_tensor({1, 3}, 53);

  SUBCASE("two frames are exactly the endpoint decodes") {
    ImageBatch path = interpolate(m, e1, e2, 2);
    CHECK(path.count() == 2);
    Tensor want1 = decode_noise(m, e1).pixels;
    Tensor want2 = decode_noise(m, e2).pixels;
    CHECK(std::memcmp(path.pixels.data(), want1.data(), 784 * 4) == 0);
    CHECK(std::memcmp(path.pixels.data() + 784, want2.data(), 784 * 4) == 0);
  }
  SUBCASE("identical endpoints give identical frames") {
    ImageBatch path = interpolate(m, e1, e1, 7);
    for (int64_t k = 1; k < 7; ++k)
      CHECK(std::memcmp(path.pixels.data(), path.pixels.data() + k * 784, 784 * 4) == 0);
  }
  SUBCASE("middle frame of five equals the independent midpoint decode") {
    ImageBatch path = interpolate(m, e1, e2, 5);
    Tensor mid({1, 3});
    for (int64_t j = 0; j < 3; ++j) mid[j] = e1[j] + 0.5f * (e2[j] - e1[j]);
    Tensor want = decode_noise(m, mid).pixels;
    CHECK(std::memcmp(path.pixels.data() + 2 * 784, want.data(), 784 * 4) == 0);
  }
  SUBCASE("frame counts below two and bad vectors are rejected") {
    CHECK_THROWS_AS(interpolate(m, e1, e2, 1), ArgumentError);
    CHECK_THROWS_AS(interpolate(m, e1, e2, 0), ArgumentError);
    CHECK_THROWS_AS(interpolate(m, random_tensor({1, 4}, 54), e2, 3), ArgumentError);
  }
  SUBCASE("flat (d) vectors are accepted") {
    ImageBatch path = interpolate(m, e1.reshaped({3}), e2.reshaped({3}), 3);
    CHECK(path.count() == 3);
  }
}

TEST_CASE("noise files round trip with an exact manifest") {
  auto dir = temp_dir("noise");
  std::string path = (dir / "e.f32").string();
  Tensor noise = random_tensor({2, 3}, 61);
  save_noise(path, noise, 9);

  SUBCASE("payload and metadata survive") {
    NoiseFile back = load_noise(path);
    CHECK(bit_equal(back.noise, noise));
    CHECK(back.seed == 9);

    std::ifstream m(path + ".manifest");
    std::string line;
    std::getline(m, line);
    CHECK(line == "dim 3 count 2 seed 9");
  }
  SUBCASE("length mismatch against the manifest is refused") {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "abcd";
    f.close();
    CHECK_THROWS_AS(load_noise(path), FormatError);
  }
  SUBCASE("a mangled manifest is refused") {
    std::ofstream f(path + ".manifest", std::ios::trunc);
    f << "dimension 3 count 2 seed 9\n";
    f.close();
    CHECK_THROWS_AS(load_noise(path), FormatError);
  }
  SUBCASE("missing files are reported") {
    CHECK_THROWS_AS(load_noise((dir / "absent.f32").string()), FormatError);
    CHECK_THROWS_AS(save_noise((dir / "nosuch" / "e.f32").string(), noise, 1), FormatError);
  }
  std::filesystem::remove_all(dir);
}

TEST_SUITE_END();
