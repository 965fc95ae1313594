#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "glann/dataset.hpp"
#include "glann/glo.hpp"
#include "glann/imle.hpp"
#include "glann/losses.hpp"
#include "glann/tensor.hpp"

namespace glann {

// A generator paired with its noise-to-latent mapper plus provenance strings
// that end up in evaluation reports.
struct TrainedModel {
  Generator gen;
  Mapper mapper;
  std::string dataset;
  std::string config_hash;

  int64_t latent_dim() const { return gen.spec.latent_dim; }
  int64_t noise_dim() const { return mapper.spec.noise_dim; }
};

// Validates that the mapper lands in the generator's latent space.
TrainedModel make_trained_model(Generator gen, Mapper mapper, std::string dataset = "",
                                std::string config_hash = "");

// Inference-mode decode of the composed map G(T(e)) for an (n, d_e) noise
// batch.
ImageBatch decode_noise(TrainedModel& model, const Tensor& noise);

// Draw e ~ N(0,I) with sample_noise_pool(n, d_e, seed) and decode; n = 0
// yields an empty batch.
ImageBatch sample_images(TrainedModel& model, int64_t n, uint64_t seed);

// Full multivariate Gaussian fitted to latent codes, stored in double
// precision. `factor` is a lower-triangular matrix with
// factor * factor^T == cov + jitter * I.
struct GaussianLatentPrior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd factor;
  double jitter = 0.0;
};

// Mean and unbiased covariance of the table rows. Covariance is shrunk
// toward a scaled identity when there are fewer than d+1 rows, and the
// factorization retries with escalating diagonal jitter before giving up
// with NumericError.
GaussianLatentPrior fit_gaussian_prior(const LatentTable& table);

// z = mean + factor * eps with eps ~ N(0,I); raw draws, no projection.
Tensor sample_prior_latents(const GaussianLatentPrior& prior, int64_t n, uint64_t seed);

// Baseline sampler: draw from the prior, re-project to the unit sphere
// (the generator only ever saw unit-norm codes), decode.
ImageBatch gaussian_fit_sample(Generator& gen, const GaussianLatentPrior& prior, int64_t n,
                               uint64_t seed);

struct InversionResult {
  Tensor e;                  // (n, d_e), best-seen iterate per image
  std::vector<double> loss;  // loss of that iterate
  bool diverged = false;     // a non-finite loss cut an optimization short
};

// Recover noise vectors whose decodes match the given images: per image,
// Adam on e over ell(G(T(e)), image) from the provided initialization,
// returning the lowest-loss iterate seen (not the last). A non-finite loss
// stops that image's search and sets the diverged flag instead of throwing.
InversionResult invert_image(TrainedModel& model, const ImageBatch& images,
                             const LossSpec& loss, int64_t steps, const Tensor& init,
                             float lr = 0.05f);

// Same, initialized from seeded standard-normal noise.
InversionResult invert_image(TrainedModel& model, const ImageBatch& images,
                             const LossSpec& loss, int64_t steps, uint64_t init_seed,
                             float lr = 0.05f);

// Decode steps frames along the segment e1 + t * (e2 - e1), t evenly spaced
// over [0,1]; the endpoint frames decode e1 and e2 verbatim. Frames are
// decoded one row at a time so each equals its standalone decode bit for
// bit.
ImageBatch interpolate(TrainedModel& model, const Tensor& e1, const Tensor& e2, int64_t steps);

// Noise round trip: raw little-endian float32 rows in `path`, plus a
// one-line text manifest in `path + ".manifest"` recording dimension, count,
// and seed.
struct NoiseFile {
  Tensor noise;  // (count, dim)
  uint64_t seed = 0;
};

void save_noise(const std::string& path, const Tensor& noise, uint64_t seed);
NoiseFile load_noise(const std::string& path);

}  // namespace glann
