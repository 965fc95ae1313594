#include "glann/synthesis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <utility>

#include "glann/errors.hpp"
#include "glann/optim.hpp"
#include "glann/rng.hpp"

namespace glann {

namespace {

Eigen::MatrixXd rows_as_double(const Tensor& t) {
  using MapRowsF =
      Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  return MapRowsF(t.data(), t.dim(0), t.dim(1)).cast<double>();
}

Tensor empty_batch_like(const GeneratorSpec& spec) {
  return Tensor({0, spec.out_shape[0], spec.out_shape[1], spec.out_shape[2]});
}

std::vector<int64_t> iota_ids(int64_t n) {
  std::vector<int64_t> ids(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = i;
  return ids;
}

// Accept a noise vector as (d) or (1,d); returns a flat copy.
Tensor as_noise_row(const Tensor& e, int64_t d, const char* what) {
  bool ok = (e.ndim() == 1 && e.dim(0) == d) ||
            (e.ndim() == 2 && e.dim(0) == 1 && e.dim(1) == d);
  if (!ok)
    throw ArgumentError(std::string(what) + ": expected a noise vector of dimension " +
                        std::to_string(d) + ", got " + e.shape_string());
  return e.reshaped({1, d});
}

}  // namespace

TrainedModel make_trained_model(Generator gen, Mapper mapper, std::string dataset,
                                std::string config_hash) {
  if (mapper.spec.latent_dim != gen.spec.latent_dim)
    throw ArgumentError("mapper emits dimension " + std::to_string(mapper.spec.latent_dim) +
                        ", generator expects " + std::to_string(gen.spec.latent_dim));
  TrainedModel m;
  m.gen = std::move(gen);
  m.mapper = std::move(mapper);
  m.dataset = std::move(dataset);
  m.config_hash = std::move(config_hash);
  return m;
}

ImageBatch decode_noise(TrainedModel& model, const Tensor& noise) {
  if (noise.ndim() != 2 || noise.dim(1) != model.noise_dim())
    throw ArgumentError("decode_noise expects (n," + std::to_string(model.noise_dim()) +
                        ") noise, got " + noise.shape_string());
  ImageBatch out;
  out.ids = iota_ids(noise.dim(0));
  if (noise.dim(0) == 0) {
    out.pixels = empty_batch_like(model.gen.spec);
    return out;
  }
  Tensor z = model.mapper.map(noise, false);
  out.pixels = model.gen.decode(z, false);
  return out;
}

ImageBatch sample_images(TrainedModel& model, int64_t n, uint64_t seed) {
  if (n < 0) throw ArgumentError("sample count must be >= 0");
  if (n == 0) {
    ImageBatch out;
    out.pixels = empty_batch_like(model.gen.spec);
    return out;
  }
  NoisePool pool = sample_noise_pool(n, model.noise_dim(), seed);
  return decode_noise(model, pool.noise);
}

GaussianLatentPrior fit_gaussian_prior(const LatentTable& table) {
  int64_t n = table.count(), d = table.dim();
  if (n < 2) throw ArgumentError("gaussian prior needs at least two latent rows");

  Eigen::MatrixXd x = rows_as_double(table.rows());
  GaussianLatentPrior prior;
  prior.mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - prior.mean.transpose();
  prior.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  prior.cov = (0.5 * (prior.cov + prior.cov.transpose())).eval();

  if (n < d + 1) {
    // too few rows for a full-rank estimate: shrink toward a scaled identity
    const double lambda = 1e-4;
    double scale = prior.cov.trace() / static_cast<double>(d);
    prior.cov = ((1.0 - lambda) * prior.cov +
                 lambda * scale * Eigen::MatrixXd::Identity(d, d))
                    .eval();
  }

  for (double jitter : {0.0, 1e-12, 1e-10, 1e-8}) {
    Eigen::MatrixXd attempt = prior.cov + jitter * Eigen::MatrixXd::Identity(d, d);
    Eigen::LLT<Eigen::MatrixXd> llt(attempt);
    if (llt.info() == Eigen::Success) {
      prior.factor = llt.matrixL();
      prior.jitter = jitter;
      return prior;
    }
  }
  throw NumericError("latent covariance is not factorizable even with diagonal jitter");
}

Tensor sample_prior_latents(const GaussianLatentPrior& prior, int64_t n, uint64_t seed) {
  if (n < 0) throw ArgumentError("sample count must be >= 0");
  int64_t d = prior.mean.size();
  Tensor z({n, d});
  Rng rng(seed);
  Eigen::VectorXd eps(d);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) eps(j) = rng.normal();
    Eigen::VectorXd row = prior.mean + prior.factor * eps;
    for (int64_t j = 0; j < d; ++j) z[i * d + j] = static_cast<float>(row(j));
  }
  return z;
}

ImageBatch gaussian_fit_sample(Generator& gen, const GaussianLatentPrior& prior, int64_t n,
                               uint64_t seed) {
  if (prior.mean.size() != gen.spec.latent_dim)
    throw ArgumentError("prior dimension " + std::to_string(prior.mean.size()) +
                        " does not match generator latent_dim " +
                        std::to_string(gen.spec.latent_dim));
  ImageBatch out;
  if (n == 0) {
    out.pixels = empty_batch_like(gen.spec);
    return out;
  }
  Tensor z = sample_prior_latents(prior, n, seed);
  project_rows_to_sphere(z);
  out.ids = iota_ids(n);
  out.pixels = gen.decode(z, false);
  return out;
}

InversionResult invert_image(TrainedModel& model, const ImageBatch& images,
                             const LossSpec& loss_spec, int64_t steps, const Tensor& init,
                             float lr) {
  const auto& s = model.gen.spec.out_shape;
  const Tensor& px = images.pixels;
  if (px.ndim() != 4 || px.dim(1) != s[0] || px.dim(2) != s[1] || px.dim(3) != s[2])
    throw ArgumentError("invert_image: images " + px.shape_string() +
                        " do not match generator output " + Tensor::shape_str(s));
  if (steps < 0) throw ArgumentError("invert_image: steps must be >= 0");
  int64_t n = px.dim(0), d_e = model.noise_dim();
  if (init.ndim() != 2 || init.dim(0) != n || init.dim(1) != d_e)
    throw ArgumentError("invert_image: init must be (" + std::to_string(n) + "," +
                        std::to_string(d_e) + "), got " + init.shape_string());

  ReconLoss loss = make_recon_loss(loss_spec, s[0]);
  int64_t chw = s[0] * s[1] * s[2];

  InversionResult out;
  out.e = Tensor({n, d_e});
  out.loss.resize(static_cast<size_t>(n));

  for (int64_t i = 0; i < n; ++i) {
    Tensor e({1, d_e});
    std::copy(init.data() + i * d_e, init.data() + (i + 1) * d_e, e.data());
    Tensor target({1, s[0], s[1], s[2]});
    std::copy(px.data() + i * chw, px.data() + (i + 1) * chw, target.data());

    Tensor ge({1, d_e});
    Adam adam;
    std::vector<nn::ParamRef> refs{{"e", &e, &ge}};

    Tensor best_e = e;
    double best = std::numeric_limits<double>::infinity();
    for (int64_t it = 0; it <= steps; ++it) {
      Tensor z = model.mapper.map(e, false);
      Tensor y = model.gen.decode(z, false);
      LossValueGrad vg = loss.value_grad(y, target);
      if (!std::isfinite(vg.value)) {
        out.diverged = true;
        break;
      }
      if (vg.value < best) {
        best = vg.value;
        best_e = e;
      }
      if (it == steps) break;
      Tensor gz = model.gen.net.backward(vg.grad);
      ge = model.mapper.net.backward(gz);
      adam.step(refs, lr);
    }
    std::copy(best_e.data(), best_e.data() + d_e, out.e.data() + i * d_e);
    out.loss[static_cast<size_t>(i)] = best;
  }
  return out;
}

InversionResult invert_image(TrainedModel& model, const ImageBatch& images,
                             const LossSpec& loss_spec, int64_t steps, uint64_t init_seed,
                             float lr) {
  Tensor init({images.pixels.dim(0), model.noise_dim()});
  Rng rng(derive_seed(init_seed, "invert-init"));
  rng.fill_normal(init.data(), static_cast<size_t>(init.numel()));
  return invert_image(model, images, loss_spec, steps, init, lr);
}

ImageBatch interpolate(TrainedModel& model, const Tensor& e1, const Tensor& e2, int64_t steps) {
  if (steps < 2) throw ArgumentError("interpolation needs at least 2 frames");
  int64_t d_e = model.noise_dim();
  Tensor a = as_noise_row(e1, d_e, "interpolate");
  Tensor b = as_noise_row(e2, d_e, "interpolate");

  const auto& s = model.gen.spec.out_shape;
  ImageBatch out;
  out.ids = iota_ids(steps);
  out.pixels = Tensor({steps, s[0], s[1], s[2]});
  int64_t chw = s[0] * s[1] * s[2];

  for (int64_t k = 0; k < steps; ++k) {
    Tensor row({1, d_e});
    if (k == 0) {
      row = a;
    } else if (k == steps - 1) {
      row = b;
    } else {
      float t = static_cast<float>(k) / static_cast<float>(steps - 1);
      for (int64_t j = 0; j < d_e; ++j) row[j] = a[j] + t * (b[j] - a[j]);
    }
    ImageBatch frame = decode_noise(model, row);
    std::copy(frame.pixels.data(), frame.pixels.data() + chw, out.pixels.data() + k * chw);
  }
  return out;
}

void save_noise(const std::string& path, const Tensor& noise, uint64_t seed) {
  if (noise.ndim() != 2) throw ArgumentError("noise tensor must be (count, dim)");

  std::vector<uint8_t> bytes;
  bytes.reserve(static_cast<size_t>(noise.numel()) * 4);
  for (int64_t i = 0; i < noise.numel(); ++i) {
    uint32_t v = std::bit_cast<uint32_t>(noise[i]);
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<uint8_t>(v >> (8 * b)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write noise file: " + path);
  if (!bytes.empty())
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("cannot write noise file: " + path);
  f.close();

  std::ofstream m(path + ".manifest", std::ios::trunc);
  m << "dim " << noise.dim(1) << " count " << noise.dim(0) << " seed " << seed << "\n";
  if (!m) throw FormatError("cannot write noise manifest: " + path + ".manifest");
}

NoiseFile load_noise(const std::string& path) {
  std::ifstream m(path + ".manifest");
  if (!m) throw FormatError("cannot open noise manifest: " + path + ".manifest");
  std::string line;
  std::getline(m, line);
  std::istringstream is(line);
  std::string k_dim, k_count, k_seed;
  int64_t dim = 0, count = 0;
  uint64_t seed = 0;
  is >> k_dim >> dim >> k_count >> count >> k_seed >> seed;
  if (!is || k_dim != "dim" || k_count != "count" || k_seed != "seed" || dim < 1 || count < 0)
    throw FormatError("malformed noise manifest line: \"" + line + "\"");

  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open noise file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  size_t want = static_cast<size_t>(dim) * static_cast<size_t>(count) * 4;
  if (bytes.size() != want)
    throw FormatError("noise file length mismatch: manifest promises " + std::to_string(want) +
                      " bytes, file has " + std::to_string(bytes.size()));

  NoiseFile out;
  out.seed = seed;
  out.noise = Tensor({count, dim});
  for (int64_t i = 0; i < out.noise.numel(); ++i) {
    uint32_t v = 0;
    for (int b = 0; b < 4; ++b)
      v |= static_cast<uint32_t>(bytes[static_cast<size_t>(i) * 4 + static_cast<size_t>(b)])
           << (8 * b);
    out.noise[i] = std::bit_cast<float>(v);
  }
  return out;
}

}  // namespace glann
