#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glann/checkpoint.hpp"
#include "glann/dataset.hpp"
#include "glann/glo.hpp"
#include "glann/nn.hpp"
#include "glann/optim.hpp"
#include "glann/tensor.hpp"

namespace glann {

// A batch of noise draws together with their images under the mapper.
// `fresh` asserts that `mapped` was produced by map_pool and has not been
// invalidated by a mapper update since.
struct NoisePool {
  Tensor noise;   // (M, d_e), i.i.d. standard normal
  Tensor mapped;  // (M, d); empty until map_pool fills it
  int64_t epoch = 0;
  bool fresh = false;
};

NoisePool sample_noise_pool(int64_t count, int64_t dim, uint64_t seed);

// Noise-to-latent mapping network: two dense layers with batch-normalized
// ReLU hidden units.
struct MapperSpec {
  int64_t noise_dim = 64;   // d_e
  int64_t latent_dim = 64;  // must equal the latent table dimension
  int64_t hidden = 128;
};

struct Mapper {
  nn::Sequential net;
  MapperSpec spec;

  Tensor map(const Tensor& e, bool train) { return net.forward(e, train); }
};

Mapper make_mapper(const MapperSpec& spec, uint64_t seed);

// Fill pool.mapped = T(noise) in inference mode and mark the pool fresh.
void map_pool(Mapper& t, NoisePool& pool);

// Exact nearest neighbor under squared Euclidean distance; ties resolve to
// the lowest key index. Distances are accumulated in double precision.
struct NearestResult {
  std::vector<int64_t> index;      // per query row
  std::vector<double> distance2;   // squared distance to the winner
};

NearestResult nearest_rows(const Tensor& queries, const Tensor& keys);

// Matching against a pool; refuses stale pools (mapped rows that no longer
// reflect the current mapper would silently corrupt the matches).
NearestResult nearest_mapped_noise(const Tensor& z_batch, const NoisePool& pool);

struct ImleTrainConfig {
  int64_t epochs = 50;
  int64_t pool_size = 0;  // 0 -> max(10 * batch, 1024)
  int64_t batch = 128;
  float lr = 0.001f;
  std::string refresh = "per-minibatch";  // per-minibatch | per-epoch
  uint64_t seed = 0;
};

int64_t resolve_pool_size(const ImleTrainConfig& cfg);

struct ImleEpochStats {
  double mean_matched_distance = 0.0;  // mean Euclidean distance at match time
  double mean_fit_loss = 0.0;          // mean per-batch regression loss
  int64_t pool_size = 0;
};

// One trainer epoch: draw a fresh noise pool, then for each minibatch of
// latent rows match them to their nearest mapped noise and take one
// optimizer step pulling T(e) toward the matched codes. With per-minibatch
// refresh the pool is remapped after every step; per-epoch refresh keeps the
// epoch-start snapshot (cheaper, approximate).
class ImleTrainer {
 public:
  ImleTrainer(Mapper mapper, ImleTrainConfig cfg);

  ImleEpochStats run_epoch(const LatentTable& table, int64_t epoch);

  Mapper& mapper() { return mapper_; }
  const Mapper& mapper() const { return mapper_; }
  const ImleTrainConfig& config() const { return cfg_; }

 private:
  Mapper mapper_;
  ImleTrainConfig cfg_;
  Adam opt_;
};

// Pixel-space baseline: the generator itself plays the mapper. Per epoch the
// noise pool is decoded to images once, every training image is matched to
// its nearest generated image in pixel L2, and the generator is refit on the
// matched (noise, image) pairs.
class PixelImleTrainer {
 public:
  PixelImleTrainer(Generator gen, ImleTrainConfig cfg);

  ImleEpochStats run_epoch(const DatasetHandle& data, int64_t epoch);

  Generator& generator() { return gen_; }
  const ImleTrainConfig& config() const { return cfg_; }

 private:
  Generator gen_;
  ImleTrainConfig cfg_;
  Adam opt_;
};

// Checkpoint round trip, mapper tensors under "mapper/".
Checkpoint mapper_checkpoint(Mapper& mapper, int64_t epoch, const std::string& config_json);
void mapper_restore(const Checkpoint& ck, Mapper& mapper);

}  // namespace glann
