#include "glann/imle.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>

#include "glann/errors.hpp"
#include "glann/losses.hpp"
#include "glann/module_io.hpp"
#include "glann/rng.hpp"

namespace glann {

namespace {

using RowMatXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRowsF =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

RowMatXd rows_as_double(const Tensor& t) {
  return MapRowsF(t.data(), t.dim(0), t.dim(1)).cast<double>();
}

Tensor gather_rows(const Tensor& rows, const std::vector<int64_t>& ids) {
  int64_t d = rows.dim(1);
  Tensor out({static_cast<int64_t>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(rows.data() + ids[i] * d, rows.data() + (ids[i] + 1) * d,
              out.data() + static_cast<int64_t>(i) * d);
  return out;
}

std::vector<int64_t> shuffled_ids(int64_t count, uint64_t seed) {
  std::vector<int64_t> ids(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) ids[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(ids);
  return ids;
}

// Matching runs the network in inference mode, so the running normalization
// statistics have to describe the pool's noise distribution. The fit batches
// must not drive them: matched rows arrive duplicated (many targets can share
// one nearest pool row), and once the matching concentrates, a batch of
// repeated rows has near-zero variance, the running-variance average decays
// toward zero, and inference outputs blow up — which in turn locks every
// match onto a single pool row for good. Each fresh pool therefore
// re-estimates the statistics with one training-mode pass over its noise,
// and the fit steps run with their statistics side effect undone.
std::vector<Tensor> norm_state_copy(nn::Sequential& net) {
  std::vector<Tensor> out;
  for (const auto& p : net.all_tensors())
    if (!p.grad) out.push_back(*p.value);
  return out;
}

void norm_state_restore(nn::Sequential& net, const std::vector<Tensor>& saved) {
  size_t k = 0;
  for (const auto& p : net.all_tensors())
    if (!p.grad) *p.value = saved[k++];
}

void refresh_norm_stats(nn::Sequential& net, const Tensor& inputs) {
  for (const auto& p : net.all_tensors())
    if (!p.grad) {
      net.forward(inputs, true);  // output discarded; only the stat update matters
      return;
    }
}

void validate_imle_config(const ImleTrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.batch < 1) throw ConfigError("batch must be >= 1");
  if (cfg.pool_size < 0) throw ConfigError("pool size must be >= 0 (0 = default)");
  if (cfg.lr < 0) throw ConfigError("mapper learning rate must be >= 0");
  if (cfg.refresh != "per-minibatch" && cfg.refresh != "per-epoch")
    throw ConfigError("unknown refresh policy: " + cfg.refresh);
  if (resolve_pool_size(cfg) < cfg.batch)
    throw ConfigError("pool size " + std::to_string(resolve_pool_size(cfg)) +
                      " is smaller than minibatch size " + std::to_string(cfg.batch));
}

}  // namespace

NoisePool sample_noise_pool(int64_t count, int64_t dim, uint64_t seed) {
  if (count < 1) throw ArgumentError("noise pool needs at least one row");
  if (dim < 1) throw ArgumentError("noise dimension must be >= 1");
  NoisePool pool;
  pool.noise = Tensor({count, dim});
  Rng rng(seed);
  rng.fill_normal(pool.noise.data(), static_cast<size_t>(pool.noise.numel()));
  return pool;
}

Mapper make_mapper(const MapperSpec& spec, uint64_t seed) {
  if (spec.noise_dim < 1) throw ConfigError("mapper noise_dim must be >= 1");
  if (spec.latent_dim < 1) throw ConfigError("mapper latent_dim must be >= 1");
  if (spec.hidden < 1) throw ConfigError("mapper hidden width must be >= 1");
  Mapper t;
  t.spec = spec;
  Rng rng(derive_seed(seed, "mapper"));
  // hidden dense bias is disabled: BatchNorm immediately cancels it
  t.net.add<nn::Dense>(spec.noise_dim, spec.hidden, false, rng);
  t.net.add<nn::BatchNorm>(spec.hidden);
  t.net.add<nn::ReLU>();
  t.net.add<nn::Dense>(spec.hidden, spec.latent_dim, true, rng);
  return t;
}

void map_pool(Mapper& t, NoisePool& pool) {
  if (pool.noise.ndim() != 2)
    throw ArgumentError("noise pool must be (M,d_e), got " + pool.noise.shape_string());
  if (pool.noise.dim(1) != t.spec.noise_dim)
    throw ArgumentError("pool noise dim " + std::to_string(pool.noise.dim(1)) +
                        " does not match mapper noise_dim " +
                        std::to_string(t.spec.noise_dim));
  pool.mapped = t.map(pool.noise, false);
  pool.fresh = true;
}

NearestResult nearest_rows(const Tensor& queries, const Tensor& keys) {
  if (queries.ndim() != 2 || keys.ndim() != 2)
    throw ArgumentError("nearest_rows expects 2-D queries and keys");
  if (keys.dim(0) < 1) throw ArgumentError("nearest_rows: empty key set");
  if (queries.dim(1) != keys.dim(1))
    throw ArgumentError("nearest_rows: dimension mismatch " + queries.shape_string() +
                        " vs " + keys.shape_string());
  int64_t b = queries.dim(0), m = keys.dim(0), d = queries.dim(1);

  // Candidate ranking via the expansion ||q-k||^2 = ||q||^2 + ||k||^2 - 2 q.k
  // (one GEMM); the winner's distance is then recomputed directly so that a
  // bitwise-equal pair reports exactly zero.
  RowMatXd q = rows_as_double(queries);
  RowMatXd k = rows_as_double(keys);
  Eigen::VectorXd qn = q.rowwise().squaredNorm();
  Eigen::VectorXd kn = k.rowwise().squaredNorm();
  RowMatXd g = q * k.transpose();  // (b, m)

  NearestResult r;
  r.index.resize(static_cast<size_t>(b));
  r.distance2.resize(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    int64_t best = 0;
    double best_d2 = qn(i) + kn(0) - 2.0 * g(i, 0);
    for (int64_t j = 1; j < m; ++j) {
      double d2 = qn(i) + kn(j) - 2.0 * g(i, j);
      if (d2 < best_d2) {  // strict: ties keep the lowest index
        best_d2 = d2;
        best = j;
      }
    }
    double exact = 0.0;
    const float* qr = queries.data() + i * d;
    const float* kr = keys.data() + best * d;
    for (int64_t j = 0; j < d; ++j) {
      double diff = static_cast<double>(qr[j]) - kr[j];
      exact += diff * diff;
    }
    r.index[static_cast<size_t>(i)] = best;
    r.distance2[static_cast<size_t>(i)] = exact;
  }
  return r;
}

NearestResult nearest_mapped_noise(const Tensor& z_batch, const NoisePool& pool) {
  if (!pool.fresh)
    throw StateError("noise pool is stale: map_pool must run before matching");
  return nearest_rows(z_batch, pool.mapped);
}

int64_t resolve_pool_size(const ImleTrainConfig& cfg) {
  if (cfg.pool_size > 0) return cfg.pool_size;
  return std::max<int64_t>(10 * cfg.batch, 1024);
}

ImleTrainer::ImleTrainer(Mapper mapper, ImleTrainConfig cfg)
    : mapper_(std::move(mapper)), cfg_(std::move(cfg)) {
  validate_imle_config(cfg_);
}

ImleEpochStats ImleTrainer::run_epoch(const LatentTable& table, int64_t epoch) {
  if (table.dim() != mapper_.spec.latent_dim)
    throw ArgumentError("latent table dim " + std::to_string(table.dim()) +
                        " does not match mapper latent_dim " +
                        std::to_string(mapper_.spec.latent_dim));
  if (cfg_.batch > table.count())
    throw ArgumentError("minibatch " + std::to_string(cfg_.batch) +
                        " exceeds latent table size " + std::to_string(table.count()));

  int64_t m = resolve_pool_size(cfg_);
  NoisePool pool =
      sample_noise_pool(m, mapper_.spec.noise_dim, derive_seed(cfg_.seed, "noise-pool", epoch));
  pool.epoch = epoch;
  refresh_norm_stats(mapper_.net, pool.noise);
  map_pool(mapper_, pool);

  std::vector<int64_t> order =
      shuffled_ids(table.count(), derive_seed(cfg_.seed, "imle-order", epoch));

  ImleEpochStats stats;
  stats.pool_size = m;
  double dist_sum = 0.0;
  int64_t batches = 0;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg_.batch)) {
    size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg_.batch));
    std::vector<int64_t> ids(order.begin() + static_cast<int64_t>(start),
                             order.begin() + static_cast<int64_t>(stop));

    if (!pool.fresh) {
      refresh_norm_stats(mapper_.net, pool.noise);
      map_pool(mapper_, pool);
    }
    Tensor z = table.gather(ids);
    NearestResult match = nearest_mapped_noise(z, pool);
    for (double d2 : match.distance2) dist_sum += std::sqrt(d2);

    // One regression step toward the matched codes, batch-norm in batch mode.
    Tensor e = gather_rows(pool.noise, match.index);
    std::vector<Tensor> norm_state = norm_state_copy(mapper_.net);
    Tensor y = mapper_.net.forward(e, true);
    norm_state_restore(mapper_.net, norm_state);
    LossValueGrad vg = l2_loss_grad(y, z);
    if (!std::isfinite(vg.value))
      throw NumericError("non-finite mapper loss " + std::to_string(vg.value) +
                         " in epoch " + std::to_string(epoch) + " on batch starting at row " +
                         std::to_string(ids.front()));
    mapper_.net.backward(vg.grad);
    if (cfg_.lr != 0.0f) {
      opt_.step(mapper_.net.params(), cfg_.lr);
      // the update invalidates the mapped rows; per-epoch keeps the snapshot
      if (cfg_.refresh == "per-minibatch") pool.fresh = false;
    }
    stats.mean_fit_loss += vg.value;
    ++batches;
  }
  stats.mean_matched_distance = dist_sum / static_cast<double>(table.count());
  stats.mean_fit_loss /= static_cast<double>(batches);
  return stats;
}

PixelImleTrainer::PixelImleTrainer(Generator gen, ImleTrainConfig cfg)
    : gen_(std::move(gen)), cfg_(std::move(cfg)) {
  validate_imle_config(cfg_);
}

ImleEpochStats PixelImleTrainer::run_epoch(const DatasetHandle& data, int64_t epoch) {
  const auto& s = gen_.spec.out_shape;
  if (data.channels() != s[0] || data.height() != s[1] || data.width() != s[2])
    throw ArgumentError("generator emits " + Tensor::shape_str(s) + " images, dataset is (" +
                        std::to_string(data.channels()) + "," + std::to_string(data.height()) +
                        "," + std::to_string(data.width()) + ")");
  int64_t pixels = s[0] * s[1] * s[2];

  // Stage i-ii: fresh noise pool, decoded once through the frozen generator.
  int64_t m = resolve_pool_size(cfg_);
  NoisePool pool =
      sample_noise_pool(m, gen_.spec.latent_dim, derive_seed(cfg_.seed, "pixel-pool", epoch));
  pool.epoch = epoch;
  refresh_norm_stats(gen_.net, pool.noise);
  pool.mapped = gen_.net.forward(pool.noise, false).reshaped({m, pixels});
  pool.fresh = true;

  // Stage iii: match every training image against the frozen snapshot.
  Tensor flat = data.images().reshaped({data.count(), pixels});
  NearestResult match = nearest_mapped_noise(flat, pool);

  ImleEpochStats stats;
  stats.pool_size = m;
  for (double d2 : match.distance2) stats.mean_matched_distance += std::sqrt(d2);
  stats.mean_matched_distance /= static_cast<double>(data.count());

  // Stage iv: refit the generator on the matched (noise, image) pairs.
  int64_t batches = 0;
  for (const auto& b : minibatches(data, cfg_.batch, epoch)) {
    std::vector<int64_t> picks(b.ids.size());
    for (size_t i = 0; i < b.ids.size(); ++i)
      picks[i] = match.index[static_cast<size_t>(b.ids[i])];
    Tensor e = gather_rows(pool.noise, picks);
    std::vector<Tensor> norm_state = norm_state_copy(gen_.net);
    Tensor y = gen_.net.forward(e, true);
    norm_state_restore(gen_.net, norm_state);
    LossValueGrad vg = l2_loss_grad(y, b.pixels);
    if (!std::isfinite(vg.value))
      throw NumericError("non-finite generator loss " + std::to_string(vg.value) +
                         " in epoch " + std::to_string(epoch) + " on batch starting at id " +
                         std::to_string(b.ids.front()));
    gen_.net.backward(vg.grad);
    if (cfg_.lr != 0.0f) opt_.step(gen_.net.params(), cfg_.lr);
    stats.mean_fit_loss += vg.value;
    ++batches;
  }
  stats.mean_fit_loss /= static_cast<double>(batches);
  return stats;
}

Checkpoint mapper_checkpoint(Mapper& mapper, int64_t epoch, const std::string& config_json) {
  Checkpoint ck;
  ck.epoch = epoch;
  ck.config_json = config_json;
  add_module_tensors(ck, "mapper", mapper.net.all_tensors());
  return ck;
}

void mapper_restore(const Checkpoint& ck, Mapper& mapper) {
  copy_module_tensors(ck, "mapper", mapper.net.all_tensors());
}

}  // namespace glann
