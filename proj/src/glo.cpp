#include "glann/glo.hpp"

#include <algorithm>
#include <cmath>

#include "glann/errors.hpp"
#include "glann/module_io.hpp"
#include "glann/rng.hpp"

namespace glann {

namespace {

void project_row(float* row, int64_t d, int64_t id) {
  double sq = 0.0;
  for (int64_t j = 0; j < d; ++j) sq += static_cast<double>(row[j]) * row[j];
  double norm = std::sqrt(sq);
  if (norm == 0.0)
    throw NumericError("latent row " + std::to_string(id) +
                       " has zero norm and cannot be projected to the sphere");
  for (int64_t j = 0; j < d; ++j) row[j] = static_cast<float>(row[j] / norm);
}

}  // namespace

void project_rows_to_sphere(Tensor& rows) {
  if (rows.ndim() != 2) throw ArgumentError("project_rows_to_sphere: expected (N,d)");
  int64_t n = rows.dim(0), d = rows.dim(1);
  for (int64_t i = 0; i < n; ++i) project_row(rows.data() + i * d, d, i);
}

LatentTable::LatentTable(int64_t count, int64_t dim, uint64_t seed) {
  if (count < 1) throw ArgumentError("latent table needs at least one row");
  if (dim < 1) throw ArgumentError("latent dimension must be >= 1");
  rows_ = Tensor({count, dim});
  Rng rng(derive_seed(seed, "latent-init"));
  rng.fill_normal(rows_.data(), static_cast<size_t>(rows_.numel()));
  project_rows_to_sphere(rows_);
}

LatentTable LatentTable::from_rows(Tensor rows) {
  if (rows.ndim() != 2) throw ArgumentError("latent table must be (N,d)");
  if (rows.dim(0) < 1 || rows.dim(1) < 1) throw ArgumentError("latent table must be non-empty");
  return LatentTable(std::move(rows));
}

Tensor LatentTable::gather(const std::vector<int64_t>& ids) const {
  int64_t d = dim();
  Tensor out({static_cast<int64_t>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    int64_t id = ids[i];
    if (id < 0 || id >= count())
      throw ArgumentError("latent id " + std::to_string(id) + " out of range [0," +
                          std::to_string(count()) + ")");
    std::copy(rows_.data() + id * d, rows_.data() + (id + 1) * d,
              out.data() + static_cast<int64_t>(i) * d);
  }
  return out;
}

void LatentTable::apply_grad(const std::vector<int64_t>& ids, const Tensor& grad, float lr) {
  int64_t d = dim();
  if (grad.ndim() != 2 || grad.dim(0) != static_cast<int64_t>(ids.size()) || grad.dim(1) != d)
    throw ArgumentError("latent grad shape " + grad.shape_string() + " does not match " +
                        std::to_string(ids.size()) + " ids of dim " + std::to_string(d));
  if (lr == 0.0f) return;  // exact zero-step: no update, no re-projection
  for (size_t i = 0; i < ids.size(); ++i) {
    int64_t id = ids[i];
    if (id < 0 || id >= count())
      throw ArgumentError("latent id " + std::to_string(id) + " out of range");
    float* row = rows_.data() + id * d;
    const float* g = grad.data() + static_cast<int64_t>(i) * d;
    for (int64_t j = 0; j < d; ++j) row[j] -= lr * g[j];
    project_row(row, d, id);
  }
}

Generator make_generator(const GeneratorSpec& spec, uint64_t seed) {
  if (spec.latent_dim < 1) throw ConfigError("generator latent_dim must be >= 1");
  if (spec.width < 1) throw ConfigError("generator width must be >= 1");
  if (spec.out_shape.size() != 3)
    throw ConfigError("generator out_shape must be (C,H,W)");
  int64_t C = spec.out_shape[0], H = spec.out_shape[1], W = spec.out_shape[2];
  if (C < 1 || H < 1 || W < 1) throw ConfigError("generator out_shape must be positive");

  Generator gen;
  gen.spec = spec;
  Rng rng(derive_seed(seed, "generator"));
  int64_t d = spec.latent_dim, w = spec.width;
  auto& net = gen.net;

  if (spec.arch == "mlp") {
    net.add<nn::Dense>(d, w, true, rng);
    net.add<nn::ReLU>();
    net.add<nn::Dense>(w, w, true, rng);
    net.add<nn::ReLU>();
    net.add<nn::Dense>(w, C * H * W, true, rng);
    net.add<nn::Tanh>();
    net.add<nn::Reshape>(std::vector<int64_t>{C, H, W});
  } else if (spec.arch == "conv28") {
    if (H != 28 || W != 28) throw ConfigError("conv28 generator emits 28x28 images");
    if (w < 2 || w % 2 != 0) throw ConfigError("conv28 width must be even and >= 2");
    // dense biases are disabled where BatchNorm immediately cancels them
    net.add<nn::Dense>(d, 4 * w, false, rng);
    net.add<nn::BatchNorm>(4 * w);
    net.add<nn::ReLU>();
    net.add<nn::Dense>(4 * w, w * 7 * 7, false, rng);
    net.add<nn::Reshape>(std::vector<int64_t>{w, 7, 7});
    net.add<nn::BatchNorm>(w);
    net.add<nn::ReLU>();
    net.add<nn::ConvTranspose2d>(nn::ConvSpec{w, w / 2, 4, 2, 1}, rng);  // 7 -> 14
    net.add<nn::BatchNorm>(w / 2);
    net.add<nn::ReLU>();
    net.add<nn::ConvTranspose2d>(nn::ConvSpec{w / 2, C, 4, 2, 1}, rng);  // 14 -> 28
    net.add<nn::Tanh>();
  } else if (spec.arch == "conv32") {
    if (H != 32 || W != 32) throw ConfigError("conv32 generator emits 32x32 images");
    if (w < 4 || w % 4 != 0) throw ConfigError("conv32 width must be divisible by 4");
    net.add<nn::Dense>(d, w * 4 * 4, false, rng);
    net.add<nn::Reshape>(std::vector<int64_t>{w, 4, 4});
    net.add<nn::BatchNorm>(w);
    net.add<nn::ReLU>();
    net.add<nn::ConvTranspose2d>(nn::ConvSpec{w, w / 2, 4, 2, 1}, rng);  // 4 -> 8
    net.add<nn::BatchNorm>(w / 2);
    net.add<nn::ReLU>();
    net.add<nn::ConvTranspose2d>(nn::ConvSpec{w / 2, w / 4, 4, 2, 1}, rng);  // 8 -> 16
    net.add<nn::BatchNorm>(w / 4);
    net.add<nn::ReLU>();
    net.add<nn::ConvTranspose2d>(nn::ConvSpec{w / 4, C, 4, 2, 1}, rng);  // 16 -> 32
    net.add<nn::Tanh>();
  } else {
    throw ConfigError("unknown generator arch: " + spec.arch);
  }
  return gen;
}

GloTrainer::GloTrainer(Generator gen, LatentTable latents, GloTrainConfig cfg)
    : gen_(std::move(gen)),
      latents_(std::move(latents)),
      cfg_(std::move(cfg)),
      loss_(make_recon_loss(cfg_.loss, gen_.spec.out_shape[0])) {
  if (cfg_.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg_.batch < 1) throw ConfigError("batch must be >= 1");
  if (cfg_.latent_lr < 0 || cfg_.gen_lr_ratio < 0)
    throw ConfigError("learning rates must be >= 0");
  if (!(cfg_.decay > 0.0f && cfg_.decay <= 1.0f)) throw ConfigError("decay must be in (0,1]");
  if (cfg_.decay_interval < 1) throw ConfigError("decay interval must be >= 1");
  if (cfg_.optimizer != "adam" && cfg_.optimizer != "sgd")
    throw ConfigError("unknown generator optimizer: " + cfg_.optimizer);
  if (latents_.dim() != gen_.spec.latent_dim)
    throw ArgumentError("latent table dim " + std::to_string(latents_.dim()) +
                        " does not match generator latent_dim " +
                        std::to_string(gen_.spec.latent_dim));
}

double GloTrainer::lr_scale(int64_t epoch) const {
  return std::pow(static_cast<double>(cfg_.decay),
                  static_cast<double>(epoch / cfg_.decay_interval));
}

GloEpochStats GloTrainer::run_epoch(const DatasetHandle& data, int64_t epoch) {
  if (latents_.count() != data.count())
    throw ArgumentError("latent table has " + std::to_string(latents_.count()) +
                        " rows, dataset has " + std::to_string(data.count()));
  double scale = lr_scale(epoch);
  float z_lr = static_cast<float>(cfg_.latent_lr * scale);
  float g_lr = static_cast<float>(cfg_.latent_lr * cfg_.gen_lr_ratio * scale);

  GloEpochStats stats;
  for (const auto& b : minibatches(data, cfg_.batch, epoch)) {
    Tensor z = latents_.gather(b.ids);
    Tensor y = gen_.net.forward(z, true);
    LossValueGrad vg = loss_.value_grad(y, b.pixels);
    if (!std::isfinite(vg.value))
      throw NumericError("non-finite loss " + std::to_string(vg.value) + " in epoch " +
                         std::to_string(epoch) + " on batch starting at id " +
                         std::to_string(b.ids.empty() ? -1 : b.ids.front()));
    Tensor gz = gen_.net.backward(vg.grad);
    if (cfg_.optimizer == "adam")
      adam_.step(gen_.net.params(), g_lr);
    else
      sgd_.step(gen_.net.params(), g_lr);
    latents_.apply_grad(b.ids, gz, z_lr);
    stats.batch_losses.push_back(vg.value);
  }
  for (double v : stats.batch_losses) stats.mean_loss += v;
  stats.mean_loss /= static_cast<double>(stats.batch_losses.size());
  return stats;
}

ImageBatch glo_reconstruct(Generator& gen, const LatentTable& table,
                           const std::vector<int64_t>& ids) {
  ImageBatch out;
  out.ids = ids;
  const auto& s = gen.spec.out_shape;
  if (ids.empty()) {
    out.pixels = Tensor({0, s[0], s[1], s[2]});
    return out;
  }
  out.pixels = gen.net.forward(table.gather(ids), false);
  return out;
}

Checkpoint glo_checkpoint(Generator& gen, const LatentTable& table, int64_t epoch,
                          const std::string& config_json) {
  Checkpoint ck;
  ck.epoch = epoch;
  ck.config_json = config_json;
  add_module_tensors(ck, "gen", gen.net.all_tensors());
  ck.add("latents/rows", table.rows());
  return ck;
}

void glo_restore(const Checkpoint& ck, Generator& gen, LatentTable& table) {
  copy_module_tensors(ck, "gen", gen.net.all_tensors());
  const Tensor& rows = ck.get("latents/rows");
  if (!rows.same_shape(table.rows()))
    throw StateError("checkpoint latent table is " + rows.shape_string() +
                     ", model expects " + table.rows().shape_string());
  std::copy(rows.data(), rows.data() + rows.numel(), table.rows().data());
}

Checkpoint generator_checkpoint(Generator& gen, int64_t epoch, const std::string& config_json) {
  Checkpoint ck;
  ck.epoch = epoch;
  ck.config_json = config_json;
  add_module_tensors(ck, "gen", gen.net.all_tensors());
  return ck;
}

void generator_restore(const Checkpoint& ck, Generator& gen) {
  copy_module_tensors(ck, "gen", gen.net.all_tensors());
}

}  // namespace glann
