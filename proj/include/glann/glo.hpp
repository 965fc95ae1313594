#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glann/checkpoint.hpp"
#include "glann/dataset.hpp"
#include "glann/losses.hpp"
#include "glann/nn.hpp"
#include "glann/optim.hpp"
#include "glann/tensor.hpp"

namespace glann {

// Normalize each row of an (N,d) matrix to unit Euclidean norm, in place.
// A zero-norm row has no direction to keep and raises NumericError; callers
// must not paper over it by re-randomizing (that would silently corrupt the
// id -> code association).
void project_rows_to_sphere(Tensor& rows);

// Learnable per-image latent codes: one unit-norm row per dataset id.
class LatentTable {
 public:
  // i.i.d. standard normal rows projected to the sphere.
  LatentTable(int64_t count, int64_t dim, uint64_t seed);

  // Adopt an existing (N,d) matrix verbatim, e.g. from a checkpoint whose
  // rows are already unit norm.
  static LatentTable from_rows(Tensor rows);

  int64_t count() const { return rows_.dim(0); }
  int64_t dim() const { return rows_.dim(1); }
  const Tensor& rows() const { return rows_; }
  Tensor& rows() { return rows_; }

  Tensor gather(const std::vector<int64_t>& ids) const;  // (B,d)

  // One SGD step on the selected rows followed by immediate re-projection.
  // lr == 0 is an exact no-op (the zero-step contract is bitwise).
  void apply_grad(const std::vector<int64_t>& ids, const Tensor& grad, float lr);

 private:
  explicit LatentTable(Tensor rows) : rows_(std::move(rows)) {}
  Tensor rows_;
};

// Decoder from latent space to images.
struct GeneratorSpec {
  std::string arch = "conv28";  // conv28 | conv32 | mlp
  int64_t latent_dim = 64;
  int64_t width = 32;           // base channel count (conv) or hidden units (mlp)
  std::vector<int64_t> out_shape = {1, 28, 28};
};

struct Generator {
  nn::Sequential net;
  GeneratorSpec spec;

  Tensor decode(const Tensor& z, bool train) { return net.forward(z, train); }
};

Generator make_generator(const GeneratorSpec& spec, uint64_t seed);

struct GloTrainConfig {
  int64_t epochs = 500;
  int64_t batch = 128;
  float latent_lr = 0.01f;      // projected SGD on the latent rows
  float gen_lr_ratio = 0.1f;    // generator rate = ratio * latent rate
  float decay = 0.5f;           // rate multiplier ...
  int64_t decay_interval = 50;  // ... applied every this many epochs
  std::string optimizer = "adam";  // generator optimizer: adam | sgd
  LossSpec loss;
  uint64_t seed = 0;
};

struct GloEpochStats {
  double mean_loss = 0.0;
  std::vector<double> batch_losses;
};

// Joint optimization of generator weights and per-image latent codes: each
// step decodes the batch codes, measures reconstruction error, updates the
// generator, then steps the codes and re-projects them onto the sphere.
class GloTrainer {
 public:
  GloTrainer(Generator gen, LatentTable latents, GloTrainConfig cfg);

  GloEpochStats run_epoch(const DatasetHandle& data, int64_t epoch);

  // decay^(epoch / interval), applied to both learning rates
  double lr_scale(int64_t epoch) const;

  Generator& generator() { return gen_; }
  const Generator& generator() const { return gen_; }
  LatentTable& latents() { return latents_; }
  const LatentTable& latents() const { return latents_; }
  const GloTrainConfig& config() const { return cfg_; }

 private:
  Generator gen_;
  LatentTable latents_;
  GloTrainConfig cfg_;
  ReconLoss loss_;
  Adam adam_;
  Sgd sgd_;
};

// Inference-mode decode of the stored codes for the given ids.
ImageBatch glo_reconstruct(Generator& gen, const LatentTable& table,
                           const std::vector<int64_t>& ids);

// Checkpoint round trip: generator tensors under "gen/", codes under
// "latents/rows". Restoring requires an identically configured model.
Checkpoint glo_checkpoint(Generator& gen, const LatentTable& table, int64_t epoch,
                          const std::string& config_json);
void glo_restore(const Checkpoint& ck, Generator& gen, LatentTable& table);

// Generator-only variant, for models trained without a latent table.
Checkpoint generator_checkpoint(Generator& gen, int64_t epoch, const std::string& config_json);
void generator_restore(const Checkpoint& ck, Generator& gen);

}  // namespace glann
