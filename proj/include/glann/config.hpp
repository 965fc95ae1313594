#pragma once

#include <cstdint>
#include <string>

#include "glann/glo.hpp"
#include "glann/imle.hpp"
#include "glann/losses.hpp"

namespace glann {

// Where the training images come from.
struct DatasetConfig {
  std::string kind = "digits";  // digits | idx | dir
  std::string path;             // idx image file or raster directory
  std::string labels_path;      // optional idx labels (classifier embedder)
  int64_t count = 4096;         // digits: corpus size; idx: keep first N (0 = all)
  int64_t image_size = 28;      // dir: short-side resize + center-crop target
};

// Network sizes. The generator's output shape is not configured here; it is
// taken from the dataset at run time and validated against the architecture.
struct ModelConfig {
  std::string arch = "conv28";  // conv28 | conv32 | mlp
  int64_t latent_dim = 64;      // d: per-image code width
  int64_t width = 32;           // base channels (conv) or hidden units (mlp)
  int64_t noise_dim = 64;       // d_e: mapper input width
  int64_t mapper_hidden = 128;  // mapper hidden width (0 = single linear layer)
};

// Optional direct noise-to-pixel baseline trained alongside the main model.
struct PixelImleConfig {
  bool enabled = false;
  int64_t epochs = 50;
  int64_t batch = 128;
  int64_t pool_size = 0;  // 0 = max(10 * batch, 1024)
  float lr = 0.001f;
};

struct EvalSpec {
  std::string embedder = "randproj";  // randproj | classifier
  uint64_t embedder_seed = 7;
  int64_t n = 10000;  // clamped to the dataset size at run time
  int64_t bins = 20;
  int64_t angles = 1001;
};

struct SampleSpec {
  int64_t count = 64;
  int64_t grid_cols = 8;
};

// Everything a full run needs. Every field has a default; the JSON form
// round-trips losslessly. Sub-seeds (dataset order, inits, pools, eval
// draws) are all derived from the single global seed.
struct PipelineConfig {
  uint64_t seed = 0;
  std::string out_dir = "runs";
  DatasetConfig dataset;
  ModelConfig model;
  GloTrainConfig glo;  // glo.loss is serialized as its own "loss" section
  ImleTrainConfig imle;
  PixelImleConfig pixel_imle;
  EvalSpec eval;
  SampleSpec samples;

  PipelineConfig() {
    glo.loss.kind = LossKind::LapPyramid;
    glo.epochs = 500;
  }
};

// JSON text -> config. Missing keys keep their defaults; unknown keys and
// type mismatches raise ConfigError. The embedded trainer seeds are not part
// of the text form (they are derived from the global seed when running).
PipelineConfig parse_pipeline_config(const std::string& json_text);

// Reads the file and parses it; unreadable file raises FormatError.
PipelineConfig load_pipeline_config(const std::string& path);

// Canonical JSON (sorted keys, two-space indent). parse(dump(c)) == c.
std::string dump_pipeline_config(const PipelineConfig& cfg);

// Structural validation beyond parsing (enumerations, positive sizes).
// parse_pipeline_config calls this; call it again after programmatic edits.
void validate_pipeline_config(const PipelineConfig& cfg);

// 16 hex digits of FNV-1a over the canonical dump: stable run identity.
std::string pipeline_config_hash(const PipelineConfig& cfg);

}  // namespace glann
