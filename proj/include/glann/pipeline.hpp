#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "glann/config.hpp"
#include "glann/dataset.hpp"
#include "glann/evaluation.hpp"
#include "glann/synthesis.hpp"

namespace glann {

// Dataset plus the labels that came with it (empty when the source has none;
// the classifier embedder is the only consumer).
struct LoadedData {
  DatasetHandle data;
  std::vector<int> labels;
};

LoadedData load_dataset(const DatasetConfig& cfg, uint64_t seed);

// True when GLANN_DETERMINISTIC is 1/true/on/yes: run directories are then
// named by config hash alone instead of wall clock + hash, so artifact paths
// reproduce too. Tensor results are deterministic either way.
bool deterministic_mode();

// Fresh directory under cfg.out_dir; existing names get a numeric suffix,
// reruns never overwrite.
std::filesystem::path make_run_dir(const PipelineConfig& cfg);

// Creates run_dir if needed and writes config.json, or verifies the one
// already there matches cfg exactly; a mismatch is a StateError. Every
// command that touches a run directory goes through this.
void bind_run_dir(const PipelineConfig& cfg, const std::filesystem::path& run_dir);

struct PipelineResult {
  std::filesystem::path run_dir;
  std::string config_hash;
  EvalReport glann;                // noise -> mapper -> generator sampler
  EvalReport gaussian;             // Gaussian fit to the latent table
  std::optional<EvalReport> pixel; // direct pixel-space baseline, if trained
};

// Full run: dataset -> GLO -> mapper -> optional pixel baseline -> sample
// grids -> evaluation reports. `run_dir` empty creates a fresh directory;
// pointing it at an existing run resumes it (stages whose checkpoint file is
// already present are loaded, not retrained). Errors propagate with the
// failing stage and the last completed checkpoint named in the message.
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& run_dir = "",
                            std::ostream* log = nullptr);

// --- individual stages, for the CLI's partial subcommands ---

struct GloStage {
  Generator gen;
  LatentTable table;
  bool trained = false;  // false = loaded from an existing checkpoint
};

GloStage run_glo_stage(const PipelineConfig& cfg, const LoadedData& ld,
                       const std::filesystem::path& run_dir, std::ostream* log);

Mapper run_mapper_stage(const PipelineConfig& cfg, const LoadedData& ld,
                        const LatentTable& table, const std::filesystem::path& run_dir,
                        std::ostream* log);

Generator run_pixel_stage(const PipelineConfig& cfg, const LoadedData& ld,
                          const std::filesystem::path& run_dir, std::ostream* log);

// Sample grids plus one report per available sampler, written into run_dir.
PipelineResult run_output_stage(const PipelineConfig& cfg, const LoadedData& ld,
                                TrainedModel& model, const LatentTable& table,
                                Generator* pixel_gen,
                                const std::filesystem::path& run_dir, std::ostream* log);

// Rebuild models from a run directory's checkpoints alone. The generator's
// output shape and the table size come from the snapshot stored inside
// glo.ck, so no dataset access is needed.
struct LoadedRun {
  PipelineConfig cfg;
  std::vector<int64_t> out_shape;  // (C,H,W) resolved at training time
  int64_t data_count = 0;
  Generator gen;
  LatentTable table;
  std::optional<Mapper> mapper;        // when mapper.ck exists
  std::optional<Generator> pixel_gen;  // when pixel_imle.ck exists
};

LoadedRun load_run(const std::filesystem::path& run_dir);

}  // namespace glann
