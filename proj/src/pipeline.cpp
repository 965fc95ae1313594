#include "glann/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <utility>

#include "json.hpp"

#include "glann/digits.hpp"
#include "glann/errors.hpp"
#include "glann/image_io.hpp"
#include "glann/rng.hpp"

namespace fs = std::filesystem;

namespace glann {

namespace {

using nlohmann::json;

void say(std::ostream* log, const std::string& line) {
  if (log) (*log) << line << "\n";
}

bool log_this_epoch(int64_t epoch, int64_t total) {
  int64_t every = std::max<int64_t>(1, total / 10);
  return epoch % every == 0 || epoch == total - 1;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot read '" + path.string() + "'");
  std::ostringstream text;
  text << f.rdbuf();
  return text.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write '" + path.string() + "'");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw FormatError("failed writing '" + path.string() + "'");
}

// Checkpoint config snapshot: the config itself plus what was resolved from
// the dataset, so models can be rebuilt without touching the data again.
std::string stage_snapshot(const PipelineConfig& cfg, const DatasetHandle& data) {
  json j;
  j["config"] = json::parse(dump_pipeline_config(cfg));
  j["resolved"] = {
      {"out_shape", std::vector<int64_t>{data.channels(), data.height(), data.width()}},
      {"count", data.count()}};
  return j.dump(2);
}

GeneratorSpec generator_spec_for(const PipelineConfig& cfg, const DatasetHandle& data) {
  GeneratorSpec gs;
  gs.arch = cfg.model.arch;
  gs.latent_dim = cfg.model.latent_dim;
  gs.width = cfg.model.width;
  gs.out_shape = {data.channels(), data.height(), data.width()};
  return gs;
}

ImageBatch pixel_sample(Generator& gen, int64_t n, uint64_t seed) {
  NoisePool pool = sample_noise_pool(n, gen.spec.latent_dim, seed);
  ImageBatch b;
  b.pixels = gen.decode(pool.noise, false);
  b.ids.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) b.ids[static_cast<size_t>(i)] = i;
  return b;
}

Embedder build_embedder(const PipelineConfig& cfg, const LoadedData& ld, std::ostream* log) {
  if (cfg.eval.embedder == "classifier") {
    if (ld.labels.empty())
      throw ConfigError(
          "the classifier embedder needs labels; use the digits corpus or set "
          "dataset.labels_path");
    ClassifierTrainConfig tc;
    tc.classes = std::max(2, 1 + *std::max_element(ld.labels.begin(), ld.labels.end()));
    tc.seed = cfg.eval.embedder_seed;
    say(log, "eval: training classifier embedder (" + std::to_string(tc.classes) +
                 " classes)");
    ClassifierResult cr = train_classifier_embedder(ld.data, ld.labels, tc);
    std::ostringstream acc;
    acc << "eval: classifier train accuracy " << cr.train_accuracy;
    say(log, acc.str());
    return std::move(cr.embedder);
  }
  return Embedder::random_projection(ld.data.channels(), cfg.eval.embedder_seed);
}

// Rethrow preserving the dynamic error kind (the exit code depends on it)
// with the failing stage and last completed checkpoint in the message.
[[noreturn]] void rethrow_with_stage(const Error& e, const std::string& stage,
                                     const fs::path& last_ck) {
  std::string msg = "stage '" + stage + "' failed: " + e.what();
  msg += last_ck.empty() ? " (no completed checkpoint)"
                         : " (last completed checkpoint: " + last_ck.string() + ")";
  if (dynamic_cast<const ChecksumError*>(&e)) throw ChecksumError(msg);
  if (dynamic_cast<const VersionError*>(&e)) throw VersionError(msg);
  if (dynamic_cast<const MissingTensorError*>(&e)) throw MissingTensorError(msg);
  if (dynamic_cast<const FormatError*>(&e)) throw FormatError(msg);
  if (dynamic_cast<const StateError*>(&e)) throw StateError(msg);
  if (dynamic_cast<const NumericError*>(&e)) throw NumericError(msg);
  if (dynamic_cast<const ConfigError*>(&e)) throw ConfigError(msg);
  if (dynamic_cast<const ArgumentError*>(&e)) throw ArgumentError(msg);
  throw Error(msg);
}

}  // namespace

LoadedData load_dataset(const DatasetConfig& cfg, uint64_t seed) {
  uint64_t order_seed = derive_seed(seed, "dataset");
  if (cfg.kind == "digits") {
    DigitCorpus corpus = make_digit_corpus(cfg.count, derive_seed(seed, "digits"));
    return {DatasetHandle::from_tensor(std::move(corpus.images),
                                       "digits:" + std::to_string(cfg.count), order_seed),
            std::move(corpus.labels)};
  }
  if (cfg.kind == "idx") {
    DatasetHandle data = DatasetHandle::load_idx(cfg.path, order_seed, cfg.count);
    std::vector<int> labels;
    if (!cfg.labels_path.empty()) {
      labels = load_idx_labels(cfg.labels_path, cfg.count);
      if (static_cast<int64_t>(labels.size()) != data.count())
        throw FormatError("label file has " + std::to_string(labels.size()) +
                          " entries for " + std::to_string(data.count()) + " images");
    }
    return {std::move(data), std::move(labels)};
  }
  if (cfg.kind == "dir")
    return {DatasetHandle::load_image_dir(cfg.path, cfg.image_size, order_seed), {}};
  throw ConfigError("dataset kind must be digits, idx or dir, got '" + cfg.kind + "'");
}

bool deterministic_mode() {
  const char* v = std::getenv("GLANN_DETERMINISTIC");
  if (!v) return false;
  std::string s(v);
  return s == "1" || s == "true" || s == "on" || s == "yes";
}

fs::path make_run_dir(const PipelineConfig& cfg) {
  std::string stem;
  if (deterministic_mode()) {
    stem = "run-" + pipeline_config_hash(cfg);
  } else {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    localtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
    stem = std::string(buf) + "-" + pipeline_config_hash(cfg);
  }
  fs::path base(cfg.out_dir);
  fs::path dir = base / stem;
  for (int k = 2; fs::exists(dir); ++k) dir = base / (stem + "-" + std::to_string(k));
  fs::create_directories(dir);
  return dir;
}

GloStage run_glo_stage(const PipelineConfig& cfg, const LoadedData& ld,
                       const fs::path& run_dir, std::ostream* log) {
  const DatasetHandle& data = ld.data;
  Generator gen = make_generator(generator_spec_for(cfg, data), cfg.seed);
  LatentTable table(data.count(), cfg.model.latent_dim, cfg.seed);

  fs::path ck_path = run_dir / "glo.ck";
  if (fs::exists(ck_path)) {
    Checkpoint ck = Checkpoint::load(ck_path.string());
    glo_restore(ck, gen, table);
    say(log, "glo: reusing " + ck_path.string() + " (epoch " + std::to_string(ck.epoch) +
                 ")");
    return {std::move(gen), std::move(table), false};
  }

  GloTrainConfig gc = cfg.glo;
  gc.batch = std::min(gc.batch, data.count());
  gc.seed = derive_seed(cfg.seed, "glo-train");
  GloTrainer trainer(std::move(gen), std::move(table), gc);
  for (int64_t epoch = 0; epoch < gc.epochs; ++epoch) {
    GloEpochStats st = trainer.run_epoch(data, epoch);
    if (log && log_this_epoch(epoch, gc.epochs)) {
      std::ostringstream line;
      line << "glo epoch " << epoch + 1 << "/" << gc.epochs << "  loss " << st.mean_loss;
      say(log, line.str());
    }
  }
  Checkpoint ck = glo_checkpoint(trainer.generator(), trainer.latents(), gc.epochs,
                                 stage_snapshot(cfg, data));
  ck.save(ck_path.string());
  say(log, "glo: wrote " + ck_path.string());
  return {std::move(trainer.generator()), std::move(trainer.latents()), true};
}

Mapper run_mapper_stage(const PipelineConfig& cfg, const LoadedData& ld,
                        const LatentTable& table, const fs::path& run_dir,
                        std::ostream* log) {
  MapperSpec ms{cfg.model.noise_dim, cfg.model.latent_dim, cfg.model.mapper_hidden};
  Mapper mapper = make_mapper(ms, cfg.seed);

  fs::path ck_path = run_dir / "mapper.ck";
  if (fs::exists(ck_path)) {
    Checkpoint ck = Checkpoint::load(ck_path.string());
    mapper_restore(ck, mapper);
    say(log, "mapper: reusing " + ck_path.string() + " (epoch " +
                 std::to_string(ck.epoch) + ")");
    return mapper;
  }

  ImleTrainConfig ic = cfg.imle;
  ic.batch = std::min(ic.batch, table.count());
  ic.seed = derive_seed(cfg.seed, "imle-train");
  ImleTrainer trainer(std::move(mapper), ic);
  for (int64_t epoch = 0; epoch < ic.epochs; ++epoch) {
    ImleEpochStats st = trainer.run_epoch(table, epoch);
    if (log && log_this_epoch(epoch, ic.epochs)) {
      std::ostringstream line;
      line << "mapper epoch " << epoch + 1 << "/" << ic.epochs << "  matched distance "
           << st.mean_matched_distance << "  fit loss " << st.mean_fit_loss;
      say(log, line.str());
    }
  }
  Checkpoint ck =
      mapper_checkpoint(trainer.mapper(), ic.epochs, stage_snapshot(cfg, ld.data));
  ck.save(ck_path.string());
  say(log, "mapper: wrote " + ck_path.string());
  return std::move(trainer.mapper());
}

Generator run_pixel_stage(const PipelineConfig& cfg, const LoadedData& ld,
                          const fs::path& run_dir, std::ostream* log) {
  const DatasetHandle& data = ld.data;
  Generator gen =
      make_generator(generator_spec_for(cfg, data), derive_seed(cfg.seed, "pixel-baseline"));

  fs::path ck_path = run_dir / "pixel_imle.ck";
  if (fs::exists(ck_path)) {
    Checkpoint ck = Checkpoint::load(ck_path.string());
    generator_restore(ck, gen);
    say(log, "pixel-imle: reusing " + ck_path.string() + " (epoch " +
                 std::to_string(ck.epoch) + ")");
    return gen;
  }

  ImleTrainConfig pc;
  pc.epochs = cfg.pixel_imle.epochs;
  pc.batch = std::min(cfg.pixel_imle.batch, data.count());
  pc.pool_size = cfg.pixel_imle.pool_size;
  pc.lr = cfg.pixel_imle.lr;
  pc.seed = derive_seed(cfg.seed, "pixel-train");
  PixelImleTrainer trainer(std::move(gen), pc);
  for (int64_t epoch = 0; epoch < pc.epochs; ++epoch) {
    ImleEpochStats st = trainer.run_epoch(data, epoch);
    if (log && log_this_epoch(epoch, pc.epochs)) {
      std::ostringstream line;
      line << "pixel-imle epoch " << epoch + 1 << "/" << pc.epochs << "  matched distance "
           << st.mean_matched_distance;
      say(log, line.str());
    }
  }
  Checkpoint ck =
      generator_checkpoint(trainer.generator(), pc.epochs, stage_snapshot(cfg, data));
  ck.save(ck_path.string());
  say(log, "pixel-imle: wrote " + ck_path.string());
  return std::move(trainer.generator());
}

PipelineResult run_output_stage(const PipelineConfig& cfg, const LoadedData& ld,
                                TrainedModel& model, const LatentTable& table,
                                Generator* pixel_gen, const fs::path& run_dir,
                                std::ostream* log) {
  const DatasetHandle& data = ld.data;
  PipelineResult res{run_dir, pipeline_config_hash(cfg), {}, {}, std::nullopt};

  // sample grids
  int64_t grid_n = std::min(cfg.samples.count, data.count());
  std::vector<int64_t> grid_ids(static_cast<size_t>(grid_n));
  for (int64_t i = 0; i < grid_n; ++i) grid_ids[static_cast<size_t>(i)] = i;
  save_image_grid((run_dir / "reals.png").string(), data.batch(grid_ids).pixels,
                  cfg.samples.grid_cols);
  ImageBatch glann_grid =
      sample_images(model, cfg.samples.count, derive_seed(cfg.seed, "sample-grid"));
  save_image_grid((run_dir / "samples_glann.png").string(), glann_grid.pixels,
                  cfg.samples.grid_cols);
  GaussianLatentPrior prior = fit_gaussian_prior(table);
  ImageBatch gauss_grid = gaussian_fit_sample(model.gen, prior, cfg.samples.count,
                                              derive_seed(cfg.seed, "gaussian-grid"));
  save_image_grid((run_dir / "samples_gaussian.png").string(), gauss_grid.pixels,
                  cfg.samples.grid_cols);
  if (pixel_gen) {
    ImageBatch px =
        pixel_sample(*pixel_gen, cfg.samples.count, derive_seed(cfg.seed, "pixel-grid"));
    save_image_grid((run_dir / "samples_pixel_imle.png").string(), px.pixels,
                    cfg.samples.grid_cols);
  }

  // one report per sampler, all against the same real draw and embedder
  Embedder emb = build_embedder(cfg, ld, log);
  int64_t n = std::min(cfg.eval.n, data.count());
  if (n < cfg.eval.n)
    say(log, "eval: clamped n to the dataset size (" + std::to_string(n) + ")");
  std::vector<int64_t> ids(static_cast<size_t>(data.count()));
  for (int64_t i = 0; i < data.count(); ++i) ids[static_cast<size_t>(i)] = i;
  Rng rng(derive_seed(cfg.seed, "eval-real"));
  rng.shuffle(ids);
  ids.resize(static_cast<size_t>(n));
  Tensor real = data.batch(ids).pixels;

  EvalConfig ec;
  ec.bins = cfg.eval.bins;
  ec.angles = cfg.eval.angles;
  ec.seed = derive_seed(cfg.seed, "eval-bins");
  ec.config_hash = res.config_hash;

  auto report = [&](const Tensor& gen_pixels, const std::string& tag) {
    EvalReport r = evaluate_batches(real, gen_pixels, emb, ec);
    write_text(run_dir / ("report_" + tag + ".txt"), r.to_text());
    write_text(run_dir / ("curve_" + tag + ".csv"), r.curve_csv());
    save_prd_plot(r.curve, (run_dir / ("prd_" + tag + ".png")).string());
    std::ostringstream line;
    line << tag << ": fid " << r.fid << "  f8 " << r.f8 << "  f1/8 " << r.f1_8;
    say(log, line.str());
    return r;
  };
  res.glann =
      report(sample_images(model, n, derive_seed(cfg.seed, "eval-glann")).pixels, "glann");
  res.gaussian = report(
      gaussian_fit_sample(model.gen, prior, n, derive_seed(cfg.seed, "eval-gaussian")).pixels,
      "gaussian");
  if (pixel_gen)
    res.pixel = report(pixel_sample(*pixel_gen, n, derive_seed(cfg.seed, "eval-pixel")).pixels,
                       "pixel_imle");
  return res;
}

void bind_run_dir(const PipelineConfig& cfg, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  // A run directory is bound to one config; adopting it with another is a
  // state error, not a silent retrain under different settings.
  fs::path cfg_path = run_dir / "config.json";
  std::string dump = dump_pipeline_config(cfg);
  if (fs::exists(cfg_path)) {
    if (read_file(cfg_path) != dump)
      throw StateError("run directory " + run_dir.string() +
                       " was created with a different config");
  } else {
    write_text(cfg_path, dump);
  }
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& run_dir_arg,
                            std::ostream* log) {
  validate_pipeline_config(cfg);
  fs::path run_dir = run_dir_arg.empty() ? make_run_dir(cfg) : fs::path(run_dir_arg);
  bind_run_dir(cfg, run_dir);
  say(log, "run directory: " + run_dir.string());

  std::string stage = "dataset";
  fs::path last_ck;
  try {
    LoadedData ld = load_dataset(cfg.dataset, cfg.seed);
    say(log, "dataset: " + ld.data.source() + " (" + std::to_string(ld.data.count()) +
                 " images, " + std::to_string(ld.data.channels()) + "x" +
                 std::to_string(ld.data.height()) + "x" + std::to_string(ld.data.width()) +
                 ")");

    stage = "glo";
    GloStage glo = run_glo_stage(cfg, ld, run_dir, log);
    last_ck = run_dir / "glo.ck";

    stage = "mapper";
    Mapper mapper = run_mapper_stage(cfg, ld, glo.table, run_dir, log);
    last_ck = run_dir / "mapper.ck";

    std::optional<Generator> pixel;
    if (cfg.pixel_imle.enabled) {
      stage = "pixel-imle";
      pixel = run_pixel_stage(cfg, ld, run_dir, log);
      last_ck = run_dir / "pixel_imle.ck";
    }

    stage = "outputs";
    TrainedModel model = make_trained_model(std::move(glo.gen), std::move(mapper),
                                            ld.data.source(), pipeline_config_hash(cfg));
    return run_output_stage(cfg, ld, model, glo.table, pixel ? &*pixel : nullptr, run_dir,
                            log);
  } catch (const Error& e) {
    rethrow_with_stage(e, stage, last_ck);
  }
}

LoadedRun load_run(const fs::path& run_dir) {
  fs::path glo_path = run_dir / "glo.ck";
  if (!fs::exists(glo_path))
    throw StateError("no glo.ck in " + run_dir.string() + "; train a model there first");
  Checkpoint glo_ck = Checkpoint::load(glo_path.string());

  json snap;
  try {
    snap = json::parse(glo_ck.config_json);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint config snapshot is not valid JSON: ") +
                      e.what());
  }
  if (!snap.contains("config") || !snap.contains("resolved"))
    throw FormatError("checkpoint snapshot lacks the config/resolved sections");

  PipelineConfig cfg = parse_pipeline_config(snap.at("config").dump());
  std::vector<int64_t> out_shape;
  int64_t count = 0;
  try {
    out_shape = snap.at("resolved").at("out_shape").get<std::vector<int64_t>>();
    count = snap.at("resolved").at("count").get<int64_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint resolved metadata is malformed: ") + e.what());
  }

  GeneratorSpec gs{cfg.model.arch, cfg.model.latent_dim, cfg.model.width, out_shape};
  Generator gen = make_generator(gs, cfg.seed);
  LatentTable table(count, cfg.model.latent_dim, cfg.seed);
  glo_restore(glo_ck, gen, table);

  LoadedRun run{std::move(cfg), std::move(out_shape), count,
                std::move(gen), std::move(table), std::nullopt, std::nullopt};

  fs::path mapper_path = run_dir / "mapper.ck";
  if (fs::exists(mapper_path)) {
    Mapper mapper = make_mapper(MapperSpec{run.cfg.model.noise_dim, run.cfg.model.latent_dim,
                                           run.cfg.model.mapper_hidden},
                                run.cfg.seed);
    mapper_restore(Checkpoint::load(mapper_path.string()), mapper);
    run.mapper = std::move(mapper);
  }
  fs::path pixel_path = run_dir / "pixel_imle.ck";
  if (fs::exists(pixel_path)) {
    Generator pixel = make_generator(gs, derive_seed(run.cfg.seed, "pixel-baseline"));
    generator_restore(Checkpoint::load(pixel_path.string()), pixel);
    run.pixel_gen = std::move(pixel);
  }
  return run;
}

}  // namespace glann
