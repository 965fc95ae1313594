#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "glann/config.hpp"
#include "glann/errors.hpp"
#include "glann/image_io.hpp"
#include "glann/pipeline.hpp"
#include "glann/rng.hpp"
#include "glann/synthesis.hpp"

using namespace glann;
namespace fs = std::filesystem;

namespace {

// Config overrides: each flag remembers how to write itself into a config,
// and is applied only when actually given (flag > file > default).
struct Overrides {
  std::vector<std::function<void(PipelineConfig&)>> appliers;

  template <class T, class Set>
  void option(CLI::App& app, const char* name, const char* help, Set set) {
    auto slot = std::make_shared<T>();
    CLI::Option* o = app.add_option(name, *slot, help);
    appliers.push_back([o, slot, set](PipelineConfig& c) {
      if (o->count()) set(c, *slot);
    });
  }

  void flag(CLI::App& app, const char* name, const char* help,
            std::function<void(PipelineConfig&, bool)> set) {
    auto slot = std::make_shared<bool>();
    CLI::Option* o = app.add_flag(name, *slot, help);
    appliers.push_back([o, slot, set](PipelineConfig& c) {
      if (o->count()) set(c, *slot);
    });
  }

  void apply(PipelineConfig& cfg) const {
    for (const auto& f : appliers) f(cfg);
  }
};

// First row of an (n, d) tensor as a (1, d) tensor.
Tensor first_row(const Tensor& t) {
  if (t.ndim() != 2 || t.dim(0) < 1) throw ArgumentError("expected a nonempty (n, d) tensor");
  Tensor row({1, t.dim(1)});
  for (int64_t j = 0; j < t.dim(1); ++j) row[j] = t[j];
  return row;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "glann: trains a latent-embedding generator plus a noise-to-latent mapper,\n"
      "then samples, inverts, interpolates and evaluates it."};
  app.require_subcommand(1);
  app.footer(
      "Config values resolve as flag > config file > default; with --run-dir and no\n"
      "--config, the run directory's config.json is the file layer. Set\n"
      "GLANN_DETERMINISTIC=1 to name fresh run directories by config hash alone\n"
      "(results are bit-reproducible either way; only the dir name changes).\n"
      "Exit codes: 1 usage/config, 2 data/state, 3 numeric failure.");

  std::string config_path, run_dir;
  app.add_option("--config", config_path, "JSON config file")
      ->check(CLI::ExistingFile);
  app.add_option("--run-dir", run_dir, "run directory to create or resume");

  Overrides ov;
  ov.option<uint64_t>(app, "--seed", "global seed", [](auto& c, auto v) { c.seed = v; });
  ov.option<std::string>(app, "--out-dir", "parent for fresh run directories",
                         [](auto& c, auto v) { c.out_dir = v; });
  ov.option<std::string>(app, "--dataset", "dataset kind: digits | idx | dir",
                         [](auto& c, auto v) { c.dataset.kind = v; });
  ov.option<std::string>(app, "--data-path", "idx image file or image directory",
                         [](auto& c, auto v) { c.dataset.path = v; });
  ov.option<std::string>(app, "--labels-path", "idx label file",
                         [](auto& c, auto v) { c.dataset.labels_path = v; });
  ov.option<int64_t>(app, "--count", "image count (digits size / idx limit)",
                     [](auto& c, auto v) { c.dataset.count = v; });
  ov.option<int64_t>(app, "--image-size", "resize target for directory datasets",
                     [](auto& c, auto v) { c.dataset.image_size = v; });
  ov.option<std::string>(app, "--arch", "generator: conv28 | conv32 | mlp",
                         [](auto& c, auto v) { c.model.arch = v; });
  ov.option<int64_t>(app, "--latent-dim", "per-image code width d",
                     [](auto& c, auto v) { c.model.latent_dim = v; });
  ov.option<int64_t>(app, "--width", "generator base width",
                     [](auto& c, auto v) { c.model.width = v; });
  ov.option<int64_t>(app, "--noise-dim", "mapper input width d_e",
                     [](auto& c, auto v) { c.model.noise_dim = v; });
  ov.option<int64_t>(app, "--mapper-hidden", "mapper hidden width",
                     [](auto& c, auto v) { c.model.mapper_hidden = v; });
  ov.option<std::string>(
      app, "--loss", "reconstruction loss: l2 | lap_pyramid | perceptual | multiscale-perceptual",
      [](auto& c, auto v) { c.glo.loss.kind = loss_kind_from_string(v); });
  ov.option<int64_t>(app, "--glo-epochs", "embedding training epochs",
                     [](auto& c, auto v) { c.glo.epochs = v; });
  ov.option<int64_t>(app, "--glo-batch", "embedding minibatch size",
                     [](auto& c, auto v) { c.glo.batch = v; });
  ov.option<float>(app, "--latent-lr", "latent learning rate",
                   [](auto& c, auto v) { c.glo.latent_lr = v; });
  ov.option<float>(app, "--gen-lr-ratio", "generator lr as a fraction of latent lr",
                   [](auto& c, auto v) { c.glo.gen_lr_ratio = v; });
  ov.option<float>(app, "--decay", "lr decay factor",
                   [](auto& c, auto v) { c.glo.decay = v; });
  ov.option<int64_t>(app, "--decay-interval", "epochs per decay step",
                     [](auto& c, auto v) { c.glo.decay_interval = v; });
  ov.option<std::string>(app, "--optimizer", "generator optimizer: adam | sgd",
                         [](auto& c, auto v) { c.glo.optimizer = v; });
  ov.option<int64_t>(app, "--imle-epochs", "mapper training epochs",
                     [](auto& c, auto v) { c.imle.epochs = v; });
  ov.option<int64_t>(app, "--imle-batch", "mapper minibatch size",
                     [](auto& c, auto v) { c.imle.batch = v; });
  ov.option<int64_t>(app, "--pool-size", "noise pool size (0 = auto)",
                     [](auto& c, auto v) { c.imle.pool_size = v; });
  ov.option<float>(app, "--imle-lr", "mapper learning rate",
                   [](auto& c, auto v) { c.imle.lr = v; });
  ov.option<std::string>(app, "--refresh", "pool refresh: per-minibatch | per-epoch",
                         [](auto& c, auto v) { c.imle.refresh = v; });
  ov.flag(app, "--pixel-imle,!--no-pixel-imle", "also train the direct pixel baseline",
          [](auto& c, bool v) { c.pixel_imle.enabled = v; });
  ov.option<int64_t>(app, "--pixel-epochs", "pixel baseline epochs",
                     [](auto& c, auto v) { c.pixel_imle.epochs = v; });
  ov.option<std::string>(app, "--embedder", "evaluation embedder: randproj | classifier",
                         [](auto& c, auto v) { c.eval.embedder = v; });
  ov.option<uint64_t>(app, "--embedder-seed", "embedder seed",
                      [](auto& c, auto v) { c.eval.embedder_seed = v; });
  ov.option<int64_t>(app, "--eval-n", "evaluation sample count",
                     [](auto& c, auto v) { c.eval.n = v; });
  ov.option<int64_t>(app, "--bins", "PRD histogram bins",
                     [](auto& c, auto v) { c.eval.bins = v; });
  ov.option<int64_t>(app, "--angles", "PRD curve resolution",
                     [](auto& c, auto v) { c.eval.angles = v; });
  ov.option<int64_t>(app, "--sample-count", "images per sample grid",
                     [](auto& c, auto v) { c.samples.count = v; });
  ov.option<int64_t>(app, "--grid-cols", "columns per sample grid",
                     [](auto& c, auto v) { c.samples.grid_cols = v; });

  CLI::App* cmd_run = app.add_subcommand("run-all", "train everything and evaluate");
  CLI::App* cmd_glo = app.add_subcommand("train-glo", "train the latent embedding only");
  CLI::App* cmd_map =
      app.add_subcommand("train-mapper", "train the noise mapper on an embedded run");

  CLI::App* cmd_sample = app.add_subcommand("sample", "decode fresh noise through the mapper");
  int64_t sample_n = -1, sample_cols = -1, steps = 8;
  uint64_t draw_seed = 0;
  bool draw_seed_given = false;
  std::string out_path, noise_out, noise_a, noise_b;
  uint64_t seed_a = 1, seed_b = 2;
  cmd_sample->add_option("--n", sample_n, "number of samples (default: config)");
  cmd_sample->add_option("--cols", sample_cols, "grid columns (default: config)");
  cmd_sample->add_option("--draw-seed", draw_seed, "noise seed (default: derived from config seed)")
      ->each([&](const std::string&) { draw_seed_given = true; });
  cmd_sample->add_option("--out", out_path, "output grid path (default: in the run dir)");
  cmd_sample->add_option("--save-noise", noise_out, "also save the drawn noise rows");

  CLI::App* cmd_gauss = app.add_subcommand(
      "sample-gaussian", "decode draws from a Gaussian fitted to the latent table");
  cmd_gauss->add_option("--n", sample_n, "number of samples (default: config)");
  cmd_gauss->add_option("--cols", sample_cols, "grid columns (default: config)");
  cmd_gauss->add_option("--draw-seed", draw_seed, "draw seed (default: derived from config seed)")
      ->each([&](const std::string&) { draw_seed_given = true; });
  cmd_gauss->add_option("--out", out_path, "output grid path (default: in the run dir)");

  CLI::App* cmd_invert = app.add_subcommand("invert", "recover noise that reconstructs an image");
  std::string image_path, recon_path;
  int64_t invert_steps = 200;
  float invert_lr = 0.05f;
  cmd_invert->add_option("--image", image_path, "image file to invert")->required();
  cmd_invert->add_option("--steps", invert_steps, "optimization steps");
  cmd_invert->add_option("--lr", invert_lr, "optimization step size");
  cmd_invert->add_option("--draw-seed", draw_seed, "init seed (default: derived from config seed)")
      ->each([&](const std::string&) { draw_seed_given = true; });
  cmd_invert->add_option("--save-noise", noise_out, "save the recovered noise row");
  cmd_invert->add_option("--recon", recon_path, "save the reconstruction image");

  CLI::App* cmd_interp =
      app.add_subcommand("interpolate", "decode a straight line between two noise vectors");
  cmd_interp->add_option("--noise-a", noise_a, "noise file for the start point (row 0)");
  cmd_interp->add_option("--noise-b", noise_b, "noise file for the end point (row 0)");
  cmd_interp->add_option("--seed-a", seed_a, "draw the start point from this seed instead");
  cmd_interp->add_option("--seed-b", seed_b, "draw the end point from this seed instead");
  cmd_interp->add_option("--steps", steps, "number of frames");
  cmd_interp->add_option("--out", out_path, "output grid path (default: in the run dir)");

  CLI::App* cmd_eval = app.add_subcommand(
      "evaluate", "regenerate sample grids and evaluation reports from the checkpoints");

  for (CLI::App* sub : {cmd_run, cmd_glo, cmd_map, cmd_sample, cmd_gauss, cmd_invert,
                        cmd_interp, cmd_eval})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // 1 = usage error; 0 for --help/--version
  }

  try {
    // flag > file > default; a resumed run directory supplies the file layer
    auto resolved = [&]() {
      PipelineConfig cfg;
      if (!config_path.empty())
        cfg = load_pipeline_config(config_path);
      else if (!run_dir.empty() && fs::exists(fs::path(run_dir) / "config.json"))
        cfg = load_pipeline_config((fs::path(run_dir) / "config.json").string());
      ov.apply(cfg);
      validate_pipeline_config(cfg);
      return cfg;
    };
    auto need_run_dir = [&]() {
      if (run_dir.empty()) throw ArgumentError("this command needs --run-dir");
      return fs::path(run_dir);
    };
    // Checkpoint-bound commands take their config from the snapshot inside
    // glo.ck (it always matches the stored weights); flags still override.
    auto snapshot_config = [&](const LoadedRun& run) {
      PipelineConfig cfg = run.cfg;
      ov.apply(cfg);
      validate_pipeline_config(cfg);
      return cfg;
    };
    auto need_mapper = [](LoadedRun& run) {
      if (!run.mapper)
        throw StateError("this run has no mapper.ck yet; run train-mapper first");
      return make_trained_model(std::move(run.gen), std::move(*run.mapper), "",
                                pipeline_config_hash(run.cfg));
    };

    if (cmd_run->parsed()) {
      PipelineConfig cfg = resolved();
      PipelineResult res = run_pipeline(cfg, run_dir, &std::cout);
      std::cout << "done: " << res.run_dir.string() << "\n";
    } else if (cmd_glo->parsed()) {
      PipelineConfig cfg = resolved();
      fs::path dir = run_dir.empty() ? make_run_dir(cfg) : fs::path(run_dir);
      bind_run_dir(cfg, dir);
      LoadedData ld = load_dataset(cfg.dataset, cfg.seed);
      run_glo_stage(cfg, ld, dir, &std::cout);
      std::cout << "done: " << (dir / "glo.ck").string() << "\n";
    } else if (cmd_map->parsed()) {
      PipelineConfig cfg = resolved();
      fs::path dir = need_run_dir();
      bind_run_dir(cfg, dir);
      if (!fs::exists(dir / "glo.ck"))
        throw StateError("no glo.ck in " + dir.string() + "; run train-glo first");
      LoadedData ld = load_dataset(cfg.dataset, cfg.seed);
      GloStage glo = run_glo_stage(cfg, ld, dir, &std::cout);
      run_mapper_stage(cfg, ld, glo.table, dir, &std::cout);
      std::cout << "done: " << (dir / "mapper.ck").string() << "\n";
    } else if (cmd_sample->parsed()) {
      fs::path dir = need_run_dir();
      LoadedRun run = load_run(dir);
      int64_t n = sample_n > 0 ? sample_n : run.cfg.samples.count;
      int64_t cols = sample_cols > 0 ? sample_cols : run.cfg.samples.grid_cols;
      uint64_t seed = draw_seed_given ? draw_seed : derive_seed(run.cfg.seed, "cli-sample");
      TrainedModel model = need_mapper(run);
      NoisePool pool = sample_noise_pool(n, model.noise_dim(), seed);
      ImageBatch batch = decode_noise(model, pool.noise);
      std::string out = out_path.empty()
                            ? (dir / ("samples_" + std::to_string(seed) + ".png")).string()
                            : out_path;
      save_image_grid(out, batch.pixels, cols);
      if (!noise_out.empty()) save_noise(noise_out, pool.noise, seed);
      std::cout << "wrote " << out << "\n";
    } else if (cmd_gauss->parsed()) {
      fs::path dir = need_run_dir();
      LoadedRun run = load_run(dir);
      int64_t n = sample_n > 0 ? sample_n : run.cfg.samples.count;
      int64_t cols = sample_cols > 0 ? sample_cols : run.cfg.samples.grid_cols;
      uint64_t seed = draw_seed_given ? draw_seed : derive_seed(run.cfg.seed, "cli-gaussian");
      GaussianLatentPrior prior = fit_gaussian_prior(run.table);
      ImageBatch batch = gaussian_fit_sample(run.gen, prior, n, seed);
      std::string out =
          out_path.empty()
              ? (dir / ("samples_gaussian_" + std::to_string(seed) + ".png")).string()
              : out_path;
      save_image_grid(out, batch.pixels, cols);
      std::cout << "wrote " << out << "\n";
    } else if (cmd_invert->parsed()) {
      fs::path dir = need_run_dir();
      LoadedRun run = load_run(dir);
      TrainedModel model = need_mapper(run);
      std::optional<Tensor> img = load_image(image_path);
      if (!img) throw FormatError("cannot decode image '" + image_path + "'");
      Tensor t = *img;
      if (t.dim(0) != run.out_shape[0])
        throw ArgumentError("image has " + std::to_string(t.dim(0)) +
                            " channels but the model decodes " +
                            std::to_string(run.out_shape[0]));
      if (t.dim(1) != run.out_shape[1] || t.dim(2) != run.out_shape[2])
        t = resize_bilinear(t, run.out_shape[1], run.out_shape[2]);
      t.reshape({1, t.dim(0), t.dim(1), t.dim(2)});
      ImageBatch target;
      target.pixels = std::move(t);
      target.ids = {0};
      uint64_t seed = draw_seed_given ? draw_seed : derive_seed(run.cfg.seed, "cli-invert");
      InversionResult inv =
          invert_image(model, target, run.cfg.glo.loss, invert_steps, seed, invert_lr);
      std::cout << "reconstruction loss " << inv.loss[0]
                << (inv.diverged ? " (diverged; kept the best iterate)" : "") << "\n";
      if (!noise_out.empty()) save_noise(noise_out, inv.e, seed);
      if (!recon_path.empty()) save_image(recon_path, decode_noise(model, inv.e).pixels);
    } else if (cmd_interp->parsed()) {
      fs::path dir = need_run_dir();
      LoadedRun run = load_run(dir);
      TrainedModel model = need_mapper(run);
      auto endpoint = [&](const std::string& file, uint64_t seed) {
        if (!file.empty()) return first_row(load_noise(file).noise);
        return sample_noise_pool(1, model.noise_dim(), seed).noise;
      };
      Tensor e1 = endpoint(noise_a, seed_a);
      Tensor e2 = endpoint(noise_b, seed_b);
      ImageBatch frames = interpolate(model, e1, e2, steps);
      std::string out = out_path.empty() ? (dir / "interpolation.png").string() : out_path;
      save_image_grid(out, frames.pixels, steps);
      std::cout << "wrote " << out << "\n";
    } else if (cmd_eval->parsed()) {
      fs::path dir = need_run_dir();
      LoadedRun run = load_run(dir);
      PipelineConfig cfg = snapshot_config(run);
      LoadedData ld = load_dataset(cfg.dataset, cfg.seed);
      Generator* pixel = run.pixel_gen ? &*run.pixel_gen : nullptr;
      TrainedModel model = need_mapper(run);
      run_output_stage(cfg, ld, model, run.table, pixel, dir, &std::cout);
      std::cout << "done: " << dir.string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
