#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "glann/config.hpp"
#include "glann/errors.hpp"
#include "test_util.hpp"

using namespace glann;
namespace fs = std::filesystem;

namespace {

bool mentions(const std::exception& e, const std::string& needle) {
  return std::string(e.what()).find(needle) != std::string::npos;
}

PipelineConfig all_fields_changed() {
  PipelineConfig c;
  c.seed = 99;
  c.out_dir = "elsewhere";
  c.dataset.kind = "idx";
  c.dataset.path = "imgs.idx";
  c.dataset.labels_path = "labels.idx";
  c.dataset.count = 7;
  c.dataset.image_size = 32;
  c.model.arch = "mlp";
  c.model.latent_dim = 5;
  c.model.width = 17;
  c.model.noise_dim = 6;
  c.model.mapper_hidden = 9;
  c.glo.loss.kind = LossKind::Perceptual;
  c.glo.loss.levels = 2;
  c.glo.loss.subsample_levels = 1;
  c.glo.loss.w_pix = 0.25;
  c.glo.loss.layer_weights = {0.5, 1.5};
  c.glo.loss.extractor_kind = "file";
  c.glo.loss.extractor_path = "fx.ck";
  c.glo.loss.extractor_seed = 123;
  c.glo.loss.extractor_levels = 2;
  c.glo.epochs = 3;
  c.glo.batch = 4;
  c.glo.latent_lr = 0.5f;
  c.glo.gen_lr_ratio = 0.25f;
  c.glo.decay = 0.75f;
  c.glo.decay_interval = 11;
  c.glo.optimizer = "sgd";
  c.imle.epochs = 2;
  c.imle.batch = 3;
  c.imle.pool_size = 12;
  c.imle.lr = 0.125f;
  c.imle.refresh = "per-epoch";
  c.pixel_imle.enabled = true;
  c.pixel_imle.epochs = 6;
  c.pixel_imle.batch = 5;
  c.pixel_imle.pool_size = 20;
  c.pixel_imle.lr = 0.0625f;
  c.eval.embedder = "classifier";
  c.eval.embedder_seed = 42;
  c.eval.n = 50;
  c.eval.bins = 4;
  c.eval.angles = 11;
  c.samples.count = 9;
  c.samples.grid_cols = 3;
  return c;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("defaults match the documented training recipe") {
  PipelineConfig c;
  CHECK(c.seed == 0);
  CHECK(c.out_dir == "runs");
  CHECK(c.dataset.kind == "digits");
  CHECK(c.dataset.count == 4096);
  CHECK(c.model.arch == "conv28");
  CHECK(c.model.latent_dim == 64);
  CHECK(c.model.noise_dim == 64);
  CHECK(c.model.mapper_hidden == 128);
  CHECK(c.glo.epochs == 500);
  CHECK(c.glo.batch == 128);
  CHECK(c.glo.latent_lr == 0.01f);
  CHECK(c.glo.gen_lr_ratio == 0.1f);
  CHECK(c.glo.decay == 0.5f);
  CHECK(c.glo.decay_interval == 50);
  CHECK(c.glo.optimizer == "adam");
  CHECK(c.glo.loss.kind == LossKind::LapPyramid);
  CHECK(c.imle.epochs == 50);
  CHECK(c.imle.refresh == "per-minibatch");
  CHECK_FALSE(c.pixel_imle.enabled);
  CHECK(c.eval.embedder == "randproj");
  CHECK(c.eval.n == 10000);
  CHECK(c.eval.bins == 20);
  CHECK(c.eval.angles == 1001);
  CHECK(c.samples.count == 64);
  CHECK(c.samples.grid_cols == 8);
}

TEST_CASE("dump/parse round trip is lossless") {
  SUBCASE("defaults") {
    PipelineConfig c;
    std::string d1 = dump_pipeline_config(c);
    std::string d2 = dump_pipeline_config(parse_pipeline_config(d1));
    CHECK(d1 == d2);
    // an empty object means "all defaults"
    CHECK(dump_pipeline_config(parse_pipeline_config("{}")) == d1);
  }
  SUBCASE("every field changed") {
    PipelineConfig c = all_fields_changed();
    std::string d1 = dump_pipeline_config(c);
    PipelineConfig r = parse_pipeline_config(d1);
    CHECK(dump_pipeline_config(r) == d1);
    CHECK(r.seed == 99);
    CHECK(r.out_dir == "elsewhere");
    CHECK(r.dataset.kind == "idx");
    CHECK(r.dataset.path == "imgs.idx");
    CHECK(r.dataset.labels_path == "labels.idx");
    CHECK(r.dataset.count == 7);
    CHECK(r.dataset.image_size == 32);
    CHECK(r.model.arch == "mlp");
    CHECK(r.model.latent_dim == 5);
    CHECK(r.model.width == 17);
    CHECK(r.model.noise_dim == 6);
    CHECK(r.model.mapper_hidden == 9);
    CHECK(r.glo.loss.kind == LossKind::Perceptual);
    CHECK(r.glo.loss.levels == 2);
    CHECK(r.glo.loss.subsample_levels == 1);
    CHECK(r.glo.loss.w_pix == 0.25);
    CHECK(r.glo.loss.layer_weights == std::vector<double>{0.5, 1.5});
    CHECK(r.glo.loss.extractor_kind == "file");
    CHECK(r.glo.loss.extractor_path == "fx.ck");
    CHECK(r.glo.loss.extractor_seed == 123);
    CHECK(r.glo.loss.extractor_levels == 2);
    CHECK(r.glo.epochs == 3);
    CHECK(r.glo.batch == 4);
    CHECK(r.glo.latent_lr == 0.5f);
    CHECK(r.glo.gen_lr_ratio == 0.25f);
    CHECK(r.glo.decay == 0.75f);
    CHECK(r.glo.decay_interval == 11);
    CHECK(r.glo.optimizer == "sgd");
    CHECK(r.imle.epochs == 2);
    CHECK(r.imle.batch == 3);
    CHECK(r.imle.pool_size == 12);
    CHECK(r.imle.lr == 0.125f);
    CHECK(r.imle.refresh == "per-epoch");
    CHECK(r.pixel_imle.enabled);
    CHECK(r.pixel_imle.epochs == 6);
    CHECK(r.pixel_imle.batch == 5);
    CHECK(r.pixel_imle.pool_size == 20);
    CHECK(r.pixel_imle.lr == 0.0625f);
    CHECK(r.eval.embedder == "classifier");
    CHECK(r.eval.embedder_seed == 42);
    CHECK(r.eval.n == 50);
    CHECK(r.eval.bins == 4);
    CHECK(r.eval.angles == 11);
    CHECK(r.samples.count == 9);
    CHECK(r.samples.grid_cols == 3);
  }
  SUBCASE("all four loss kinds") {
    for (const char* kind :
         {"l2", "lap_pyramid", "perceptual", "multiscale-perceptual"}) {
      PipelineConfig c =
          parse_pipeline_config(std::string(R"({"loss": {"kind": ")") + kind + R"("}})");
      CHECK(to_string(c.glo.loss.kind) == kind);
      std::string d = dump_pipeline_config(c);
      CHECK(d.find(std::string("\"kind\": \"") + kind + "\"") != std::string::npos);
      CHECK(dump_pipeline_config(parse_pipeline_config(d)) == d);
    }
  }
}

TEST_CASE("missing keys keep their defaults") {
  PipelineConfig r = parse_pipeline_config(R"({"seed": 5})");
  CHECK(r.seed == 5);
  PipelineConfig base;
  base.seed = 5;
  CHECK(dump_pipeline_config(r) == dump_pipeline_config(base));

  r = parse_pipeline_config(R"({"glo": {"epochs": 7}})");
  CHECK(r.glo.epochs == 7);
  CHECK(r.glo.batch == 128);
  CHECK(r.glo.loss.kind == LossKind::LapPyramid);
}

TEST_CASE("unknown keys are rejected by name") {
  try {
    parse_pipeline_config(R"({"sed": 1})");
    FAIL("no error for a misspelled top-level key");
  } catch (const ConfigError& e) {
    CHECK(mentions(e, "sed"));
  }
  try {
    parse_pipeline_config(R"({"glo": {"epoch": 3}})");
    FAIL("no error for a misspelled section key");
  } catch (const ConfigError& e) {
    CHECK(mentions(e, "epoch"));
    CHECK(mentions(e, "glo"));
  }
  CHECK_THROWS_AS(parse_pipeline_config(R"({"eval": {"embeder": "randproj"}})"),
                  ConfigError);
}

TEST_CASE("malformed values are rejected") {
  // seeds must be nonnegative integers
  CHECK_THROWS_AS(parse_pipeline_config(R"({"seed": -3})"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"seed": 1.5})"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"eval": {"embedder_seed": -1}})"), ConfigError);
  // type mismatches
  CHECK_THROWS_AS(parse_pipeline_config(R"({"glo": {"epochs": "many"}})"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"imle": {"lr": []}})"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"dataset": {"kind": 3}})"), ConfigError);
  // structurally broken input
  CHECK_THROWS_AS(parse_pipeline_config("{nope"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config("[]"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"("just a string")"), ConfigError);
  // unknown enumeration values
  CHECK_THROWS_AS(parse_pipeline_config(R"({"loss": {"kind": "l3"}})"), ConfigError);
}

TEST_CASE("validation covers the enumerations and bounds") {
  CHECK_THROWS_AS(parse_pipeline_config(R"({"dataset": {"kind": "tape"}})"), ConfigError);
  // idx and dir sources need a path
  CHECK_THROWS_AS(parse_pipeline_config(R"({"dataset": {"kind": "idx"}})"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"dataset": {"kind": "dir"}})"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"model": {"arch": "resnet"}})"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"model": {"latent_dim": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"eval": {"embedder": "inception"}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"eval": {"n": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"eval": {"bins": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"eval": {"angles": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"samples": {"count": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(R"({"samples": {"grid_cols": 0}})"), ConfigError);

  // validate_pipeline_config catches programmatic edits the same way
  PipelineConfig c;
  c.model.arch = "resnet";
  CHECK_THROWS_AS(validate_pipeline_config(c), ConfigError);
  c = PipelineConfig{};
  CHECK_NOTHROW(validate_pipeline_config(c));
}

TEST_CASE("config hash is a stable 16-digit fingerprint") {
  PipelineConfig c;
  std::string h = pipeline_config_hash(c);
  REQUIRE(h.size() == 16);
  for (char ch : h) CHECK(std::isxdigit(static_cast<unsigned char>(ch)));
  CHECK(pipeline_config_hash(c) == h);
  CHECK(pipeline_config_hash(PipelineConfig{}) == h);

  PipelineConfig c2;
  c2.seed = 1;
  CHECK(pipeline_config_hash(c2) != h);
  PipelineConfig c3;
  c3.imle.lr = 0.002f;
  CHECK(pipeline_config_hash(c3) != h);
  // hash follows the text form, so parse(dump) preserves it
  CHECK(pipeline_config_hash(parse_pipeline_config(dump_pipeline_config(c3))) ==
        pipeline_config_hash(c3));
}

TEST_CASE("configs load from files") {
  fs::path dir = test::temp_dir("config");
  fs::path path = dir / "run.json";
  PipelineConfig c = all_fields_changed();
  {
    std::ofstream f(path);
    f << dump_pipeline_config(c);
  }
  PipelineConfig r = load_pipeline_config(path.string());
  CHECK(dump_pipeline_config(r) == dump_pipeline_config(c));
  CHECK_THROWS_AS(load_pipeline_config((dir / "absent.json").string()), FormatError);
  fs::remove_all(dir);
}

}  // TEST_SUITE
