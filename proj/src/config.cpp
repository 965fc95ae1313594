#include "glann/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "glann/errors.hpp"

namespace glann {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("unknown config key '" + item.key() + "'" +
                        (section.empty() ? "" : " in section '" + section + "'"));
  }
}

uint64_t read_seed(const json& j, const char* key, uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_unsigned())
    throw ConfigError(std::string("config key '") + key + "' must be a nonnegative integer");
  return j.at(key).get<uint64_t>();
}

float read_float(const json& j, const char* key, float fallback) {
  return static_cast<float>(j.value(key, static_cast<double>(fallback)));
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");

  PipelineConfig cfg;
  try {
    check_keys(j, "", {"seed", "out_dir", "dataset", "model", "loss", "glo", "imle",
                       "pixel_imle", "eval", "samples"});
    cfg.seed = read_seed(j, "seed", cfg.seed);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);

    if (j.contains("dataset")) {
      const json& s = j.at("dataset");
      check_keys(s, "dataset", {"kind", "path", "labels_path", "count", "image_size"});
      auto& d = cfg.dataset;
      d.kind = s.value("kind", d.kind);
      d.path = s.value("path", d.path);
      d.labels_path = s.value("labels_path", d.labels_path);
      d.count = s.value("count", d.count);
      d.image_size = s.value("image_size", d.image_size);
    }
    if (j.contains("model")) {
      const json& s = j.at("model");
      check_keys(s, "model", {"arch", "latent_dim", "width", "noise_dim", "mapper_hidden"});
      auto& m = cfg.model;
      m.arch = s.value("arch", m.arch);
      m.latent_dim = s.value("latent_dim", m.latent_dim);
      m.width = s.value("width", m.width);
      m.noise_dim = s.value("noise_dim", m.noise_dim);
      m.mapper_hidden = s.value("mapper_hidden", m.mapper_hidden);
    }
    if (j.contains("loss")) {
      const json& s = j.at("loss");
      check_keys(s, "loss",
                 {"kind", "levels", "subsample_levels", "w_pix", "layer_weights",
                  "extractor_kind", "extractor_path", "extractor_seed", "extractor_levels"});
      auto& l = cfg.glo.loss;
      if (s.contains("kind")) l.kind = loss_kind_from_string(s.at("kind").get<std::string>());
      l.levels = s.value("levels", l.levels);
      l.subsample_levels = s.value("subsample_levels", l.subsample_levels);
      l.w_pix = s.value("w_pix", l.w_pix);
      if (s.contains("layer_weights"))
        l.layer_weights = s.at("layer_weights").get<std::vector<double>>();
      l.extractor_kind = s.value("extractor_kind", l.extractor_kind);
      l.extractor_path = s.value("extractor_path", l.extractor_path);
      l.extractor_seed = read_seed(s, "extractor_seed", l.extractor_seed);
      l.extractor_levels = s.value("extractor_levels", l.extractor_levels);
    }
    if (j.contains("glo")) {
      const json& s = j.at("glo");
      check_keys(s, "glo",
                 {"epochs", "batch", "latent_lr", "gen_lr_ratio", "decay", "decay_interval",
                  "optimizer"});
      auto& g = cfg.glo;
      g.epochs = s.value("epochs", g.epochs);
      g.batch = s.value("batch", g.batch);
      g.latent_lr = read_float(s, "latent_lr", g.latent_lr);
      g.gen_lr_ratio = read_float(s, "gen_lr_ratio", g.gen_lr_ratio);
      g.decay = read_float(s, "decay", g.decay);
      g.decay_interval = s.value("decay_interval", g.decay_interval);
      g.optimizer = s.value("optimizer", g.optimizer);
    }
    if (j.contains("imle")) {
      const json& s = j.at("imle");
      check_keys(s, "imle", {"epochs", "batch", "pool_size", "lr", "refresh"});
      auto& m = cfg.imle;
      m.epochs = s.value("epochs", m.epochs);
      m.batch = s.value("batch", m.batch);
      m.pool_size = s.value("pool_size", m.pool_size);
      m.lr = read_float(s, "lr", m.lr);
      m.refresh = s.value("refresh", m.refresh);
    }
    if (j.contains("pixel_imle")) {
      const json& s = j.at("pixel_imle");
      check_keys(s, "pixel_imle", {"enabled", "epochs", "batch", "pool_size", "lr"});
      auto& p = cfg.pixel_imle;
      p.enabled = s.value("enabled", p.enabled);
      p.epochs = s.value("epochs", p.epochs);
      p.batch = s.value("batch", p.batch);
      p.pool_size = s.value("pool_size", p.pool_size);
      p.lr = read_float(s, "lr", p.lr);
    }
    if (j.contains("eval")) {
      const json& s = j.at("eval");
      check_keys(s, "eval", {"embedder", "embedder_seed", "n", "bins", "angles"});
      auto& e = cfg.eval;
      e.embedder = s.value("embedder", e.embedder);
      e.embedder_seed = read_seed(s, "embedder_seed", e.embedder_seed);
      e.n = s.value("n", e.n);
      e.bins = s.value("bins", e.bins);
      e.angles = s.value("angles", e.angles);
    }
    if (j.contains("samples")) {
      const json& s = j.at("samples");
      check_keys(s, "samples", {"count", "grid_cols"});
      cfg.samples.count = s.value("count", cfg.samples.count);
      cfg.samples.grid_cols = s.value("grid_cols", cfg.samples.grid_cols);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  validate_pipeline_config(cfg);
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot read config file '" + path + "'");
  std::ostringstream text;
  text << f.rdbuf();
  return parse_pipeline_config(text.str());
}

std::string dump_pipeline_config(const PipelineConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["dataset"] = {{"kind", cfg.dataset.kind},
                  {"path", cfg.dataset.path},
                  {"labels_path", cfg.dataset.labels_path},
                  {"count", cfg.dataset.count},
                  {"image_size", cfg.dataset.image_size}};
  j["model"] = {{"arch", cfg.model.arch},
                {"latent_dim", cfg.model.latent_dim},
                {"width", cfg.model.width},
                {"noise_dim", cfg.model.noise_dim},
                {"mapper_hidden", cfg.model.mapper_hidden}};
  const LossSpec& l = cfg.glo.loss;
  j["loss"] = {{"kind", to_string(l.kind)},
               {"levels", l.levels},
               {"subsample_levels", l.subsample_levels},
               {"w_pix", l.w_pix},
               {"layer_weights", l.layer_weights},
               {"extractor_kind", l.extractor_kind},
               {"extractor_path", l.extractor_path},
               {"extractor_seed", l.extractor_seed},
               {"extractor_levels", l.extractor_levels}};
  j["glo"] = {{"epochs", cfg.glo.epochs},
              {"batch", cfg.glo.batch},
              {"latent_lr", static_cast<double>(cfg.glo.latent_lr)},
              {"gen_lr_ratio", static_cast<double>(cfg.glo.gen_lr_ratio)},
              {"decay", static_cast<double>(cfg.glo.decay)},
              {"decay_interval", cfg.glo.decay_interval},
              {"optimizer", cfg.glo.optimizer}};
  j["imle"] = {{"epochs", cfg.imle.epochs},
               {"batch", cfg.imle.batch},
               {"pool_size", cfg.imle.pool_size},
               {"lr", static_cast<double>(cfg.imle.lr)},
               {"refresh", cfg.imle.refresh}};
  j["pixel_imle"] = {{"enabled", cfg.pixel_imle.enabled},
                     {"epochs", cfg.pixel_imle.epochs},
                     {"batch", cfg.pixel_imle.batch},
                     {"pool_size", cfg.pixel_imle.pool_size},
                     {"lr", static_cast<double>(cfg.pixel_imle.lr)}};
  j["eval"] = {{"embedder", cfg.eval.embedder},
               {"embedder_seed", cfg.eval.embedder_seed},
               {"n", cfg.eval.n},
               {"bins", cfg.eval.bins},
               {"angles", cfg.eval.angles}};
  j["samples"] = {{"count", cfg.samples.count}, {"grid_cols", cfg.samples.grid_cols}};
  return j.dump(2) + "\n";
}

void validate_pipeline_config(const PipelineConfig& cfg) {
  const auto& d = cfg.dataset;
  if (d.kind != "digits" && d.kind != "idx" && d.kind != "dir")
    throw ConfigError("dataset kind must be digits, idx or dir, got '" + d.kind + "'");
  if (d.kind != "digits" && d.path.empty())
    throw ConfigError("dataset kind '" + d.kind + "' needs a path");
  if (d.kind == "digits" && d.count < 1)
    throw ConfigError("digit corpus needs count >= 1");
  if (d.count < 0) throw ConfigError("dataset count must be >= 0");
  if (d.kind == "dir" && d.image_size < 4)
    throw ConfigError("image_size must be >= 4");

  const auto& m = cfg.model;
  if (m.arch != "conv28" && m.arch != "conv32" && m.arch != "mlp")
    throw ConfigError("model arch must be conv28, conv32 or mlp, got '" + m.arch + "'");
  if (m.latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (m.width < 1) throw ConfigError("model width must be >= 1");
  if (m.noise_dim < 1) throw ConfigError("noise_dim must be >= 1");
  if (m.mapper_hidden < 0) throw ConfigError("mapper_hidden must be >= 0");

  const auto& e = cfg.eval;
  if (e.embedder != "randproj" && e.embedder != "classifier")
    throw ConfigError("eval embedder must be randproj or classifier, got '" + e.embedder +
                      "'");
  if (e.n < 2) throw ConfigError("eval n must be >= 2");
  if (e.bins < 2) throw ConfigError("eval bins must be >= 2");
  if (e.angles < 2) throw ConfigError("eval angles must be >= 2");

  if (cfg.samples.count < 1) throw ConfigError("samples count must be >= 1");
  if (cfg.samples.grid_cols < 1) throw ConfigError("samples grid_cols must be >= 1");
}

std::string pipeline_config_hash(const PipelineConfig& cfg) {
  std::string text = dump_pipeline_config(cfg);
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace glann
