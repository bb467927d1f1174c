#include "ggnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ggnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian f64");

namespace {
constexpr char kMagic[] = "GGNETCKPT1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;
}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                     const nlohmann::json& config, const nlohmann::json& extra) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["config"] = config;
  manifest["extra"] = extra;
  manifest["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    manifest["tensors"].push_back({{"name", name},
                                   {"shape", tensor->shape()},
                                   {"offset", offset},
                                   {"count", tensor->size()}});
    offset += tensor->size();
  }
  const std::string manifest_str = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kMagic, static_cast<std::streamsize>(kMagicLen));
  const std::uint64_t len = manifest_str.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
  for (const auto& [name, tensor] : tensors) {
    const auto& data = tensor->data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!out) throw DataError("short write on checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path);
  char magic[kMagicLen];
  in.read(magic, static_cast<std::streamsize>(kMagicLen));
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string manifest_str(len, '\0');
  in.read(manifest_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated checkpoint manifest in " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_str);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (!manifest.contains("version")) throw DataError("checkpoint lacks a version field");

  LoadedCheckpoint loaded;
  loaded.version = manifest["version"].get<int>();
  if (loaded.version != 1) {
    throw DataError("unsupported checkpoint version " + std::to_string(loaded.version));
  }
  loaded.config = manifest.value("config", nlohmann::json::object());
  loaded.extra = manifest.value("extra", nlohmann::json::object());

  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const std::size_t count = entry.at("count").get<std::size_t>();
    if (shape_size(shape) != count) {
      throw DataError("checkpoint tensor " + name + " has inconsistent shape");
    }
    std::vector<double> data(count);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw DataError("truncated payload for tensor " + name);
    loaded.tensors.emplace(name, Tensor::from_data(shape, std::move(data), true));
  }
  return loaded;
}

// --------------------------------------------------- config (de)serialization

void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + context);
    }
  }
}

namespace {

std::array<double, 3> quantiles_from(const nlohmann::json& j,
                                     const std::array<double, 3>& fallback) {
  if (!j.contains("quantiles")) return fallback;
  const auto v = j["quantiles"].get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError("quantiles must hold exactly 3 values");
  return {v[0], v[1], v[2]};
}

}  // namespace

nlohmann::json to_json(const GgNetConfig& config) {
  return {{"hidden", config.hidden},
          {"loc_embedding", config.loc_embedding},
          {"chan_embedding", config.chan_embedding},
          {"pattern", GgNetConfig::pattern_string(config.block_pattern)},
          {"kernel_k", config.kernel_k},
          {"dilations", config.dilation_schedule},
          {"quantiles", config.quantiles},
          {"residual", config.residual}};
}

GgNetConfig ggnet_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"hidden", "loc_embedding", "chan_embedding", "pattern",
                       "kernel_k", "dilations", "quantiles", "residual"},
                      "model config");
  GgNetConfig config;
  config.hidden = j.value("hidden", config.hidden);
  config.loc_embedding = j.value("loc_embedding", config.loc_embedding);
  config.chan_embedding = j.value("chan_embedding", config.chan_embedding);
  if (j.contains("pattern")) {
    config.block_pattern = GgNetConfig::parse_pattern(j["pattern"].get<std::string>());
  }
  config.kernel_k = j.value("kernel_k", config.kernel_k);
  if (j.contains("dilations")) {
    config.dilation_schedule = j["dilations"].get<std::vector<std::size_t>>();
  }
  config.quantiles = quantiles_from(j, config.quantiles);
  config.residual = j.value("residual", config.residual);
  config.validate();
  return config;
}

nlohmann::json to_json(const TrainConfig& config) {
  return {{"lr", config.lr},
          {"lr_min", config.lr_min},
          {"max_epochs", config.max_epochs},
          {"patience", config.patience},
          {"batch_size", config.batch_size},
          {"t_w", config.t_w},
          {"p_whiten_channels", config.p_whiten_channels},
          {"p_whiten_points", config.p_whiten_points},
          {"w_whiten", config.w_whiten},
          {"quantiles", config.quantiles},
          {"clip_norm", config.clip_norm},
          {"seed", config.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"lr", "lr_min", "max_epochs", "patience", "batch_size", "t_w",
                       "p_whiten_channels", "p_whiten_points", "w_whiten", "quantiles",
                       "clip_norm", "seed"},
                      "train config");
  TrainConfig config;
  config.lr = j.value("lr", config.lr);
  config.lr_min = j.value("lr_min", config.lr_min);
  config.max_epochs = j.value("max_epochs", config.max_epochs);
  config.patience = j.value("patience", config.patience);
  config.batch_size = j.value("batch_size", config.batch_size);
  config.t_w = j.value("t_w", config.t_w);
  config.p_whiten_channels = j.value("p_whiten_channels", config.p_whiten_channels);
  config.p_whiten_points = j.value("p_whiten_points", config.p_whiten_points);
  config.w_whiten = j.value("w_whiten", config.w_whiten);
  config.quantiles = quantiles_from(j, config.quantiles);
  config.clip_norm = j.value("clip_norm", config.clip_norm);
  config.seed = j.value("seed", config.seed);
  config.validate();
  return config;
}

nlohmann::json to_json(const RnnConfig& config) {
  const char* variant = "plain";
  switch (config.variant) {
    case RnnVariant::Plain: variant = "plain"; break;
    case RnnVariant::Bidirectional: variant = "bidirectional"; break;
    case RnnVariant::Embedded: variant = "embedded"; break;
    case RnnVariant::Graph: variant = "graph"; break;
  }
  return {{"variant", variant},
          {"hidden", config.hidden},
          {"embedding", config.embedding},
          {"quantiles", config.quantiles}};
}

RnnConfig rnn_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"variant", "hidden", "embedding", "quantiles"},
                      "rnn config");
  RnnConfig config;
  if (j.contains("variant")) {
    const std::string v = j["variant"].get<std::string>();
    if (v == "plain") {
      config.variant = RnnVariant::Plain;
    } else if (v == "bidirectional") {
      config.variant = RnnVariant::Bidirectional;
    } else if (v == "embedded") {
      config.variant = RnnVariant::Embedded;
    } else if (v == "graph") {
      config.variant = RnnVariant::Graph;
    } else {
      throw ConfigError("unknown rnn variant '" + v + "'");
    }
  }
  config.hidden = j.value("hidden", config.hidden);
  config.embedding = j.value("embedding", config.embedding);
  config.quantiles = quantiles_from(j, config.quantiles);
  return config;
}

// ----------------------------------------------------- model <-> checkpoint

void save_model_checkpoint(const std::string& path, ImputationModel& model,
                           const ModelCheckpoint& info) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  if (auto* ggnet = dynamic_cast<GgNetModel*>(&model)) {
    for (auto& [name, tensor] : ggnet->params().named_leaves()) {
      tensors.emplace_back(name, tensor);
    }
  } else {
    const auto leaves = model.leaves();
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "p%04zu", i);
      tensors.emplace_back(buf, leaves[i]);
    }
  }

  nlohmann::json extra;
  extra["model_kind"] = info.model_kind;
  extra["n_locations"] = info.n_locations;
  extra["n_channels"] = info.n_channels;
  extra["standardization"] = {{"mean", info.standardization.mean},
                              {"std", info.standardization.std}};
  extra["location_ids"] = info.location_ids;
  extra["channel_names"] = info.channel_names;
  save_checkpoint(path, tensors, info.model_config, extra);
}

RestoredModel load_model_checkpoint(const std::string& path) {
  LoadedCheckpoint loaded = load_checkpoint(path);
  RestoredModel restored;
  restored.info.model_kind = loaded.extra.at("model_kind").get<std::string>();
  restored.info.model_config = loaded.config;
  restored.info.n_locations = loaded.extra.at("n_locations").get<std::size_t>();
  restored.info.n_channels = loaded.extra.at("n_channels").get<std::size_t>();
  restored.info.standardization.mean =
      loaded.extra.at("standardization").at("mean").get<std::vector<double>>();
  restored.info.standardization.std =
      loaded.extra.at("standardization").at("std").get<std::vector<double>>();
  restored.info.location_ids =
      loaded.extra.value("location_ids", std::vector<std::string>{});
  restored.info.channel_names =
      loaded.extra.value("channel_names", std::vector<std::string>{});

  const std::string& kind = restored.info.model_kind;
  if (kind == "ggnet") {
    GgNetConfig config = ggnet_config_from_json(loaded.config);
    auto model = std::make_unique<GgNetModel>(config, restored.info.n_locations,
                                              restored.info.n_channels, 0);
    for (auto& [name, tensor] : model->params().named_leaves()) {
      const auto it = loaded.tensors.find(name);
      if (it == loaded.tensors.end()) {
        throw DataError("checkpoint is missing tensor " + name);
      }
      if (it->second.shape() != tensor->shape()) {
        throw DataError("checkpoint tensor " + name + " has unexpected shape");
      }
      tensor->set_data(it->second.data());
    }
    restored.model = std::move(model);
  } else if (kind == "rnn" || kind == "rnn_bid" || kind == "rnn_emb" ||
             kind == "rnn_g") {
    RnnConfig config = rnn_config_from_json(loaded.config);
    auto model = std::make_unique<RnnModel>(config, restored.info.n_locations,
                                            restored.info.n_channels, 0);
    const auto leaves = model->leaves();
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "p%04zu", i);
      const auto it = loaded.tensors.find(buf);
      if (it == loaded.tensors.end()) {
        throw DataError("checkpoint is missing tensor " + std::string(buf));
      }
      leaves[i]->set_data(it->second.data());
    }
    restored.model = std::move(model);
  } else {
    throw DataError("unknown model kind in checkpoint: " + kind);
  }
  return restored;
}

}  // namespace ggnet
