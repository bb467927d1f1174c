#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ggnet/baselines.hpp"
#include "ggnet/model.hpp"
#include "ggnet/training.hpp"

namespace ggnet {

/// Single-file parameter archive: magic line, 8-byte little-endian manifest
/// length, JSON manifest (version, config, extras, tensor directory), then
/// raw little-endian f64 payloads.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                     const nlohmann::json& config, const nlohmann::json& extra);

struct LoadedCheckpoint {
  int version = 0;
  nlohmann::json config;
  nlohmann::json extra;
  std::map<std::string, Tensor> tensors;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// --------------------------------------------------- config (de)serialization

nlohmann::json to_json(const GgNetConfig& config);
GgNetConfig ggnet_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RnnConfig& config);
RnnConfig rnn_config_from_json(const nlohmann::json& j);

/// Throws ConfigError when `j` holds a key outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& context);

// ----------------------------------------------------- model <-> checkpoint

/// Everything needed to resume or apply a trained model.
struct ModelCheckpoint {
  std::string model_kind;  // ggnet | rnn | rnn_bid | rnn_emb | rnn_g
  nlohmann::json model_config;
  std::size_t n_locations = 0, n_channels = 0;
  Standardization standardization;
  std::vector<std::string> location_ids, channel_names;
};

void save_model_checkpoint(const std::string& path, ImputationModel& model,
                           const ModelCheckpoint& info);

struct RestoredModel {
  std::unique_ptr<ImputationModel> model;
  ModelCheckpoint info;
};

RestoredModel load_model_checkpoint(const std::string& path);

}  // namespace ggnet
