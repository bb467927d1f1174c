#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ggnet/checkpoint.hpp"

using namespace ggnet;
namespace fs = std::filesystem;

namespace {

struct Instance {
  std::size_t n = 3, t_w = 8, d = 2;
  std::vector<double> x;
  std::vector<std::uint8_t> mask;

  explicit Instance(std::uint64_t seed) {
    Rng rng(seed);
    x.resize(n * t_w * d);
    mask.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = rng.normal();
      mask[i] = rng.bernoulli(0.8) ? 1 : 0;
    }
  }
};

GgNetConfig tiny_config() {
  GgNetConfig cfg;
  cfg.hidden = 6;
  cfg.loc_embedding = 3;
  cfg.chan_embedding = 2;
  cfg.block_pattern = GgNetConfig::parse_pattern("1(1T-G-g)");
  cfg.dilation_schedule = {1};
  return cfg;
}

ModelCheckpoint info_for(const std::string& kind, const nlohmann::json& config,
                         std::size_t n, std::size_t d) {
  ModelCheckpoint info;
  info.model_kind = kind;
  info.model_config = config;
  info.n_locations = n;
  info.n_channels = d;
  info.standardization.mean.assign(d, 0.5);
  info.standardization.std.assign(d, 2.0);
  for (std::size_t i = 0; i < n; ++i) info.location_ids.push_back("L" + std::to_string(i));
  for (std::size_t i = 0; i < d; ++i) info.channel_names.push_back("C" + std::to_string(i));
  return info;
}

}  // namespace

TEST_CASE("ggnet checkpoint round trip preserves predictions bitwise") {
  Instance inst(3);
  GgNetConfig cfg = tiny_config();
  GgNetModel model(cfg, inst.n, inst.d, 71);
  Tensor before = model.forward(inst.x, inst.mask, inst.n, inst.t_w, inst.d);

  const std::string path = "ckpt_ggnet_test.ggnt";
  save_model_checkpoint(path, model, info_for("ggnet", to_json(cfg), inst.n, inst.d));
  RestoredModel restored = load_model_checkpoint(path);
  fs::remove(path);

  CHECK(restored.info.model_kind == "ggnet");
  CHECK(restored.info.standardization.std[0] == 2.0);
  CHECK(restored.info.location_ids.size() == inst.n);
  Tensor after = restored.model->forward(inst.x, inst.mask, inst.n, inst.t_w, inst.d);
  REQUIRE(after.shape() == before.shape());
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(after.data()[i] == before.data()[i]);
}

TEST_CASE("rnn checkpoint round trip") {
  Instance inst(5);
  RnnConfig cfg;
  cfg.variant = RnnVariant::Graph;
  cfg.hidden = 4;
  cfg.embedding = 3;
  RnnModel model(cfg, inst.n, inst.d, 73);
  Tensor before = model.forward(inst.x, inst.mask, inst.n, inst.t_w, inst.d);

  const std::string path = "ckpt_rnn_test.ggnt";
  save_model_checkpoint(path, model, info_for("rnn_g", to_json(cfg), inst.n, inst.d));
  RestoredModel restored = load_model_checkpoint(path);
  fs::remove(path);

  Tensor after = restored.model->forward(inst.x, inst.mask, inst.n, inst.t_w, inst.d);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(after.data()[i] == before.data()[i]);
}

TEST_CASE("corrupt files are rejected") {
  {
    std::ofstream out("ckpt_bad.ggnt", std::ios::binary);
    out << "NOTACHECKPOINT";
  }
  CHECK_THROWS_AS(load_checkpoint("ckpt_bad.ggnt"), DataError);
  fs::remove("ckpt_bad.ggnt");

  // truncated payload
  Instance inst(7);
  GgNetModel model(tiny_config(), inst.n, inst.d, 77);
  save_model_checkpoint("ckpt_trunc.ggnt", model,
                        info_for("ggnet", to_json(tiny_config()), inst.n, inst.d));
  const auto size = fs::file_size("ckpt_trunc.ggnt");
  fs::resize_file("ckpt_trunc.ggnt", size - 64);
  CHECK_THROWS_AS(load_checkpoint("ckpt_trunc.ggnt"), DataError);
  fs::remove("ckpt_trunc.ggnt");
}

TEST_CASE("config json round trips and rejects unknown keys") {
  GgNetConfig cfg = tiny_config();
  GgNetConfig back = ggnet_config_from_json(to_json(cfg));
  CHECK(back.hidden == cfg.hidden);
  CHECK(back.block_pattern == cfg.block_pattern);
  CHECK(back.dilation_schedule == cfg.dilation_schedule);

  nlohmann::json bad = to_json(cfg);
  bad["hiden"] = 12;  // typo must not pass silently
  CHECK_THROWS_AS(ggnet_config_from_json(bad), ConfigError);

  TrainConfig tc;
  tc.lr = 0.01;
  tc.patience = 5;
  TrainConfig tc_back = train_config_from_json(to_json(tc));
  CHECK(tc_back.lr == 0.01);
  CHECK(tc_back.patience == 5);
  nlohmann::json bad_tc = to_json(tc);
  bad_tc["learning_rate"] = 0.1;
  CHECK_THROWS_AS(train_config_from_json(bad_tc), ConfigError);

  RnnConfig rc;
  rc.variant = RnnVariant::Embedded;
  CHECK(rnn_config_from_json(to_json(rc)).variant == RnnVariant::Embedded);
  CHECK_THROWS_AS(rnn_config_from_json({{"variant", "lstm"}}), ConfigError);
}

TEST_CASE("manifest carries a version field") {
  Tensor t = Tensor::from_data({2}, {1.0, 2.0});
  save_checkpoint("ckpt_version.ggnt", {{"t", &t}}, {}, {});
  LoadedCheckpoint loaded = load_checkpoint("ckpt_version.ggnt");
  CHECK(loaded.version == 1);
  CHECK(loaded.tensors.at("t").data() == std::vector<double>{1.0, 2.0});
  fs::remove("ckpt_version.ggnt");
}
