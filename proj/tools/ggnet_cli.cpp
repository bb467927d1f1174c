#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ggnet/checkpoint.hpp"
#include "ggnet/gradcheck_suite.hpp"
#include "ggnet/ingestion.hpp"
#include "ggnet/synthetic.hpp"

namespace {

using nlohmann::json;
using namespace ggnet;

constexpr const char* kVersion = "0.1.0";

// ------------------------------------------------------------------- RunConfig

struct RunConfig {
  std::string dataset;
  std::string output_dir = "run";
  std::string model_kind = "ggnet";
  json model = json::object();
  json train = json::object();
  double split_train = 0.7, split_val = 0.1, split_test = 0.2;
  std::uint64_t split_seed = 0;
  json synthetic = json::object();
  json fetch = json::object();
  json raw = json::object();
};

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path + ": " + e.what());
  }
}

// dotted-path override: train.lr=0.01
void apply_override(json& j, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("--set expects key=value, got '" + spec + "'");
  }
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);
  json* cursor = &j;
  std::size_t pos = 0;
  while (true) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot - pos);
    if (key.empty()) throw ConfigError("--set has an empty key segment");
    if (dot == std::string::npos) {
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (const json::exception&) {
        parsed = value;  // plain strings need no quotes
      }
      (*cursor)[key] = parsed;
      return;
    }
    cursor = &(*cursor)[key];
    pos = dot + 1;
  }
}

RunConfig parse_run_config(const json& j) {
  reject_unknown_keys(j,
                      {"dataset", "output_dir", "model", "train", "split", "synthetic",
                       "fetch"},
                      "run config");
  RunConfig config;
  config.raw = j;
  config.dataset = j.value("dataset", std::string());
  config.output_dir = j.value("output_dir", std::string("run"));
  if (j.contains("model")) {
    json model = j["model"];
    if (model.contains("kind")) {
      config.model_kind = model["kind"].get<std::string>();
      model.erase("kind");
    }
    config.model = model;
  }
  if (j.contains("train")) config.train = j["train"];
  if (j.contains("split")) {
    reject_unknown_keys(j["split"], {"train", "val", "test", "seed"}, "split config");
    config.split_train = j["split"].value("train", 0.7);
    config.split_val = j["split"].value("val", 0.1);
    config.split_test = j["split"].value("test", 0.2);
    config.split_seed = j["split"].value("seed", 0);
  }
  if (j.contains("synthetic")) config.synthetic = j["synthetic"];
  if (j.contains("fetch")) config.fetch = j["fetch"];
  return config;
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"n_locations", "n_steps", "n_channels", "latent_dim",
                       "n_clusters", "seasonal_periods", "ar_coeff", "ar_std",
                       "location_offset_std", "noise_std", "seed"},
                      "synthetic config");
  SyntheticSpec spec;
  spec.n_locations = j.value("n_locations", spec.n_locations);
  spec.n_steps = j.value("n_steps", spec.n_steps);
  spec.n_channels = j.value("n_channels", spec.n_channels);
  spec.latent_dim = j.value("latent_dim", spec.latent_dim);
  spec.n_clusters = j.value("n_clusters", spec.n_clusters);
  if (j.contains("seasonal_periods")) {
    spec.seasonal_periods = j["seasonal_periods"].get<std::vector<double>>();
  }
  spec.ar_coeff = j.value("ar_coeff", spec.ar_coeff);
  spec.ar_std = j.value("ar_std", spec.ar_std);
  spec.location_offset_std = j.value("location_offset_std", spec.location_offset_std);
  spec.noise_std = j.value("noise_std", spec.noise_std);
  spec.seed = j.value("seed", spec.seed);
  return spec;
}

std::unique_ptr<ImputationModel> make_model(const RunConfig& config, std::size_t n,
                                            std::size_t d, std::uint64_t seed) {
  const std::string& kind = config.model_kind;
  if (kind == "ggnet") {
    return std::make_unique<GgNetModel>(ggnet_config_from_json(config.model), n, d,
                                        seed);
  }
  if (kind == "rnn" || kind == "rnn_bid" || kind == "rnn_emb" || kind == "rnn_g") {
    json model = config.model;
    if (!model.contains("variant")) {
      model["variant"] = kind == "rnn"       ? "plain"
                         : kind == "rnn_bid" ? "bidirectional"
                         : kind == "rnn_emb" ? "embedded"
                                             : "graph";
    }
    return std::make_unique<RnnModel>(rnn_config_from_json(model), n, d, seed);
  }
  throw ConfigError("unknown model kind '" + kind +
                    "' (expected ggnet, rnn, rnn_bid, rnn_emb, rnn_g, knn, mean)");
}

void write_manifest(const RunConfig& config, const std::string& command,
                    const std::vector<std::string>& overrides, double wall_seconds) {
  json manifest;
  manifest["command"] = command;
  manifest["config"] = config.raw;
  manifest["overrides"] = overrides;
  manifest["code_version"] = kVersion;
  manifest["wall_seconds"] = wall_seconds;
  const auto now = std::chrono::system_clock::now();
  manifest["finished_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
  std::filesystem::create_directories(config.output_dir);
  std::ofstream out(std::filesystem::path(config.output_dir) / "manifest.json");
  out << manifest.dump(2) << '\n';
}

struct LoadedRun {
  SpatioTemporalDataset ds;
  SpatioTemporalDataset std_ds;
  Standardization stats;
  ChannelSplit split;
};

LoadedRun load_run(const RunConfig& config) {
  if (config.dataset.empty()) throw ConfigError("config lacks a dataset path");
  LoadedRun run{load_dataset(config.dataset), {}, {}, {}};
  auto standardized = standardize(run.ds);
  run.std_ds = std::move(standardized.first);
  run.stats = std::move(standardized.second);
  run.split = split_channels(run.ds, {config.split_train, config.split_val,
                                      config.split_test},
                             config.split_seed);
  return run;
}

// ----------------------------------------------------------------- commands

int cmd_generate(const RunConfig& config) {
  SyntheticSpec spec = synthetic_spec_from_json(config.synthetic);
  auto [ds, meta] = generate(spec);
  const std::string dir =
      config.dataset.empty() ? config.output_dir + "/dataset" : config.dataset;
  save_dataset(ds, dir);

  // ground-truth sidecar for oracle-based evaluation
  json truth;
  truth["mixing"] = meta.mixing;
  truth["cluster_of"] = meta.cluster_of;
  std::ofstream out(std::filesystem::path(dir) / "truth.json");
  out << truth.dump(2) << '\n';
  std::cout << "generated " << ds.N << " locations x " << ds.T << " steps x "
            << ds.D << " channels -> " << dir << "\n";
  return 0;
}

int cmd_fetch(const RunConfig& config) {
  const json& f = config.fetch;
  reject_unknown_keys(f,
                      {"locations_csv", "parameters", "resolution", "start", "end",
                       "base_url", "fixture_dir", "requests_per_second", "retries",
                       "max_locations"},
                      "fetch config");
  if (!f.contains("locations_csv")) {
    throw ConfigError("fetch config needs locations_csv");
  }
  auto locations = load_locations_csv(f["locations_csv"].get<std::string>());
  if (f.contains("max_locations")) {
    const std::size_t cap = f["max_locations"].get<std::size_t>();
    if (locations.size() > cap) locations.resize(cap);
  }
  std::vector<PowerRequest> requests;
  for (const auto& loc : locations) {
    PowerRequest req;
    req.location_id = loc.id;
    req.latitude = loc.latitude;
    req.longitude = loc.longitude;
    req.resolution = f.value("resolution", "daily");
    req.parameters = f.value("parameters", std::vector<std::string>{
                                               "T2M", "T2M_RANGE", "T2M_MAX", "WS2M",
                                               "RH2M", "PRECTOTCORR", "T2MDEW",
                                               "CLOUD_AMT", "ALLSKY_SFC_SW_DWN",
                                               "ALLSKY_SFC_LW_DWN"});
    req.start = f.value("start", "20220101");
    req.end = f.value("end", "20221231");
    requests.push_back(std::move(req));
  }
  FetchOptions options;
  options.base_url = f.value("base_url", options.base_url);
  options.fixture_dir = f.value("fixture_dir", options.fixture_dir);
  options.requests_per_second =
      f.value("requests_per_second", options.requests_per_second);
  options.retries = f.value("retries", options.retries);

  FetchReport report;
  SpatioTemporalDataset ds = fetch_power(requests, options, &report);
  const std::string dir =
      config.dataset.empty() ? config.output_dir + "/dataset" : config.dataset;
  save_dataset(ds, dir, requests.empty() ? "daily" : requests.front().resolution);
  std::cout << "fetched " << report.fetched << "/" << requests.size()
            << " locations -> " << dir << "\n";
  for (const std::string& e : report.errors) std::cerr << "  fetch warning: " << e << "\n";
  return report.errors.empty() ? 0 : 3;
}

int cmd_train(const RunConfig& config) {
  LoadedRun run = load_run(config);
  TrainConfig tc = train_config_from_json(config.train);

  if (config.model_kind == "knn" || config.model_kind == "mean") {
    throw ConfigError("model kind '" + config.model_kind +
                      "' has no trainable parameters; use `evaluate` directly");
  }
  auto model = make_model(config, run.ds.N, run.ds.D, tc.seed);
  TrainHistory history = train_model(*model, run.std_ds, run.stats, run.split, tc);

  std::filesystem::create_directories(config.output_dir);
  const std::filesystem::path out(config.output_dir);
  save_history_csv(history, (out / "history.csv").string());

  ModelCheckpoint info;
  info.model_kind = config.model_kind;
  info.model_config = config.model_kind == "ggnet"
                          ? to_json(ggnet_config_from_json(config.model))
                          : config.model;
  info.n_locations = run.ds.N;
  info.n_channels = run.ds.D;
  info.standardization = run.stats;
  info.location_ids = run.ds.location_ids;
  info.channel_names = run.ds.channel_names;
  save_model_checkpoint((out / "checkpoint.ggnt").string(), *model, info);

  std::cout << "trained " << config.model_kind << " for " << history.epochs()
            << " epochs (best " << history.best_epoch << ", val "
            << (history.best_epoch ? history.val_metric[history.best_epoch - 1] : 0.0)
            << ")\n";
  if (history.diverged) {
    std::cerr << "training diverged; checkpoint holds the last good parameters\n";
    return 4;
  }
  return 0;
}

PredictionSet predictions_for(const RunConfig& config, LoadedRun& run,
                              const std::string& checkpoint_path,
                              const std::string& predictions_path) {
  if (!predictions_path.empty()) {
    return load_predictions(predictions_path, run.ds);
  }
  if (config.model_kind == "knn") {
    const std::size_t k = select_knn_k(run.ds, run.split);
    return knn_impute(run.ds, run.split, k);
  }
  if (config.model_kind == "mean") {
    return mean_impute(run.ds, run.split);
  }
  const std::string path = checkpoint_path.empty()
                               ? config.output_dir + "/checkpoint.ggnt"
                               : checkpoint_path;
  RestoredModel restored = load_model_checkpoint(path);
  TrainConfig tc = train_config_from_json(config.train);
  return predict_full(*restored.model, run.std_ds, restored.info.standardization,
                      run.split, tc.t_w);
}

int cmd_evaluate(const RunConfig& config, const std::string& checkpoint_path,
                 const std::string& predictions_path, const std::string& label_name) {
  LoadedRun run = load_run(config);
  SplitLabel label = SplitLabel::Test;
  if (label_name == "val") {
    label = SplitLabel::Val;
  } else if (label_name != "test") {
    throw ConfigError("evaluate --label must be test or val");
  }
  PredictionSet preds = predictions_for(config, run, checkpoint_path, predictions_path);
  MetricReport report =
      score_predictions(preds, run.ds, eval_mask_for(run.ds, run.split, label));

  std::filesystem::create_directories(config.output_dir);
  const std::filesystem::path out(config.output_dir);
  save_metric_report(report, run.ds, (out / "metrics.csv").string(),
                     (out / "metrics.json").string());
  std::cout << "evaluated " << report.cells.size() << " cells on " << label_name
            << " channels: MAE " << global_metric(report, MetricKind::Mae);
  try {
    std::cout << ", MRE " << global_metric(report, MetricKind::Mre) << "%";
    std::cout << ", VRE " << global_metric(report, MetricKind::Vre) << "%";
  } catch (const NumericError&) {
    // undefined on this data; the files carry whatever is defined
  }
  std::cout << "\n";
  return 0;
}

int cmd_impute(const RunConfig& config, const std::string& checkpoint_path) {
  LoadedRun run = load_run(config);
  PredictionSet preds = predictions_for(config, run, checkpoint_path, "");
  std::filesystem::create_directories(config.output_dir);
  const std::string path = config.output_dir + "/predictions.csv";
  save_predictions(preds, run.ds, path);
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_gradcheck() {
  const auto results = run_gradient_suite();
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.max_rel_error < 1e-4;
    ok = ok && pass;
    std::cout << (pass ? "[pass] " : "[FAIL] ") << r.name << " max_rel_err="
              << r.max_rel_error << "\n";
  }
  return ok ? 0 : 4;
}

int cmd_export_graphs(const RunConfig& config, const std::string& checkpoint_path) {
  const std::string path = checkpoint_path.empty()
                               ? config.output_dir + "/checkpoint.ggnt"
                               : checkpoint_path;
  RestoredModel restored = load_model_checkpoint(path);
  auto* ggnet = dynamic_cast<GgNetModel*>(restored.model.get());
  if (!ggnet) throw ConfigError("export-graphs requires a ggnet checkpoint");
  GgNetParams& params = ggnet->params();
  Tensor adj_loc = build_inter_adjacency(params.location_embeddings,
                                         params.adjacency_src, params.adjacency_dst)
                       .weights;
  Tensor adj_chan = build_intra_adjacency(params.channel_scores).weights;
  export_graphs(config.output_dir, adj_loc, adj_chan, params.location_embeddings,
                restored.info.location_ids, restored.info.channel_names);
  std::cout << "wrote adjacency and embedding CSVs to " << config.output_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GgNet multivariate virtual sensing toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint_path, predictions_path, label = "test", out_dir;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "run configuration JSON file")
        ->required();
    cmd->add_option("--set", overrides,
                    "override a config key (dotted path), e.g. --set train.lr=0.01");
    cmd->add_option("-o,--out", out_dir, "output directory (overrides config)");
  };

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(generate);
  CLI::App* fetch =
      app.add_subcommand("fetch", "assemble a dataset from the POWER point API");
  add_common(fetch);
  CLI::App* train = app.add_subcommand("train", "train a model and checkpoint it");
  add_common(train);
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "score predictions on the held-out channels");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate");
  evaluate->add_option("--predictions", predictions_path,
                       "external prediction CSV to score instead of a checkpoint");
  evaluate->add_option("--label", label, "test (default) or val");
  CLI::App* impute =
      app.add_subcommand("impute", "write three-quantile reconstructions as CSV");
  add_common(impute);
  impute->add_option("--checkpoint", checkpoint_path, "checkpoint to apply");
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "run the gradient verification suite");
  CLI::App* export_graphs_cmd =
      app.add_subcommand("export-graphs", "write learned adjacencies and embeddings");
  add_common(export_graphs_cmd);
  export_graphs_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint to read");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const auto started = std::chrono::steady_clock::now();
  try {
    if (gradcheck->parsed()) return cmd_gradcheck();

    json raw = load_json_file(config_path);
    for (const std::string& o : overrides) apply_override(raw, o);
    RunConfig config = parse_run_config(raw);
    if (!out_dir.empty()) config.output_dir = out_dir;

    int rc = 0;
    std::string command;
    if (generate->parsed()) {
      command = "generate";
      rc = cmd_generate(config);
    } else if (fetch->parsed()) {
      command = "fetch";
      rc = cmd_fetch(config);
    } else if (train->parsed()) {
      command = "train";
      rc = cmd_train(config);
    } else if (evaluate->parsed()) {
      command = "evaluate";
      rc = cmd_evaluate(config, checkpoint_path, predictions_path, label);
    } else if (impute->parsed()) {
      command = "impute";
      rc = cmd_impute(config, checkpoint_path);
    } else if (export_graphs_cmd->parsed()) {
      command = "export-graphs";
      rc = cmd_export_graphs(config, checkpoint_path);
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();
    write_manifest(config, command, overrides, wall);
    return rc;
  } catch (const ConfigError& e) {
    std::cerr << "error class=config message=" << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error class=data message=" << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error class=numeric message=" << e.what() << "\n";
    return 4;
  }
}
