#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ggnet/baselines.hpp"
#include "ggnet/checkpoint.hpp"
#include "ggnet/gradcheck_suite.hpp"
#include "ggnet/synthetic.hpp"
#include "ggnet/training.hpp"

namespace py = pybind11;
using namespace ggnet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

struct Grid {
  std::size_t n, t, d;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
};

Grid grid_from(const Array& values, const MaskArray& mask) {
  if (values.ndim() != 3) throw ShapeError("values must be [N,T,D]");
  if (mask.ndim() != 3) throw ShapeError("mask must be [N,T,D]");
  for (int i = 0; i < 3; ++i) {
    if (values.shape(i) != mask.shape(i)) throw ShapeError("values/mask shape mismatch");
  }
  Grid g;
  g.n = static_cast<std::size_t>(values.shape(0));
  g.t = static_cast<std::size_t>(values.shape(1));
  g.d = static_cast<std::size_t>(values.shape(2));
  g.values.assign(values.data(), values.data() + values.size());
  g.mask.assign(mask.data(), mask.data() + mask.size());
  return g;
}

SpatioTemporalDataset dataset_from(const Grid& g) {
  SpatioTemporalDataset ds = SpatioTemporalDataset::empty(g.n, g.t, g.d);
  ds.values = g.values;
  ds.mask = g.mask;
  return ds;
}

Array to_array(const std::vector<double>& data, std::size_t n, std::size_t t,
               std::size_t d) {
  Array out({n, t, d});
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

ChannelSplit split_from(const MaskArray& labels) {
  if (labels.ndim() != 2) throw ShapeError("labels must be [N,D]");
  ChannelSplit split;
  split.N = static_cast<std::size_t>(labels.shape(0));
  split.D = static_cast<std::size_t>(labels.shape(1));
  split.labels.resize(split.N * split.D);
  for (std::size_t i = 0; i < split.labels.size(); ++i) {
    const std::uint8_t v = labels.data()[i];
    if (v > 3) throw ConfigError("split labels must be 0..3");
    split.labels[i] = static_cast<SplitLabel>(v);
  }
  return split;
}

TrainConfig train_config_from_dict(const py::dict& d) {
  nlohmann::json j = nlohmann::json::object();
  for (auto item : d) {
    const std::string key = py::cast<std::string>(item.first);
    if (key == "quantiles") {
      j[key] = py::cast<std::vector<double>>(item.second);
    } else if (key == "seed" || key == "max_epochs" || key == "patience" ||
               key == "batch_size" || key == "t_w") {
      j[key] = py::cast<std::uint64_t>(item.second);
    } else {
      j[key] = py::cast<double>(item.second);
    }
  }
  return train_config_from_json(j);
}

/// Owns a trainable model plus the standardization fitted on its data.
class PyModel {
 public:
  PyModel(const std::string& kind, std::size_t n_locations, std::size_t n_channels,
          const py::dict& config, std::uint64_t seed)
      : kind_(kind) {
    nlohmann::json j = nlohmann::json::object();
    for (auto item : config) {
      const std::string key = py::cast<std::string>(item.first);
      if (key == "pattern" || key == "variant") {
        j[key] = py::cast<std::string>(item.second);
      } else if (key == "dilations") {
        j[key] = py::cast<std::vector<std::size_t>>(item.second);
      } else if (key == "quantiles") {
        j[key] = py::cast<std::vector<double>>(item.second);
      } else if (key == "residual") {
        j[key] = py::cast<bool>(item.second);
      } else {
        j[key] = py::cast<std::uint64_t>(item.second);
      }
    }
    if (kind == "ggnet") {
      model_ = std::make_unique<GgNetModel>(ggnet_config_from_json(j), n_locations,
                                            n_channels, seed);
    } else if (kind == "rnn" || kind == "rnn_bid" || kind == "rnn_emb" ||
               kind == "rnn_g") {
      if (!j.contains("variant")) {
        j["variant"] = kind == "rnn"       ? "plain"
                       : kind == "rnn_bid" ? "bidirectional"
                       : kind == "rnn_emb" ? "embedded"
                                           : "graph";
      }
      model_ = std::make_unique<RnnModel>(rnn_config_from_json(j), n_locations,
                                          n_channels, seed);
    } else {
      throw ConfigError("unknown model kind '" + kind + "'");
    }
  }

  py::dict train(const Array& values, const MaskArray& mask, const MaskArray& labels,
                 const py::dict& config) {
    Grid g = grid_from(values, mask);
    SpatioTemporalDataset ds = dataset_from(g);
    auto [std_ds, stats] = standardize(ds);
    stats_ = stats;
    ChannelSplit split = split_from(labels);
    TrainConfig tc = train_config_from_dict(config);
    TrainHistory history = train_model(*model_, std_ds, stats_, split, tc);
    py::dict out;
    out["train_loss"] = history.train_loss;
    out["val_mre"] = history.val_metric;
    out["lr"] = history.lr;
    out["best_epoch"] = history.best_epoch;
    out["diverged"] = history.diverged;
    return out;
  }

  py::dict impute(const Array& values, const MaskArray& mask, const MaskArray& labels,
                  std::size_t t_w) {
    Grid g = grid_from(values, mask);
    SpatioTemporalDataset ds = dataset_from(g);
    auto [std_ds, fresh_stats] = standardize(ds);
    const Standardization& stats = stats_.mean.empty() ? fresh_stats : stats_;
    ChannelSplit split = split_from(labels);
    PredictionSet preds = predict_full(*model_, std_ds, stats, split, t_w);
    py::dict out;
    out["median"] = to_array(preds.median, g.n, g.t, g.d);
    out["lower"] = to_array(preds.lower, g.n, g.t, g.d);
    out["upper"] = to_array(preds.upper, g.n, g.t, g.d);
    return out;
  }

  std::string kind() const { return kind_; }

 private:
  std::string kind_;
  std::unique_ptr<ImputationModel> model_;
  Standardization stats_;
};

py::dict py_generate(std::size_t n_locations, std::size_t n_steps,
                     std::size_t n_channels, std::size_t latent_dim,
                     std::size_t n_clusters, double noise_std,
                     double location_offset_std, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_locations = n_locations;
  spec.n_steps = n_steps;
  spec.n_channels = n_channels;
  spec.latent_dim = latent_dim;
  spec.n_clusters = n_clusters;
  spec.noise_std = noise_std;
  spec.location_offset_std = location_offset_std;
  spec.seed = seed;
  auto [ds, meta] = generate(spec);
  py::dict out;
  out["values"] = to_array(ds.values, ds.N, ds.T, ds.D);
  MaskArray mask({ds.N, ds.T, ds.D});
  std::copy(ds.mask.begin(), ds.mask.end(), mask.mutable_data());
  out["mask"] = mask;
  out["clusters"] = meta.cluster_of;
  out["mixing"] = meta.mixing;
  return out;
}

MaskArray py_split(const MaskArray& mask, double train, double val, double test,
                   std::uint64_t seed) {
  if (mask.ndim() != 3) throw ShapeError("mask must be [N,T,D]");
  SpatioTemporalDataset ds = SpatioTemporalDataset::empty(
      mask.shape(0), mask.shape(1), mask.shape(2));
  ds.mask.assign(mask.data(), mask.data() + mask.size());
  ChannelSplit split = split_channels(ds, {train, val, test}, seed);
  MaskArray out({split.N, split.D});
  for (std::size_t i = 0; i < split.labels.size(); ++i) {
    out.mutable_data()[i] = static_cast<std::uint8_t>(split.labels[i]);
  }
  return out;
}

double masked_metric(const Array& pred, const Array& truth, const MaskArray& mask,
                     const std::string& kind) {
  std::vector<double> p(pred.data(), pred.data() + pred.size());
  std::vector<double> t(truth.data(), truth.data() + truth.size());
  std::vector<std::uint8_t> m(mask.data(), mask.data() + mask.size());
  if (kind == "mae") return mae(p, t, m);
  if (kind == "mre") return mre(p, t, m);
  if (kind == "vre") {
    if (pred.ndim() != 3) throw ShapeError("vre needs [N,T,D] arrays");
    return vre(p, t, m, pred.shape(0), pred.shape(1), pred.shape(2));
  }
  throw ConfigError("metric must be mae, mre or vre");
}

}  // namespace

PYBIND11_MODULE(_ggnet, m) {
  m.doc() = "Nested-graph multivariate virtual sensing (C++ core bindings)";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<NumericError>(m, "NumericError");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, std::size_t, std::size_t, const py::dict&,
                    std::uint64_t>(),
           py::arg("kind"), py::arg("n_locations"), py::arg("n_channels"),
           py::arg("config") = py::dict(), py::arg("seed") = 0)
      .def("train", &PyModel::train, py::arg("values"), py::arg("mask"),
           py::arg("labels"), py::arg("config") = py::dict())
      .def("impute", &PyModel::impute, py::arg("values"), py::arg("mask"),
           py::arg("labels"), py::arg("t_w") = 24)
      .def_property_readonly("kind", &PyModel::kind);

  m.def("generate_synthetic", &py_generate, py::arg("n_locations") = 20,
        py::arg("n_steps") = 512, py::arg("n_channels") = 4,
        py::arg("latent_dim") = 2, py::arg("n_clusters") = 3,
        py::arg("noise_std") = 0.05, py::arg("location_offset_std") = 0.2,
        py::arg("seed") = 0);
  m.def("split_channels", &py_split, py::arg("mask"), py::arg("train") = 0.7,
        py::arg("val") = 0.1, py::arg("test") = 0.2, py::arg("seed") = 0);
  m.def("metric", &masked_metric, py::arg("pred"), py::arg("truth"), py::arg("mask"),
        py::arg("kind"));
  m.def("haversine_km", [](double lat1, double lon1, double lat2, double lon2) {
    return haversine({lat1, lon1}, {lat2, lon2});
  });
  m.def("pinball_loss", &pinball_loss, py::arg("pred"), py::arg("target"),
        py::arg("quantile"));
  m.def("cosine_lr", &cosine_lr, py::arg("epoch"), py::arg("max_epochs"),
        py::arg("lr_max"), py::arg("lr_min") = 0.0);
  m.def("gradient_suite", []() {
    py::dict out;
    for (const auto& r : run_gradient_suite()) out[r.name.c_str()] = r.max_rel_error;
    return out;
  });
}
