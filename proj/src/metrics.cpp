#include "ggnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ggnet/errors.hpp"

namespace ggnet {

PredictionSet PredictionSet::empty(std::size_t n, std::size_t t, std::size_t d) {
  PredictionSet p;
  p.N = n;
  p.T = t;
  p.D = d;
  p.median.assign(n * t * d, 0.0);
  p.validity.assign(n * t * d, 0);
  return p;
}

double mae(const std::vector<double>& pred, const std::vector<double>& truth,
           const std::vector<std::uint8_t>& mask) {
  if (pred.size() != truth.size() || pred.size() != mask.size()) {
    throw ShapeError("mae: size mismatch");
  }
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    acc += std::abs(pred[i] - truth[i]);
    ++count;
  }
  if (count == 0) throw NumericError("mae: no evaluated entries");
  return acc / static_cast<double>(count);
}

double mre(const std::vector<double>& pred, const std::vector<double>& truth,
           const std::vector<std::uint8_t>& mask) {
  if (pred.size() != truth.size() || pred.size() != mask.size()) {
    throw ShapeError("mre: size mismatch");
  }
  double num = 0.0, den = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    num += std::abs(pred[i] - truth[i]);
    den += std::abs(truth[i]);
    ++count;
  }
  if (count == 0) throw NumericError("mre: no evaluated entries");
  if (den <= 0.0) throw NumericError("mre: zero truth magnitude");
  return 100.0 * num / den;
}

namespace {

struct CellAccumulator {
  double abs_err = 0.0;
  double abs_truth = 0.0;
  double truth_sum = 0.0;
  double truth_sumsq = 0.0;
  std::size_t count = 0;

  void add(double pred, double truth) {
    abs_err += std::abs(pred - truth);
    abs_truth += std::abs(truth);
    truth_sum += truth;
    truth_sumsq += truth * truth;
    ++count;
  }
  double sigma() const {
    const double mean = truth_sum / static_cast<double>(count);
    return std::sqrt(std::max(0.0, truth_sumsq / static_cast<double>(count) - mean * mean));
  }
};

}  // namespace

double vre(const std::vector<double>& pred, const std::vector<double>& truth,
           const std::vector<std::uint8_t>& mask, std::size_t n, std::size_t t,
           std::size_t d) {
  if (pred.size() != n * t * d || truth.size() != pred.size() ||
      mask.size() != pred.size()) {
    throw ShapeError("vre: size mismatch");
  }
  double acc = 0.0;
  std::size_t cells = 0;
  for (std::size_t nn = 0; nn < n; ++nn) {
    for (std::size_t dd = 0; dd < d; ++dd) {
      CellAccumulator cell;
      for (std::size_t tt = 0; tt < t; ++tt) {
        const std::size_t i = (nn * t + tt) * d + dd;
        if (mask[i]) cell.add(pred[i], truth[i]);
      }
      if (cell.count == 0) continue;
      const double sigma = cell.sigma();
      if (sigma <= 0.0) continue;  // constant channel excluded
      acc += cell.abs_err / static_cast<double>(cell.count) / sigma;
      ++cells;
    }
  }
  if (cells == 0) throw NumericError("vre: no cells with positive variance");
  return 100.0 * acc / static_cast<double>(cells);
}

MetricReport score_predictions(const PredictionSet& preds,
                               const SpatioTemporalDataset& truth,
                               const std::vector<std::uint8_t>& eval_mask) {
  if (preds.N != truth.N || preds.T != truth.T || preds.D != truth.D) {
    throw ShapeError("score_predictions: prediction/dataset shape mismatch");
  }
  if (eval_mask.size() != truth.values.size()) {
    throw ShapeError("score_predictions: eval mask size mismatch");
  }
  MetricReport report;
  report.N = truth.N;
  report.D = truth.D;
  for (std::size_t n = 0; n < truth.N; ++n) {
    for (std::size_t d = 0; d < truth.D; ++d) {
      CellAccumulator acc;
      for (std::size_t t = 0; t < truth.T; ++t) {
        const std::size_t i = truth.offset(n, t, d);
        if (!eval_mask[i] || !preds.validity[i]) continue;
        acc.add(preds.median[i], truth.values[i]);
      }
      if (acc.count == 0) continue;
      CellMetrics cell;
      cell.location = n;
      cell.channel = d;
      cell.count = acc.count;
      cell.mae = acc.abs_err / static_cast<double>(acc.count);
      if (acc.abs_truth > 0.0) cell.mre = 100.0 * acc.abs_err / acc.abs_truth;
      const double sigma = acc.sigma();
      if (sigma > 0.0) {
        cell.vre = 100.0 * cell.mae / sigma;
      }
      report.cells.push_back(cell);
    }
  }
  return report;
}

namespace {

std::optional<double> cell_value(const CellMetrics& cell, MetricKind kind) {
  switch (kind) {
    case MetricKind::Mae: return cell.mae;
    case MetricKind::Mre: return cell.mre;
    case MetricKind::Vre: return cell.vre;
  }
  return std::nullopt;
}

}  // namespace

std::vector<AggregateRow> aggregate(const MetricReport& report, MetricKind kind,
                                    MetricAxis axis) {
  if (report.cells.empty()) throw NumericError("aggregate: empty report");
  std::map<std::size_t, AggregateRow> rows;
  for (const CellMetrics& cell : report.cells) {
    const std::optional<double> v = cell_value(cell, kind);
    if (!v) continue;
    std::size_t key = 0;
    if (axis == MetricAxis::Channel) key = cell.channel;
    if (axis == MetricAxis::Location) key = cell.location;
    AggregateRow& row = rows[key];
    row.index = key;
    row.value += *v;
    row.cells += 1;
  }
  std::vector<AggregateRow> out;
  for (auto& [key, row] : rows) {
    row.value /= static_cast<double>(row.cells);
    out.push_back(row);
  }
  return out;
}

double global_metric(const MetricReport& report, MetricKind kind) {
  const auto rows = aggregate(report, kind, MetricAxis::Global);
  if (rows.empty()) throw NumericError("global_metric: metric undefined on all cells");
  return rows[0].value;
}

std::vector<std::uint8_t> eval_mask_for(const SpatioTemporalDataset& ds,
                                        const ChannelSplit& split, SplitLabel label) {
  std::vector<std::uint8_t> out(ds.values.size(), 0);
  for (std::size_t n = 0; n < ds.N; ++n)
    for (std::size_t d = 0; d < ds.D; ++d) {
      if (split.label(n, d) != label) continue;
      for (std::size_t t = 0; t < ds.T; ++t) {
        const std::size_t i = ds.offset(n, t, d);
        out[i] = ds.mask[i];
      }
    }
  return out;
}

// ------------------------------------------------------------- serialization

void save_predictions(const PredictionSet& preds, const SpatioTemporalDataset& ds,
                      const std::string& path) {
  if (preds.N != ds.N || preds.T != ds.T || preds.D != ds.D) {
    throw ShapeError("save_predictions: prediction/dataset shape mismatch");
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out.precision(17);
  out << "location_id,timestamp,channel,q_low,q_med,q_high\n";
  const bool bands = preds.has_bands();
  for (std::size_t n = 0; n < preds.N; ++n) {
    for (std::size_t t = 0; t < preds.T; ++t) {
      for (std::size_t d = 0; d < preds.D; ++d) {
        const std::size_t i = preds.offset(n, t, d);
        if (!preds.validity[i]) continue;
        const double med = preds.median[i];
        const double lo = bands ? preds.lower[i] : med;
        const double hi = bands ? preds.upper[i] : med;
        out << ds.location_ids[n] << ',' << ds.timestamps[t] << ','
            << ds.channel_names[d] << ',' << lo << ',' << med << ',' << hi << '\n';
      }
    }
  }
}

PredictionSet load_predictions(const std::string& path,
                               const SpatioTemporalDataset& ds) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);

  std::map<std::string, std::size_t> loc_index, time_index, chan_index;
  for (std::size_t i = 0; i < ds.N; ++i) loc_index[ds.location_ids[i]] = i;
  for (std::size_t i = 0; i < ds.T; ++i) time_index[ds.timestamps[i]] = i;
  for (std::size_t i = 0; i < ds.D; ++i) chan_index[ds.channel_names[i]] = i;

  PredictionSet preds = PredictionSet::empty(ds.N, ds.T, ds.D);
  preds.lower.assign(preds.median.size(), 0.0);
  preds.upper.assign(preds.median.size(), 0.0);

  std::string line;
  std::getline(in, line);  // header
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string loc, ts, chan, lo, med, hi;
    if (!std::getline(ss, loc, ',') || !std::getline(ss, ts, ',') ||
        !std::getline(ss, chan, ',') || !std::getline(ss, lo, ',') ||
        !std::getline(ss, med, ',') || !std::getline(ss, hi, ',')) {
      throw DataError("malformed prediction row at line " + std::to_string(line_no));
    }
    const auto li = loc_index.find(loc);
    const auto ti = time_index.find(ts);
    const auto ci = chan_index.find(chan);
    if (li == loc_index.end()) throw DataError("unknown location_id: " + loc);
    if (ti == time_index.end()) throw DataError("unknown timestamp: " + ts);
    if (ci == chan_index.end()) throw DataError("unknown channel: " + chan);
    const std::size_t i = preds.offset(li->second, ti->second, ci->second);
    preds.lower[i] = std::stod(lo);
    preds.median[i] = std::stod(med);
    preds.upper[i] = std::stod(hi);
    preds.validity[i] = 1;
  }
  return preds;
}

void save_metric_report(const MetricReport& report, const SpatioTemporalDataset& ds,
                        const std::string& csv_path, const std::string& json_path) {
  const MetricKind kinds[3] = {MetricKind::Mae, MetricKind::Mre, MetricKind::Vre};
  const char* kind_names[3] = {"mae", "mre", "vre"};

  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw DataError("cannot write " + csv_path);
    out.precision(10);
    out << "axis,id,mae,mre,vre,cells\n";
    auto write_rows = [&](MetricAxis axis, const char* axis_name) {
      // rows keyed by index; metrics may be defined on different cell subsets
      std::map<std::size_t, std::array<std::optional<double>, 3>> table;
      std::map<std::size_t, std::size_t> cell_count;
      for (int k = 0; k < 3; ++k) {
        for (const AggregateRow& row : aggregate(report, kinds[k], axis)) {
          table[row.index][k] = row.value;
          cell_count[row.index] = std::max(cell_count[row.index], row.cells);
        }
      }
      for (const auto& [idx, vals] : table) {
        std::string id = "all";
        if (axis == MetricAxis::Channel)
          id = idx < ds.channel_names.size() ? ds.channel_names[idx] : std::to_string(idx);
        if (axis == MetricAxis::Location)
          id = idx < ds.location_ids.size() ? ds.location_ids[idx] : std::to_string(idx);
        out << axis_name << ',' << id;
        for (int k = 0; k < 3; ++k) {
          out << ',';
          if (vals[k]) out << *vals[k];
        }
        out << ',' << cell_count.at(idx) << '\n';
      }
    };
    write_rows(MetricAxis::Channel, "channel");
    write_rows(MetricAxis::Location, "location");
    write_rows(MetricAxis::Global, "global");
  }

  if (!json_path.empty()) {
    nlohmann::json j;
    j["cells"] = nlohmann::json::array();
    for (const CellMetrics& cell : report.cells) {
      nlohmann::json c;
      c["location"] = cell.location < ds.location_ids.size()
                          ? ds.location_ids[cell.location]
                          : std::to_string(cell.location);
      c["channel"] = cell.channel < ds.channel_names.size()
                         ? ds.channel_names[cell.channel]
                         : std::to_string(cell.channel);
      c["count"] = cell.count;
      c["mae"] = cell.mae;
      if (cell.mre) c["mre"] = *cell.mre;
      if (cell.vre) c["vre"] = *cell.vre;
      j["cells"].push_back(c);
    }
    for (int k = 0; k < 3; ++k) {
      try {
        j["global"][kind_names[k]] = global_metric(report, kinds[k]);
      } catch (const NumericError&) {
        // metric undefined everywhere; leave it out
      }
    }
    std::ofstream out(json_path);
    if (!out) throw DataError("cannot write " + json_path);
    out << j.dump(2) << '\n';
  }
}

}  // namespace ggnet
