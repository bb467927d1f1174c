#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ggnet/dataset.hpp"

namespace ggnet {

/// Three-quantile reconstructions over the full (location, time, channel)
/// grid. The validity mask marks entries that actually carry predictions
/// (a KNN imputer without eligible neighbors leaves gaps).
struct PredictionSet {
  std::size_t N = 0, T = 0, D = 0;
  std::vector<double> median;            // point predictions, N*T*D
  std::vector<double> lower, upper;      // optional quantile heads, empty if absent
  std::vector<std::uint8_t> validity;    // N*T*D

  static PredictionSet empty(std::size_t n, std::size_t t, std::size_t d);
  std::size_t offset(std::size_t n, std::size_t t, std::size_t d) const {
    return (n * T + t) * D + d;
  }
  bool has_bands() const { return !lower.empty() && !upper.empty(); }
};

/// Mean absolute error over mask=1 entries.
double mae(const std::vector<double>& pred, const std::vector<double>& truth,
           const std::vector<std::uint8_t>& mask);

/// 100 * sum|pred-truth| / sum|truth| over mask=1 entries.
double mre(const std::vector<double>& pred, const std::vector<double>& truth,
           const std::vector<std::uint8_t>& mask);

/// Variance-rescaled error in percent: per (n,d), the temporal mean of
/// |pred-truth| divided by the population std of the true series over the
/// evaluated entries; averaged over cells with positive std.
double vre(const std::vector<double>& pred, const std::vector<double>& truth,
           const std::vector<std::uint8_t>& mask, std::size_t n, std::size_t t,
           std::size_t d);

struct CellMetrics {
  std::size_t location = 0, channel = 0;
  std::size_t count = 0;  // evaluated entries
  double mae = 0.0;
  std::optional<double> mre;  // undefined when sum|truth| = 0
  std::optional<double> vre;  // undefined when the true series is constant
};

enum class MetricKind { Mae, Mre, Vre };
enum class MetricAxis { Channel, Location, Global };

struct AggregateRow {
  std::size_t index = 0;  // channel or location; unused for Global
  double value = 0.0;
  std::size_t cells = 0;
};

/// Per-(location, channel) metrics plus axis aggregations.
struct MetricReport {
  std::size_t N = 0, D = 0;
  std::vector<CellMetrics> cells;  // one entry per evaluated cell
};

/// Score a prediction set against ground truth on the entries selected by
/// eval_mask (intersected with prediction validity). Values are compared in
/// the units both sides are expressed in.
MetricReport score_predictions(const PredictionSet& preds,
                               const SpatioTemporalDataset& truth,
                               const std::vector<std::uint8_t>& eval_mask);

/// Unweighted mean of the chosen metric across cells sharing the axis value;
/// cells with an undefined metric are excluded.
std::vector<AggregateRow> aggregate(const MetricReport& report, MetricKind kind,
                                    MetricAxis axis);

/// Convenience: the Global aggregate value (mean over all defined cells).
double global_metric(const MetricReport& report, MetricKind kind);

// -------------------------------------------------------------- serialization

/// Long-form CSV: location_id, timestamp, channel, q_low, q_med, q_high.
/// Only valid entries are written. This is also the adapter surface for
/// scoring externally produced predictions.
void save_predictions(const PredictionSet& preds, const SpatioTemporalDataset& ds,
                      const std::string& path);
PredictionSet load_predictions(const std::string& path,
                               const SpatioTemporalDataset& ds);

void save_metric_report(const MetricReport& report, const SpatioTemporalDataset& ds,
                        const std::string& csv_path, const std::string& json_path);

/// Evaluation mask for a split label: observed entries of channels carrying
/// that label.
std::vector<std::uint8_t> eval_mask_for(const SpatioTemporalDataset& ds,
                                        const ChannelSplit& split, SplitLabel label);

}  // namespace ggnet
