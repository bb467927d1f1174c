#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ggnet/errors.hpp"
#include "ggnet/rng.hpp"

namespace ggnet {

/// N locations x T time steps x D channels, with a binary availability mask
/// (1 = observed). Wherever mask is 0 the stored value is meaningless and
/// must be ignored by every consumer.
struct SpatioTemporalDataset {
  std::size_t N = 0, T = 0, D = 0;
  std::vector<double> values;        // N*T*D, row-major (n, t, d)
  std::vector<std::uint8_t> mask;    // N*T*D
  std::vector<std::array<double, 2>> coords;  // lat, lon in degrees; empty if absent
  std::vector<std::string> location_ids;
  std::vector<std::string> timestamps;  // ISO-8601, length T
  std::vector<std::string> channel_names;

  static SpatioTemporalDataset empty(std::size_t n, std::size_t t, std::size_t d);

  std::size_t offset(std::size_t n, std::size_t t, std::size_t d) const {
    return (n * T + t) * D + d;
  }
  double value_at(std::size_t n, std::size_t t, std::size_t d) const {
    return values[offset(n, t, d)];
  }
  bool observed(std::size_t n, std::size_t t, std::size_t d) const {
    return mask[offset(n, t, d)] != 0;
  }
  bool has_coords() const { return !coords.empty(); }

  /// Channel (n,d) is available if it has at least one observed time step.
  bool channel_available(std::size_t n, std::size_t d) const;
  std::size_t available_channel_count() const;

  void validate() const;  // throws DataError on inconsistent sizes / coords
};

enum class SplitLabel : std::uint8_t { Train = 0, Val = 1, Test = 2, Unavailable = 3 };

/// Transductive split: every available (location, channel) pair carries one
/// label; channels with no observations at all are Unavailable.
struct ChannelSplit {
  std::size_t N = 0, D = 0;
  std::vector<SplitLabel> labels;  // N*D

  SplitLabel label(std::size_t n, std::size_t d) const { return labels[n * D + d]; }
  std::size_t count(SplitLabel l) const;
};

/// Batch-local simulated missingness. Mask entries are 1 where visible
/// (availability kept), so `combined <= availability` element-wise.
struct WhiteningMask {
  std::size_t N = 0, Tw = 0, D = 0;
  std::vector<std::uint8_t> channel_mask;  // N*D, 0 = whole channel hidden
  std::vector<std::uint8_t> point_mask;    // N*Tw*D, 0 = point hidden
  std::vector<std::uint8_t> combined;      // availability * channel * point

  bool hidden(std::size_t n, std::size_t t, std::size_t d,
              const std::vector<std::uint8_t>& availability) const {
    const std::size_t i = (n * Tw + t) * D + d;
    return availability[i] != 0 && combined[i] == 0;
  }
};

/// Per-channel pooled statistics over observed entries.
struct Standardization {
  std::vector<double> mean;  // D
  std::vector<double> std;   // D, clamped to 1 when degenerate

  double to_standard(double x, std::size_t d) const { return (x - mean[d]) / std[d]; }
  double to_original(double z, std::size_t d) const { return z * std[d] + mean[d]; }
};

/// Standardize each channel to zero mean / unit population variance over
/// observed entries (pooled across locations and time). Masked entries are
/// zeroed in the output.
std::pair<SpatioTemporalDataset, Standardization> standardize(
    const SpatioTemporalDataset& ds);

SpatioTemporalDataset destandardize(const SpatioTemporalDataset& ds,
                                    const Standardization& stats);

struct SplitFractions {
  double train = 0.7, val = 0.1, test = 0.2;
};

/// Uniform random partition of available (n,d) pairs; counts follow the
/// fractions via largest-remainder rounding; deterministic per seed.
ChannelSplit split_channels(const SpatioTemporalDataset& ds,
                            const SplitFractions& fractions, std::uint64_t seed);

/// Sample a whitening mask over one window. Only train-labeled channels are
/// eligible: each is hidden entirely with probability p_channels, and each
/// remaining observed train point independently with probability p_points.
WhiteningMask sample_whitening_mask(const std::vector<std::uint8_t>& availability,
                                    std::size_t n, std::size_t t_w, std::size_t d,
                                    const ChannelSplit& split, double p_channels,
                                    double p_points, std::uint64_t seed);

/// One temporal window of the dataset. Partial tail windows are zero-padded
/// with mask 0 beyond real_steps.
struct Window {
  std::size_t t0 = 0;          // offset into the full time axis
  std::size_t real_steps = 0;  // <= t_w
  std::vector<double> values;  // N*t_w*D
  std::vector<std::uint8_t> mask;
};

struct WindowBatch {
  std::vector<Window> windows;
};

/// Tile the time axis with stride t_w and group windows into batches.
std::vector<WindowBatch> window_batches(const SpatioTemporalDataset& ds,
                                        std::size_t t_w, std::size_t batch_size,
                                        std::uint64_t seed, bool shuffle);

/// The four covariate/target index sets for a query pair (n,d) over a
/// channel-availability mask: the missing target itself, same channel at
/// other locations, other channels at the same location, and other channels
/// at other locations. Only observed pairs enter the last three sets.
struct PartitionSets {
  std::vector<std::pair<std::size_t, std::size_t>> target;            // Y^d[n]
  std::vector<std::pair<std::size_t, std::size_t>> observed_target;   // T^d[\n]
  std::vector<std::pair<std::size_t, std::size_t>> intra_covariates;  // C^{\d}[n]
  std::vector<std::pair<std::size_t, std::size_t>> inter_covariates;  // C^{\d}[\n]
};

PartitionSets partition_sets(std::size_t n, std::size_t d,
                             const std::vector<std::uint8_t>& channel_mask,
                             std::size_t num_locations, std::size_t num_channels);

/// N*D channel availability (>= 1 observed step) as a byte mask.
std::vector<std::uint8_t> channel_availability(const SpatioTemporalDataset& ds);

}  // namespace ggnet
