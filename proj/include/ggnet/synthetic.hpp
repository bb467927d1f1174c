#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ggnet/dataset.hpp"
#include "ggnet/metrics.hpp"

namespace ggnet {

/// Controllable ground-truth generator: per cluster, latent signals made of
/// random-phase sinusoids plus an AR(1) component (normalized to unit
/// variance); per location, the cluster latent plus a constant offset;
/// channels are a linear mix of the latents plus i.i.d. noise.
///
/// Per-location randomness is keyed by (cluster, rank within cluster), so
/// relabelings that keep cluster mates in relative order permute the output
/// rows exactly.
struct SyntheticSpec {
  std::size_t n_locations = 20;
  std::size_t n_steps = 512;
  std::size_t n_channels = 4;
  std::size_t latent_dim = 2;
  std::size_t n_clusters = 3;
  std::vector<std::size_t> cluster_of;  // empty -> round robin over n_clusters
  std::vector<double> mixing;           // n_channels x latent_dim; empty -> random rows
  std::vector<double> seasonal_periods{24.0, 48.0, 96.0};
  double ar_coeff = 0.8;
  double ar_std = 0.3;
  double location_offset_std = 0.2;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticMetadata {
  std::vector<double> mixing;            // n_channels x latent_dim as used
  std::vector<std::size_t> cluster_of;   // length N
  std::vector<double> latents;           // N x T x latent_dim ground truth
};

std::pair<SpatioTemporalDataset, SyntheticMetadata> generate(const SyntheticSpec& spec);

/// Least-squares reconstruction of channel `target_channel` at one location
/// from the other channels there, using the true mixing matrix. Returns
/// nothing when the covariate rows of the mixing matrix are rank deficient.
std::optional<std::vector<double>> oracle_linear_reconstruction(
    const SpatioTemporalDataset& ds, const SyntheticMetadata& meta,
    std::size_t location, std::size_t target_channel);

/// Oracle predictions for every cell selected by the split label; entries the
/// oracle cannot produce stay invalid.
PredictionSet oracle_predictions(const SpatioTemporalDataset& ds,
                                 const SyntheticMetadata& meta,
                                 const ChannelSplit& split, SplitLabel label);

}  // namespace ggnet
