#include "ggnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ggnet {

SpatioTemporalDataset SpatioTemporalDataset::empty(std::size_t n, std::size_t t,
                                                   std::size_t d) {
  SpatioTemporalDataset ds;
  ds.N = n;
  ds.T = t;
  ds.D = d;
  ds.values.assign(n * t * d, 0.0);
  ds.mask.assign(n * t * d, 0);
  for (std::size_t i = 0; i < n; ++i) ds.location_ids.push_back("loc" + std::to_string(i));
  for (std::size_t i = 0; i < t; ++i) ds.timestamps.push_back("t" + std::to_string(i));
  for (std::size_t i = 0; i < d; ++i) ds.channel_names.push_back("ch" + std::to_string(i));
  return ds;
}

bool SpatioTemporalDataset::channel_available(std::size_t n, std::size_t d) const {
  for (std::size_t t = 0; t < T; ++t) {
    if (observed(n, t, d)) return true;
  }
  return false;
}

std::size_t SpatioTemporalDataset::available_channel_count() const {
  std::size_t count = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d)
      if (channel_available(n, d)) ++count;
  return count;
}

void SpatioTemporalDataset::validate() const {
  const std::size_t expect = N * T * D;
  if (values.size() != expect || mask.size() != expect) {
    throw DataError("dataset tensor size does not match N*T*D");
  }
  for (std::uint8_t m : mask) {
    if (m > 1) throw DataError("dataset mask entries must be 0 or 1");
  }
  if (!coords.empty()) {
    if (coords.size() != N) throw DataError("coords length must equal N");
    for (const auto& c : coords) {
      if (c[0] < -90.0 || c[0] > 90.0 || c[1] < -180.0 || c[1] > 180.0) {
        throw DataError("coordinates out of range");
      }
    }
  }
  if (location_ids.size() != N || timestamps.size() != T ||
      channel_names.size() != D) {
    throw DataError("dataset metadata length mismatch");
  }
}

std::size_t ChannelSplit::count(SplitLabel l) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l));
}

std::vector<std::uint8_t> channel_availability(const SpatioTemporalDataset& ds) {
  std::vector<std::uint8_t> avail(ds.N * ds.D, 0);
  for (std::size_t n = 0; n < ds.N; ++n)
    for (std::size_t d = 0; d < ds.D; ++d)
      avail[n * ds.D + d] = ds.channel_available(n, d) ? 1 : 0;
  return avail;
}

// ----------------------------------------------------------- standardization

std::pair<SpatioTemporalDataset, Standardization> standardize(
    const SpatioTemporalDataset& ds) {
  Standardization stats;
  stats.mean.assign(ds.D, 0.0);
  stats.std.assign(ds.D, 1.0);

  for (std::size_t d = 0; d < ds.D; ++d) {
    double sum = 0.0, sumsq = 0.0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < ds.N; ++n) {
      for (std::size_t t = 0; t < ds.T; ++t) {
        if (!ds.observed(n, t, d)) continue;
        const double x = ds.value_at(n, t, d);
        sum += x;
        sumsq += x * x;
        ++count;
      }
    }
    if (count == 0) {
      throw DataError("unstandardizable channel (no observations): " +
                      (d < ds.channel_names.size() ? ds.channel_names[d]
                                                   : std::to_string(d)));
    }
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sumsq / static_cast<double>(count) - mean * mean);
    double sd = std::sqrt(var);
    if (sd < 1e-8) sd = 1.0;  // degenerate channels map to identically zero
    stats.mean[d] = mean;
    stats.std[d] = sd;
  }

  SpatioTemporalDataset out = ds;
  for (std::size_t n = 0; n < ds.N; ++n) {
    for (std::size_t t = 0; t < ds.T; ++t) {
      for (std::size_t d = 0; d < ds.D; ++d) {
        const std::size_t i = ds.offset(n, t, d);
        out.values[i] = ds.mask[i] ? stats.to_standard(ds.values[i], d) : 0.0;
      }
    }
  }
  return {std::move(out), std::move(stats)};
}

SpatioTemporalDataset destandardize(const SpatioTemporalDataset& ds,
                                    const Standardization& stats) {
  SpatioTemporalDataset out = ds;
  for (std::size_t n = 0; n < ds.N; ++n)
    for (std::size_t t = 0; t < ds.T; ++t)
      for (std::size_t d = 0; d < ds.D; ++d) {
        const std::size_t i = ds.offset(n, t, d);
        out.values[i] = stats.to_original(ds.values[i], d);
      }
  return out;
}

// -------------------------------------------------------------------- splits

ChannelSplit split_channels(const SpatioTemporalDataset& ds,
                            const SplitFractions& fractions, std::uint64_t seed) {
  if (fractions.train <= 0.0 || fractions.val <= 0.0 || fractions.test <= 0.0) {
    throw ConfigError("split fractions must be positive");
  }
  if (std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }

  ChannelSplit split;
  split.N = ds.N;
  split.D = ds.D;
  split.labels.assign(ds.N * ds.D, SplitLabel::Unavailable);

  std::vector<std::size_t> available;  // flat (n*D + d), lexicographic
  for (std::size_t n = 0; n < ds.N; ++n)
    for (std::size_t d = 0; d < ds.D; ++d)
      if (ds.channel_available(n, d)) available.push_back(n * ds.D + d);

  const std::size_t m = available.size();
  if (m < 3) throw DataError("split requires at least 3 available channels");

  // largest-remainder apportionment of m over the three fractions
  const double fracs[3] = {fractions.train, fractions.val, fractions.test};
  std::size_t counts[3];
  double remainders[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fracs[i] * static_cast<double>(m);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    remainders[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  std::size_t order[3] = {0, 1, 2};
  std::stable_sort(order, order + 3,
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t i = 0; assigned < m; ++i, ++assigned) counts[order[i % 3]] += 1;

  Rng rng(seed);
  rng.shuffle(available);
  std::size_t pos = 0;
  const SplitLabel order_labels[3] = {SplitLabel::Train, SplitLabel::Val,
                                      SplitLabel::Test};
  for (int i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < counts[i]; ++j, ++pos) {
      split.labels[available[pos]] = order_labels[i];
    }
  }
  return split;
}

WhiteningMask sample_whitening_mask(const std::vector<std::uint8_t>& availability,
                                    std::size_t n, std::size_t t_w, std::size_t d,
                                    const ChannelSplit& split, double p_channels,
                                    double p_points, std::uint64_t seed) {
  if (p_channels < 0.0 || p_channels > 1.0 || p_points < 0.0 || p_points > 1.0) {
    throw ConfigError("whitening probabilities must lie in [0,1]");
  }
  if (availability.size() != n * t_w * d) {
    throw ShapeError("availability size mismatch in sample_whitening_mask");
  }
  WhiteningMask wm;
  wm.N = n;
  wm.Tw = t_w;
  wm.D = d;
  wm.channel_mask.assign(n * d, 1);
  wm.point_mask.assign(n * t_w * d, 1);
  wm.combined.assign(n * t_w * d, 0);

  Rng rng(seed);
  for (std::size_t nn = 0; nn < n; ++nn) {
    for (std::size_t dd = 0; dd < d; ++dd) {
      if (split.label(nn, dd) != SplitLabel::Train) continue;
      if (rng.bernoulli(p_channels)) wm.channel_mask[nn * d + dd] = 0;
    }
  }
  for (std::size_t nn = 0; nn < n; ++nn) {
    for (std::size_t t = 0; t < t_w; ++t) {
      for (std::size_t dd = 0; dd < d; ++dd) {
        const std::size_t i = (nn * t_w + t) * d + dd;
        if (split.label(nn, dd) != SplitLabel::Train) continue;
        if (!availability[i] || !wm.channel_mask[nn * d + dd]) continue;
        if (rng.bernoulli(p_points)) wm.point_mask[i] = 0;
      }
    }
  }
  for (std::size_t nn = 0; nn < n; ++nn) {
    for (std::size_t t = 0; t < t_w; ++t) {
      for (std::size_t dd = 0; dd < d; ++dd) {
        const std::size_t i = (nn * t_w + t) * d + dd;
        wm.combined[i] = availability[i] & wm.channel_mask[nn * d + dd] & wm.point_mask[i];
      }
    }
  }
  return wm;
}

// ------------------------------------------------------------------- windows

std::vector<WindowBatch> window_batches(const SpatioTemporalDataset& ds,
                                        std::size_t t_w, std::size_t batch_size,
                                        std::uint64_t seed, bool shuffle) {
  if (t_w == 0) throw ConfigError("window length must be positive");
  if (t_w > ds.T) throw ConfigError("window length exceeds series length");
  if (batch_size == 0) throw ConfigError("batch size must be positive");

  const std::size_t n_windows = (ds.T + t_w - 1) / t_w;
  std::vector<std::size_t> order(n_windows);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order);
  }

  std::vector<WindowBatch> batches;
  for (std::size_t pos = 0; pos < n_windows; pos += batch_size) {
    WindowBatch batch;
    const std::size_t stop = std::min(pos + batch_size, n_windows);
    for (std::size_t w = pos; w < stop; ++w) {
      const std::size_t t0 = order[w] * t_w;
      Window win;
      win.t0 = t0;
      win.real_steps = std::min(t_w, ds.T - t0);
      win.values.assign(ds.N * t_w * ds.D, 0.0);
      win.mask.assign(ds.N * t_w * ds.D, 0);
      for (std::size_t n = 0; n < ds.N; ++n) {
        for (std::size_t t = 0; t < win.real_steps; ++t) {
          for (std::size_t d = 0; d < ds.D; ++d) {
            const std::size_t src = ds.offset(n, t0 + t, d);
            const std::size_t dst = (n * t_w + t) * ds.D + d;
            win.values[dst] = ds.values[src];
            win.mask[dst] = ds.mask[src];
          }
        }
      }
      batch.windows.push_back(std::move(win));
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ------------------------------------------------------------ partition sets

PartitionSets partition_sets(std::size_t n, std::size_t d,
                             const std::vector<std::uint8_t>& channel_mask,
                             std::size_t num_locations, std::size_t num_channels) {
  if (n >= num_locations || d >= num_channels ||
      channel_mask.size() != num_locations * num_channels) {
    throw ShapeError("partition_sets: invalid indices or mask size");
  }
  PartitionSets sets;
  for (std::size_t nu = 0; nu < num_locations; ++nu) {
    for (std::size_t delta = 0; delta < num_channels; ++delta) {
      const bool observed = channel_mask[nu * num_channels + delta] != 0;
      if (delta == d && nu == n && !observed) sets.target.emplace_back(nu, delta);
      if (delta == d && nu != n && observed) sets.observed_target.emplace_back(nu, delta);
      if (delta != d && nu == n && observed) sets.intra_covariates.emplace_back(nu, delta);
      if (delta != d && nu != n && observed) sets.inter_covariates.emplace_back(nu, delta);
    }
  }
  return sets;
}

}  // namespace ggnet
