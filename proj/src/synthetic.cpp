#include "ggnet/synthetic.hpp"

#include <cmath>

#include "ggnet/ingestion.hpp"
#include "ggnet/metrics.hpp"

namespace ggnet {

void SyntheticSpec::validate() const {
  if (n_locations == 0 || n_steps == 0 || n_channels == 0 || latent_dim == 0) {
    throw ConfigError("synthetic spec: dimensions must be positive");
  }
  if (n_clusters == 0 && cluster_of.empty()) {
    throw ConfigError("synthetic spec: need clusters");
  }
  if (!cluster_of.empty() && cluster_of.size() != n_locations) {
    throw ConfigError("synthetic spec: cluster_of length must equal n_locations");
  }
  if (!mixing.empty() && mixing.size() != n_channels * latent_dim) {
    throw ConfigError("synthetic spec: mixing must be n_channels x latent_dim");
  }
  if (seasonal_periods.empty()) {
    throw ConfigError("synthetic spec: need at least one seasonal period");
  }
  if (ar_coeff < 0.0 || ar_coeff >= 1.0) {
    throw ConfigError("synthetic spec: ar_coeff must lie in [0,1)");
  }
  if (noise_std < 0.0 || ar_std < 0.0 || location_offset_std < 0.0) {
    throw ConfigError("synthetic spec: scales must be nonnegative");
  }
}

namespace {

// unit-variance latent series for one (cluster, latent) pair
std::vector<double> cluster_latent(const SyntheticSpec& spec, std::size_t cluster,
                                   std::size_t latent) {
  Rng rng(derive_seed(spec.seed, 17 + cluster, latent));
  std::vector<double> z(spec.n_steps, 0.0);
  for (int component = 0; component < 2; ++component) {
    const double period =
        spec.seasonal_periods[rng.below(spec.seasonal_periods.size())];
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double amp = rng.uniform(0.5, 1.0);
    for (std::size_t t = 0; t < spec.n_steps; ++t) {
      z[t] += amp * std::sin(2.0 * M_PI * static_cast<double>(t) / period + phase);
    }
  }
  double u = 0.0;
  for (std::size_t t = 0; t < spec.n_steps; ++t) {
    u = spec.ar_coeff * u + rng.normal(0.0, spec.ar_std);
    z[t] += u;
  }
  double mean = 0.0, sq = 0.0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(spec.n_steps);
  for (double v : z) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(spec.n_steps));
  if (sd > 0.0) {
    for (double& v : z) v = (v - mean) / sd;
  }
  return z;
}

}  // namespace

std::pair<SpatioTemporalDataset, SyntheticMetadata> generate(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_locations, t_len = spec.n_steps, d = spec.n_channels;
  const std::size_t latent = spec.latent_dim;

  SyntheticMetadata meta;
  meta.cluster_of = spec.cluster_of;
  if (meta.cluster_of.empty()) {
    meta.cluster_of.resize(n);
    for (std::size_t i = 0; i < n; ++i) meta.cluster_of[i] = i % spec.n_clusters;
  }

  meta.mixing = spec.mixing;
  if (meta.mixing.empty()) {
    Rng rng(derive_seed(spec.seed, 3, 0));
    meta.mixing.resize(d * latent);
    for (double& w : meta.mixing) w = rng.normal(0.0, 1.0);
    // normalize rows so channels share the latents' scale
    for (std::size_t row = 0; row < d; ++row) {
      double norm = 0.0;
      for (std::size_t l = 0; l < latent; ++l)
        norm += meta.mixing[row * latent + l] * meta.mixing[row * latent + l];
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (std::size_t l = 0; l < latent; ++l) meta.mixing[row * latent + l] /= norm;
    }
  }

  std::size_t n_clusters = 0;
  for (std::size_t c : meta.cluster_of) n_clusters = std::max(n_clusters, c + 1);
  std::vector<std::vector<double>> base(n_clusters * latent);
  for (std::size_t c = 0; c < n_clusters; ++c)
    for (std::size_t l = 0; l < latent; ++l)
      base[c * latent + l] = cluster_latent(spec, c, l);

  SpatioTemporalDataset ds = SpatioTemporalDataset::empty(n, t_len, d);
  ds.timestamps = make_daily_timestamps("20000101", t_len);
  meta.latents.assign(n * t_len * latent, 0.0);

  // offsets keyed by (cluster, rank within cluster) so relabeling locations
  // permutes the output exactly
  std::vector<std::size_t> rank_in_cluster(n, 0);
  {
    std::vector<std::size_t> seen(n_clusters, 0);
    for (std::size_t i = 0; i < n; ++i) rank_in_cluster[i] = seen[meta.cluster_of[i]]++;
  }

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = meta.cluster_of[i];
    Rng rng(derive_seed(spec.seed, 101 + c, rank_in_cluster[i]));
    std::vector<double> offset(latent);
    for (double& o : offset) o = rng.normal(0.0, spec.location_offset_std);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t l = 0; l < latent; ++l) {
        meta.latents[(i * t_len + t) * latent + l] = base[c * latent + l][t] + offset[l];
      }
      for (std::size_t dd = 0; dd < d; ++dd) {
        double x = 0.0;
        for (std::size_t l = 0; l < latent; ++l) {
          x += meta.mixing[dd * latent + l] * meta.latents[(i * t_len + t) * latent + l];
        }
        x += rng.normal(0.0, spec.noise_std);
        ds.values[ds.offset(i, t, dd)] = x;
        ds.mask[ds.offset(i, t, dd)] = 1;
      }
    }
  }
  return {std::move(ds), std::move(meta)};
}

namespace {

// solve the normal equations (W^T W) z = W^T x by Gaussian elimination;
// returns false when W is rank deficient
class LeastSquares {
 public:
  LeastSquares(const std::vector<double>& w, std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), w_(w) {
    gram_.assign(cols * cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t a = 0; a < cols; ++a)
        for (std::size_t b = 0; b < cols; ++b)
          gram_[a * cols + b] += w[i * cols + a] * w[i * cols + b];

    // LU factorization with partial pivoting
    lu_ = gram_;
    piv_.resize(cols);
    double max_diag = 0.0;
    for (std::size_t i = 0; i < cols * cols; ++i)
      max_diag = std::max(max_diag, std::abs(gram_[i]));
    for (std::size_t col = 0; col < cols; ++col) {
      std::size_t pivot = col;
      for (std::size_t r = col + 1; r < cols; ++r)
        if (std::abs(lu_[r * cols + col]) > std::abs(lu_[pivot * cols + col]))
          pivot = r;
      if (std::abs(lu_[pivot * cols + col]) < 1e-12 * std::max(1.0, max_diag)) {
        ok_ = false;
        return;
      }
      piv_[col] = pivot;
      if (pivot != col)
        for (std::size_t cc = 0; cc < cols; ++cc)
          std::swap(lu_[col * cols + cc], lu_[pivot * cols + cc]);
      for (std::size_t r = col + 1; r < cols; ++r) {
        lu_[r * cols + col] /= lu_[col * cols + col];
        for (std::size_t cc = col + 1; cc < cols; ++cc)
          lu_[r * cols + cc] -= lu_[r * cols + col] * lu_[col * cols + cc];
      }
    }
  }

  bool ok() const { return ok_; }

  std::vector<double> solve(const std::vector<double>& x) const {
    std::vector<double> rhs(cols_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t a = 0; a < cols_; ++a) rhs[a] += w_[i * cols_ + a] * x[i];
    for (std::size_t col = 0; col < cols_; ++col) {
      if (piv_[col] != col) std::swap(rhs[col], rhs[piv_[col]]);
      for (std::size_t r = col + 1; r < cols_; ++r)
        rhs[r] -= lu_[r * cols_ + col] * rhs[col];
    }
    for (std::size_t col = cols_; col-- > 0;) {
      for (std::size_t cc = col + 1; cc < cols_; ++cc)
        rhs[col] -= lu_[col * cols_ + cc] * rhs[cc];
      rhs[col] /= lu_[col * cols_ + col];
    }
    return rhs;
  }

 private:
  std::size_t rows_, cols_;
  std::vector<double> w_;
  std::vector<double> gram_, lu_;
  std::vector<std::size_t> piv_;
  bool ok_ = true;
};

}  // namespace

std::optional<std::vector<double>> oracle_linear_reconstruction(
    const SpatioTemporalDataset& ds, const SyntheticMetadata& meta,
    std::size_t location, std::size_t target_channel) {
  const std::size_t d = ds.D;
  const std::size_t latent = meta.mixing.size() / d;
  if (location >= ds.N || target_channel >= d) {
    throw ShapeError("oracle: invalid location or channel");
  }
  std::vector<std::size_t> covariates;
  for (std::size_t dd = 0; dd < d; ++dd)
    if (dd != target_channel) covariates.push_back(dd);
  if (covariates.size() < latent) return std::nullopt;

  std::vector<double> w_cov(covariates.size() * latent);
  for (std::size_t r = 0; r < covariates.size(); ++r)
    for (std::size_t l = 0; l < latent; ++l)
      w_cov[r * latent + l] = meta.mixing[covariates[r] * latent + l];

  LeastSquares lsq(w_cov, covariates.size(), latent);
  if (!lsq.ok()) return std::nullopt;

  std::vector<double> series(ds.T, 0.0);
  std::vector<double> x(covariates.size());
  for (std::size_t t = 0; t < ds.T; ++t) {
    for (std::size_t r = 0; r < covariates.size(); ++r)
      x[r] = ds.value_at(location, t, covariates[r]);
    const std::vector<double> z = lsq.solve(x);
    double pred = 0.0;
    for (std::size_t l = 0; l < latent; ++l)
      pred += meta.mixing[target_channel * latent + l] * z[l];
    series[t] = pred;
  }
  return series;
}

PredictionSet oracle_predictions(const SpatioTemporalDataset& ds,
                                 const SyntheticMetadata& meta,
                                 const ChannelSplit& split, SplitLabel label) {
  PredictionSet preds = PredictionSet::empty(ds.N, ds.T, ds.D);
  for (std::size_t n = 0; n < ds.N; ++n) {
    for (std::size_t d = 0; d < ds.D; ++d) {
      if (split.label(n, d) != label) continue;
      auto series = oracle_linear_reconstruction(ds, meta, n, d);
      if (!series) continue;
      for (std::size_t t = 0; t < ds.T; ++t) {
        const std::size_t i = preds.offset(n, t, d);
        preds.median[i] = (*series)[t];
        preds.validity[i] = 1;
      }
    }
  }
  return preds;
}

}  // namespace ggnet
