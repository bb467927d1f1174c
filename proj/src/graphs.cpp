#include "ggnet/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "ggnet/errors.hpp"

namespace ggnet {

namespace {
constexpr double kEarthRadiusKm = 6371.0088;
constexpr double kDegToRad = M_PI / 180.0;
}  // namespace

Tensor apply_activation(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::Elu: return elu(x);
    case Activation::Tanh: return tanh_f(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Identity: return x;
  }
  throw ConfigError("unknown activation");
}

Tensor init_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  return Tensor::uniform({fan_in, fan_out}, -s, s, rng, true);
}

Mlp Mlp::create(std::size_t in, std::size_t hidden, std::size_t out, Activation act,
                Rng& rng) {
  Mlp mlp;
  mlp.w1 = init_weight(in, hidden, rng);
  mlp.b1 = Tensor::zeros({hidden}, true);
  mlp.w2 = init_weight(hidden, out, rng);
  mlp.b2 = Tensor::zeros({out}, true);
  mlp.act = act;
  return mlp;
}

Tensor Mlp::apply(const Tensor& x) const {
  Tensor h = apply_activation(add_rowvec(matmul(x, w1), b1), act);
  return add_rowvec(matmul(h, w2), b2);
}

std::vector<Tensor*> Mlp::leaves() { return {&w1, &b1, &w2, &b2}; }
std::vector<const Tensor*> Mlp::leaves() const { return {&w1, &b1, &w2, &b2}; }

AdjacencyMatrix build_inter_adjacency(const Tensor& e_g, const Mlp& mlp1,
                                      const Mlp& mlp2) {
  Tensor left = mlp1.apply(e_g);
  Tensor right = mlp2.apply(e_g);
  Tensor scores = matmul(left, permute(right, {1, 0}));
  return {softmax_rows(scores), AdjacencyKind::LearnedDense};
}

AdjacencyMatrix build_intra_adjacency(const Tensor& phi) {
  return {softmax_rows(phi), AdjacencyKind::LearnedDense};
}

double haversine(const std::array<double, 2>& p, const std::array<double, 2>& q) {
  const double lat1 = p[0] * kDegToRad, lon1 = p[1] * kDegToRad;
  const double lat2 = q[0] * kDegToRad, lon2 = q[1] * kDegToRad;
  const double dlat = lat2 - lat1;
  const double dlon = lon2 - lon1;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1) * std::cos(lat2) * std::sin(dlon / 2) *
                       std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

std::vector<double> pairwise_distances(const std::vector<std::array<double, 2>>& coords) {
  const std::size_t n = coords.size();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dist = haversine(coords[i], coords[j]);
      d[i * n + j] = dist;
      d[j * n + i] = dist;
    }
  }
  return d;
}

AdjacencyMatrix gaussian_kernel_adjacency(const std::vector<std::array<double, 2>>& coords,
                                          double delta_km) {
  const std::size_t n = coords.size();
  if (n < 2) throw DataError("gaussian_kernel_adjacency requires at least 2 locations");
  const std::vector<double> dist = pairwise_distances(coords);

  // sigma^2 = variance of the off-diagonal pairwise distances
  double sum = 0.0, sumsq = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sum += dist[i * n + j];
      sumsq += dist[i * n + j] * dist[i * n + j];
      ++count;
    }
  }
  const double mean = sum / count;
  double sigma2 = sumsq / count - mean * mean;
  if (sigma2 <= 0.0) sigma2 = 1.0;  // co-located sensors

  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = dist[i * n + j];
      if (d < delta_km) w[i * n + j] = std::exp(-d * d / sigma2);
    }
  }
  return {Tensor::from_data({n, n}, std::move(w)), AdjacencyKind::GeometricSparse};
}

double calibrate_delta(const std::vector<std::array<double, 2>>& coords,
                       double target_avg_degree) {
  const std::size_t n = coords.size();
  if (n < 2) throw DataError("calibrate_delta requires at least 2 locations");
  if (target_avg_degree <= 0.0 || target_avg_degree > static_cast<double>(n - 1)) {
    throw ConfigError("target average degree must lie in (0, N-1]");
  }
  const std::vector<double> dmat = pairwise_distances(coords);
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dists.push_back(dmat[i * n + j]);
  std::sort(dists.begin(), dists.end());

  // Including the k smallest pair distances yields average degree 2k/N;
  // search the smallest k reaching the target.
  auto degree_with = [&](std::size_t k) {
    return 2.0 * static_cast<double>(k) / static_cast<double>(n);
  };
  std::size_t lo = 1, hi = dists.size();
  if (degree_with(hi) < target_avg_degree) {
    throw ConfigError("target average degree unreachable");
  }
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (degree_with(mid) >= target_avg_degree) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  const double d = dists[lo - 1];
  return d + std::max(1e-9, d * 1e-9);  // strict threshold: edge iff dist < delta
}

std::vector<std::vector<std::size_t>> knn_neighbors(
    const std::vector<std::array<double, 2>>& coords, std::size_t k) {
  const std::size_t n = coords.size();
  if (k >= n) throw ConfigError("knn_neighbors requires k < N");
  const std::vector<double> dist = pairwise_distances(coords);
  std::vector<std::vector<std::size_t>> result(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> order;
    order.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dist[i * n + a] < dist[i * n + b];
    });
    order.resize(k);
    result[i] = std::move(order);
  }
  return result;
}

namespace {

void write_matrix_csv(const std::filesystem::path& path, const Tensor& m,
                      const std::vector<std::string>& row_names,
                      const std::vector<std::string>& col_names) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "id";
  for (std::size_t j = 0; j < m.dim(1); ++j) {
    out << ",";
    if (j < col_names.size()) out << col_names[j];
  }
  out << "\n";
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    out << (i < row_names.size() ? row_names[i] : std::to_string(i));
    for (std::size_t j = 0; j < m.dim(1); ++j) out << "," << m.at({i, j});
    out << "\n";
  }
}

}  // namespace

void export_graphs(const std::string& dir, const Tensor& a_g_inter,
                   const Tensor& a_g_intra, const Tensor& e_g_table,
                   const std::vector<std::string>& location_ids,
                   const std::vector<std::string>& channel_names) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  write_matrix_csv(base / "adjacency_inter.csv", a_g_inter, location_ids, location_ids);
  write_matrix_csv(base / "adjacency_intra.csv", a_g_intra, channel_names, channel_names);
  std::vector<std::string> dims;
  for (std::size_t j = 0; j < e_g_table.dim(1); ++j) dims.push_back("e" + std::to_string(j));
  write_matrix_csv(base / "location_embeddings.csv", e_g_table, location_ids, dims);
}

}  // namespace ggnet
