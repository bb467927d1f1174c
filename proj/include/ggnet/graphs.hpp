#pragma once

#include <array>
#include <string>
#include <vector>

#include "ggnet/tensor.hpp"

namespace ggnet {

enum class Activation { Elu, Tanh, Sigmoid, Identity };

Tensor apply_activation(const Tensor& x, Activation act);

/// One-hidden-layer perceptron: act(x W1 + b1) W2 + b2.
struct Mlp {
  Tensor w1, b1, w2, b2;
  Activation act = Activation::Elu;

  static Mlp create(std::size_t in, std::size_t hidden, std::size_t out,
                    Activation act, Rng& rng);
  /// x: [R, in] -> [R, out]
  Tensor apply(const Tensor& x) const;
  std::vector<Tensor*> leaves();
  std::vector<const Tensor*> leaves() const;
};

/// Centered uniform init with 1/sqrt(fan_in) scale.
Tensor init_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng);

enum class AdjacencyKind { LearnedDense, GeometricSparse };

/// Square nonnegative edge-weight matrix. Learned-dense matrices are
/// row-stochastic; geometric ones are symmetric with entries in [0,1].
struct AdjacencyMatrix {
  Tensor weights;
  AdjacencyKind kind = AdjacencyKind::LearnedDense;
};

/// Inter-location adjacency: row softmax of MLP1(E_G) MLP2(E_G)^T.
/// Differentiable w.r.t. the embedding table and both MLPs.
AdjacencyMatrix build_inter_adjacency(const Tensor& e_g, const Mlp& mlp1,
                                      const Mlp& mlp2);

/// Intra-location adjacency: row softmax of the free score matrix.
AdjacencyMatrix build_intra_adjacency(const Tensor& phi);

/// Great-circle distance in km on a sphere of radius 6371.0088 km.
double haversine(const std::array<double, 2>& p, const std::array<double, 2>& q);

/// All-pairs haversine distances, [N*N] row-major.
std::vector<double> pairwise_distances(const std::vector<std::array<double, 2>>& coords);

/// Thresholded Gaussian kernel: w_ij = exp(-dist^2/sigma^2) for dist < delta,
/// else 0, with sigma^2 the variance of all pairwise distances.
AdjacencyMatrix gaussian_kernel_adjacency(const std::vector<std::array<double, 2>>& coords,
                                          double delta_km);

/// Smallest threshold (just above a realized pairwise distance) whose
/// thresholded graph reaches the target average degree.
double calibrate_delta(const std::vector<std::array<double, 2>>& coords,
                       double target_avg_degree);

/// Per location, the k nearest other locations by haversine distance,
/// ties broken toward the lower index.
std::vector<std::vector<std::size_t>> knn_neighbors(
    const std::vector<std::array<double, 2>>& coords, std::size_t k);

/// Write A_G, A_g and E_G as CSV files into `dir` for external analysis.
void export_graphs(const std::string& dir, const Tensor& a_g_inter,
                   const Tensor& a_g_intra, const Tensor& e_g_table,
                   const std::vector<std::string>& location_ids,
                   const std::vector<std::string>& channel_names);

}  // namespace ggnet
