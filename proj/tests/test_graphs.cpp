#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ggnet/graphs.hpp"

using namespace ggnet;

namespace {

Mlp zero_mlp(std::size_t in, std::size_t hidden, std::size_t out, Activation act) {
  Mlp m;
  m.w1 = Tensor::zeros({in, hidden}, true);
  m.b1 = Tensor::zeros({hidden}, true);
  m.w2 = Tensor::zeros({hidden, out}, true);
  m.b2 = Tensor::zeros({out}, true);
  m.act = act;
  return m;
}

}  // namespace

TEST_CASE("inter adjacency with zero parameters is uniform") {
  const std::size_t n = 5, he = 3;
  Tensor e = Tensor::zeros({n, he}, true);
  Mlp m1 = zero_mlp(he, 4, he, Activation::Tanh);
  Mlp m2 = zero_mlp(he, 4, he, Activation::Tanh);
  AdjacencyMatrix a = build_inter_adjacency(e, m1, m2);
  REQUIRE(a.weights.shape() == Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      CHECK(a.weights.at({i, j}) == doctest::Approx(1.0 / n).epsilon(1e-12));
}

TEST_CASE("inter adjacency rows sum to 1 for arbitrary parameters") {
  Rng rng(123);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 1 + rng.below(6);
    Tensor e = Tensor::uniform({n, 4}, -3, 3, rng, true);
    Mlp m1 = Mlp::create(4, 8, 4, Activation::Tanh, rng);
    Mlp m2 = Mlp::create(4, 8, 4, Activation::Tanh, rng);
    AdjacencyMatrix a = build_inter_adjacency(e, m1, m2);
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row += a.weights.at({i, j});
        CHECK(a.weights.at({i, j}) >= 0.0);
      }
      CHECK(std::abs(row - 1.0) < 1e-9);
    }
    if (n == 1) CHECK(a.weights.at({0, 0}) == 1.0);
  }
}

TEST_CASE("inter adjacency gradient passes grad_check") {
  Rng rng(9);
  Mlp m1 = Mlp::create(3, 5, 3, Activation::Tanh, rng);
  Mlp m2 = Mlp::create(3, 5, 3, Activation::Tanh, rng);
  Tensor w = Tensor::uniform({4, 4}, -1, 1, rng);
  auto loss = [&](const Tensor& e) {
    return sum(mul(build_inter_adjacency(e, m1, m2).weights, w));
  };
  CHECK(grad_check(loss, Tensor::uniform({4, 3}, -1, 1, rng), 1e-6) < 1e-5);
  // and w.r.t. one of the MLP weights
  Tensor e_fixed = Tensor::uniform({4, 3}, -1, 1, rng);
  auto loss_w = [&](const Tensor& w1) {
    Mlp probe = m1;
    probe.w1 = w1;
    return sum(mul(build_inter_adjacency(e_fixed, probe, m2).weights, w));
  };
  CHECK(grad_check(loss_w, m1.w1, 1e-6) < 1e-5);
}

TEST_CASE("intra adjacency from free scores") {
  Tensor phi0 = Tensor::zeros({3, 3}, true);
  AdjacencyMatrix uniform = build_intra_adjacency(phi0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(uniform.weights.at({i, j}) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // softmax of [10, 0, 0]: diagonal e^10/(e^10+2), off-diagonal 1/(e^10+2)
  std::vector<double> phi_data(9, 0.0);
  phi_data[0] = phi_data[4] = phi_data[8] = 10.0;
  AdjacencyMatrix peaked = build_intra_adjacency(Tensor::from_data({3, 3}, phi_data));
  const double diag = std::exp(10.0) / (std::exp(10.0) + 2.0);
  const double off = 1.0 / (std::exp(10.0) + 2.0);
  CHECK(diag == doctest::Approx(0.99990920).epsilon(1e-7));
  CHECK(off == doctest::Approx(4.5398e-5).epsilon(1e-3));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(peaked.weights.at({i, j}) ==
            doctest::Approx(i == j ? diag : off).epsilon(1e-10));

  Rng rng(5);
  AdjacencyMatrix random = build_intra_adjacency(Tensor::uniform({4, 4}, -2, 2, rng));
  for (std::size_t i = 0; i < 4; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 4; ++j) row += random.weights.at({i, j});
    CHECK(std::abs(row - 1.0) < 1e-9);
  }
}

TEST_CASE("haversine reference points") {
  CHECK(haversine({12.0, 44.0}, {12.0, 44.0}) == 0.0);
  CHECK(haversine({0.0, 0.0}, {0.0, 90.0}) == doctest::Approx(10007.543).epsilon(1e-5));
  CHECK(haversine({90.0, 0.0}, {-90.0, 0.0}) == doctest::Approx(20015.087).epsilon(1e-5));
}

TEST_CASE("gaussian kernel adjacency formula and threshold") {
  // three points on the equator: 0, ~111 km, ~333 km east
  std::vector<std::array<double, 2>> coords{{0, 0}, {0, 1}, {0, 3}};
  const std::vector<double> dist = pairwise_distances(coords);

  // independent sigma^2: variance of the six off-diagonal distances
  double sum = 0, sumsq = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) {
        sum += dist[i * 3 + j];
        sumsq += dist[i * 3 + j] * dist[i * 3 + j];
      }
  const double mean = sum / 6.0;
  const double sigma2 = sumsq / 6.0 - mean * mean;

  AdjacencyMatrix a = gaussian_kernel_adjacency(coords, 1e9);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.weights.at({i, i}) == 1.0);  // dist 0 -> weight 1
    for (std::size_t j = 0; j < 3; ++j) {
      const double d = dist[i * 3 + j];
      CHECK(a.weights.at({i, j}) ==
            doctest::Approx(std::exp(-d * d / sigma2)).epsilon(1e-12));
      CHECK(a.weights.at({i, j}) == a.weights.at({j, i}));
      // weight at exactly one sigma is 1/e
      if (std::abs(d - std::sqrt(sigma2)) < 1e-9) {
        CHECK(a.weights.at({i, j}) == doctest::Approx(std::exp(-1.0)));
      }
    }
  }

  // threshold zeroes distant pairs
  AdjacencyMatrix cut = gaussian_kernel_adjacency(coords, dist[1] + 1.0);
  CHECK(cut.weights.at({0, 1}) > 0.0);
  CHECK(cut.weights.at({0, 2}) == 0.0);
  CHECK(cut.weights.at({2, 0}) == 0.0);
}

TEST_CASE("gaussian kernel permutation equivariance") {
  std::vector<std::array<double, 2>> coords{{10, 20}, {-5, 40}, {33, -7}, {48, 2}};
  AdjacencyMatrix a = gaussian_kernel_adjacency(coords, 1e9);
  std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<std::array<double, 2>> permuted(4);
  for (std::size_t i = 0; i < 4; ++i) permuted[i] = coords[perm[i]];
  AdjacencyMatrix b = gaussian_kernel_adjacency(permuted, 1e9);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(b.weights.at({i, j}) ==
            doctest::Approx(a.weights.at({perm[i], perm[j]})).epsilon(1e-12));
}

TEST_CASE("calibrate_delta on collinear equispaced points") {
  // ~111 km spacing on the equator
  std::vector<std::array<double, 2>> coords{{0, 0}, {0, 1}, {0, 2}};
  const double unit = haversine(coords[0], coords[1]);
  const double delta = calibrate_delta(coords, 1.0);
  CHECK(delta > unit);
  CHECK(delta < haversine(coords[0], coords[2]));

  // full target degree requires a threshold beyond the largest distance
  const double full = calibrate_delta(coords, 2.0);
  CHECK(full > haversine(coords[0], coords[2]));

  CHECK_THROWS_AS(calibrate_delta(coords, 0.0), ConfigError);
  CHECK_THROWS_AS(calibrate_delta(coords, 5.0), ConfigError);
}

TEST_CASE("calibrate_delta is monotone in the target degree") {
  Rng rng(31);
  std::vector<std::array<double, 2>> coords;
  for (int i = 0; i < 12; ++i)
    coords.push_back({rng.uniform(-60, 60), rng.uniform(-170, 170)});
  double prev = 0.0;
  for (double target : {1.0, 2.0, 4.0, 7.0, 11.0}) {
    const double delta = calibrate_delta(coords, target);
    CHECK(delta >= prev);
    prev = delta;
  }
}

TEST_CASE("knn neighbor selection") {
  std::vector<std::array<double, 2>> two{{0, 0}, {0, 5}};
  auto nn = knn_neighbors(two, 1);
  CHECK(nn[0] == std::vector<std::size_t>{1});
  CHECK(nn[1] == std::vector<std::size_t>{0});

  // duplicated coordinate is the 1-nearest neighbor
  std::vector<std::array<double, 2>> dup{{0, 0}, {0, 0}, {0, 10}};
  auto nn_dup = knn_neighbors(dup, 1);
  CHECK(nn_dup[0] == std::vector<std::size_t>{1});
  CHECK(nn_dup[1] == std::vector<std::size_t>{0});

  // points on a line at 0, 1, 2, 10 degrees
  std::vector<std::array<double, 2>> line{{0, 0}, {0, 1}, {0, 2}, {0, 10}};
  auto nn_line = knn_neighbors(line, 2);
  CHECK(nn_line[0] == std::vector<std::size_t>{1, 2});

  CHECK_THROWS_AS(knn_neighbors(two, 2), ConfigError);
}

TEST_CASE("calibrated threshold for capitals matches the reported scale") {
  const char* assets = std::getenv("GGNET_ASSETS");
  if (!assets) return;  // only run when the asset directory is provided
  std::ifstream in(std::string(assets) + "/world_capitals.csv");
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::array<double, 2>> coords;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    const auto c3 = line.find(',', c2 + 1);
    coords.push_back({std::stod(line.substr(c2 + 1, c3 - c2 - 1)),
                      std::stod(line.substr(c3 + 1))});
  }
  CHECK(coords.size() == 235);
  const double delta = calibrate_delta(coords, 10.0);
  // reported threshold for the climatic network is 3500 km
  CHECK(delta > 875.0);
  CHECK(delta < 14000.0);
}

TEST_CASE("export_graphs writes csv artifacts") {
  Rng rng(8);
  Tensor ag = softmax_rows(Tensor::uniform({3, 3}, -1, 1, rng));
  Tensor agg = softmax_rows(Tensor::uniform({2, 2}, -1, 1, rng));
  Tensor eg = Tensor::uniform({3, 4}, -1, 1, rng);
  const std::string dir = "graph_export_test";
  export_graphs(dir, ag, agg, eg, {"a", "b", "c"}, {"x", "y"});
  for (const char* name :
       {"adjacency_inter.csv", "adjacency_intra.csv", "location_embeddings.csv"}) {
    std::ifstream f(dir + "/" + name);
    CHECK(f.good());
  }
  std::filesystem::remove_all(dir);
}
