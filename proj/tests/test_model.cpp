#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ggnet/model.hpp"

using namespace ggnet;

namespace {

GgNetConfig tiny_config(const std::string& pattern = "2(3T-G-g)") {
  GgNetConfig cfg;
  cfg.hidden = 6;
  cfg.loc_embedding = 3;
  cfg.chan_embedding = 2;
  cfg.block_pattern = GgNetConfig::parse_pattern(pattern);
  cfg.kernel_k = 3;
  cfg.dilation_schedule = {1, 2, 4};
  return cfg;
}

struct Instance {
  std::size_t N, Tw, D;
  std::vector<double> x;
  std::vector<std::uint8_t> mask;
};

Instance random_instance(std::size_t n, std::size_t t_w, std::size_t d,
                         std::uint64_t seed, double p_missing = 0.25) {
  Instance inst{n, t_w, d, {}, {}};
  Rng rng(seed);
  inst.x.resize(n * t_w * d);
  inst.mask.resize(n * t_w * d);
  for (std::size_t i = 0; i < inst.x.size(); ++i) {
    inst.x[i] = rng.normal();
    inst.mask[i] = rng.bernoulli(p_missing) ? 0 : 1;
  }
  return inst;
}

}  // namespace

TEST_CASE("block pattern parsing") {
  using BK = BlockKind;
  auto p = GgNetConfig::parse_pattern("2(3T-G-g)");
  REQUIRE(p.size() == 10);
  const std::vector<BK> expect{BK::Temporal,   BK::Temporal, BK::Temporal,
                               BK::InterGraph, BK::IntraGraph};
  for (std::size_t i = 0; i < 10; ++i) CHECK(p[i] == expect[i % 5]);

  CHECK(GgNetConfig::parse_pattern("2(3T-g)").size() == 8);
  CHECK(GgNetConfig::parse_pattern("2(G-g)").size() == 4);

  auto robust = GgNetConfig::parse_pattern("4T - 2(G-g)");
  REQUIRE(robust.size() == 8);
  CHECK(robust[0] == BK::Temporal);
  CHECK(robust[4] == BK::InterGraph);
  CHECK(robust[5] == BK::IntraGraph);

  CHECK(GgNetConfig::pattern_string(p) == "3T-G-g-3T-G-g");
  CHECK(GgNetConfig::parse_pattern(GgNetConfig::pattern_string(p)) == p);

  CHECK_THROWS_AS(GgNetConfig::parse_pattern(""), ConfigError);
  CHECK_THROWS_AS(GgNetConfig::parse_pattern("2(3T"), ConfigError);
  CHECK_THROWS_AS(GgNetConfig::parse_pattern("3X"), ConfigError);
  CHECK_THROWS_AS(GgNetConfig::parse_pattern("0T"), ConfigError);
}

TEST_CASE("config validation") {
  GgNetConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  GgNetConfig bad = cfg;
  bad.kernel_k = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.quantiles = {0.5, 0.5, 0.9};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.dilation_schedule = {0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("encoder with zero-initialized MLPs broadcasts the embedding bias") {
  GgNetConfig cfg = tiny_config();
  Rng rng(1);
  GgNetParams params = GgNetParams::init(cfg, 2, 2, rng);
  for (Tensor* t : params.encoder_value.leaves())
    t->set_data(std::vector<double>(t->size(), 0.0));
  for (Tensor* t : params.encoder_embedding.leaves())
    t->set_data(std::vector<double>(t->size(), 0.0));
  std::vector<double> ramp(cfg.hidden);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = 0.1 * double(i + 1);
  params.encoder_embedding.b2.set_data(ramp);

  Instance inst = random_instance(2, 4, 2, 3);
  Tensor h = encode_inputs(Tensor::from_data({2, 4, 2}, inst.x),
                           Tensor::from_data({2, 4, 2}, std::vector<double>(16, 1.0)),
                           params, 2, 4, 2);
  REQUIRE(h.shape() == Shape{2, 4, 2, cfg.hidden});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t d = 0; d < 2; ++d)
        for (std::size_t j = 0; j < cfg.hidden; ++j)
          CHECK(h.at({n, t, d, j}) == doctest::Approx(ramp[j]).epsilon(1e-12));
}

TEST_CASE("encoder outputs at fully masked input are time constant") {
  GgNetConfig cfg = tiny_config();
  Rng rng(2);
  GgNetParams params = GgNetParams::init(cfg, 3, 2, rng);
  Instance inst = random_instance(3, 5, 2, 4);
  Tensor h = encode_inputs(Tensor::from_data({3, 5, 2}, inst.x),
                           Tensor::zeros({3, 5, 2}), params, 3, 5, 2);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t d = 0; d < 2; ++d)
      for (std::size_t t = 1; t < 5; ++t)
        for (std::size_t j = 0; j < cfg.hidden; ++j)
          CHECK(h.at({n, t, d, j}) == h.at({n, 0, d, j}));
}

TEST_CASE("graph_conv degenerate parameterizations") {
  const std::size_t v = 3, h = 3;
  std::vector<double> eye(v * h, 0.0);
  for (std::size_t i = 0; i < v; ++i) eye[i * h + i] = 1.0;

  GraphLayerParams params;
  params.weight = Tensor::from_data({h, h}, eye);
  params.weight_skip = Tensor::zeros({h, h});
  params.bias = Tensor::zeros({h});

  Rng rng(5);
  Tensor features = Tensor::uniform({v, h}, -1, 1, rng);
  Tensor identity = Tensor::from_data({v, v}, eye);

  SUBCASE("identity map") {
    Tensor out = graph_conv(features, identity, Tensor(), params, Activation::Identity);
    for (std::size_t i = 0; i < v * h; ++i)
      CHECK(out.data()[i] == doctest::Approx(features.data()[i]).epsilon(1e-12));
  }
  SUBCASE("zero adjacency leaves only the skip path") {
    GraphLayerParams skip = params;
    skip.weight_skip = Tensor::from_data({h, h}, eye);
    skip.bias = Tensor::from_data({h}, {0.5, 0.5, 0.5});
    Tensor out = graph_conv(features, Tensor::zeros({v, v}), Tensor(), skip,
                            Activation::Identity);
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t j = 0; j < h; ++j)
        CHECK(out.at({i, j}) ==
              doctest::Approx(features.at({i, j}) + 0.5).epsilon(1e-12));
  }
  SUBCASE("uniform adjacency broadcasts the column mean") {
    Tensor uniform = Tensor::full({v, v}, 1.0 / v);
    Tensor out = graph_conv(features, uniform, Tensor(), params, Activation::Identity);
    for (std::size_t j = 0; j < h; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < v; ++i) mean += features.at({i, j});
      mean /= v;
      for (std::size_t i = 0; i < v; ++i)
        CHECK(out.at({i, j}) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
  SUBCASE("non-square adjacency is rejected") {
    CHECK_THROWS_AS(graph_conv(features, Tensor::zeros({v, v + 1}), Tensor(),
                               params, Activation::Identity),
                    ShapeError);
  }
}

TEST_CASE("forward output shape for the paper pattern and ablations") {
  for (const char* pattern : {"2(3T-G-g)", "2(3T-g)", "2(3T-G)", "2(G-g)"}) {
    GgNetModel model(tiny_config(pattern), 3, 2, 11);
    Instance inst = random_instance(3, 8, 2, 7);
    Tensor out = model.forward(inst.x, inst.mask, 3, 8, 2);
    CHECK(out.shape() == Shape{3, 8, 2, 3});
    for (double v : out.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("single-location dataset still runs") {
  GgNetModel model(tiny_config(), 1, 3, 13);
  Instance inst = random_instance(1, 6, 3, 8);
  Tensor out = model.forward(inst.x, inst.mask, 1, 6, 3);
  CHECK(out.shape() == Shape{1, 6, 3, 3});
}

TEST_CASE("mask invariance is bit exact") {
  GgNetModel model(tiny_config(), 3, 2, 17);
  Instance inst = random_instance(3, 8, 2, 9, 0.5);
  Tensor base = model.forward(inst.x, inst.mask, 3, 8, 2);

  Rng rng(10);
  auto perturbed = inst.x;
  bool touched = false;
  for (std::size_t i = 0; i < perturbed.size(); ++i) {
    if (!inst.mask[i]) {
      perturbed[i] = rng.uniform(-1e6, 1e6);
      touched = true;
    }
  }
  REQUIRE(touched);
  Tensor out = model.forward(perturbed, inst.mask, 3, 8, 2);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(out.data()[i] == base.data()[i]);
}

TEST_CASE("permuting locations permutes predictions exactly") {
  const std::size_t n = 4, t_w = 6, d = 2;
  GgNetModel model(tiny_config(), n, d, 23);
  Instance inst = random_instance(n, t_w, d, 12, 0.3);
  Tensor base = model.forward(inst.x, inst.mask, n, t_w, d);

  const std::vector<std::size_t> perm{2, 0, 3, 1};  // new position i <- old perm[i]
  Instance permuted = inst;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < t_w; ++t)
      for (std::size_t dd = 0; dd < d; ++dd) {
        permuted.x[(i * t_w + t) * d + dd] = inst.x[(perm[i] * t_w + t) * d + dd];
        permuted.mask[(i * t_w + t) * d + dd] = inst.mask[(perm[i] * t_w + t) * d + dd];
      }
  }
  GgNetParams params2 = model.params();
  const Tensor& emb = model.params().location_embeddings;
  const std::size_t he = emb.dim(1);
  std::vector<double> emb_perm(n * he);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < he; ++j)
      emb_perm[i * he + j] = emb.data()[perm[i] * he + j];
  params2.location_embeddings = Tensor::from_data({n, he}, emb_perm, true);
  GgNetModel permuted_model(tiny_config(), std::move(params2));

  Tensor out = permuted_model.forward(permuted.x, permuted.mask, n, t_w, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < t_w; ++t)
      for (std::size_t dd = 0; dd < d; ++dd)
        for (std::size_t q = 0; q < 3; ++q)
          CHECK(out.at({i, t, dd, q}) == base.at({perm[i], t, dd, q}));
}

TEST_CASE("temporal stack receptive field matches the dilation schedule") {
  // dilations (1,2,4) with k=3 reach +-7 steps
  GgNetModel model(tiny_config("3T"), 1, 1, 29);
  const std::size_t t_w = 24;
  Instance inst{1, t_w, 1, std::vector<double>(t_w, 0.0),
                std::vector<std::uint8_t>(t_w, 1)};
  Tensor base = model.forward(inst.x, inst.mask, 1, t_w, 1);

  auto probe = [&](std::size_t t_hit) {
    auto x = inst.x;
    x[t_hit] = 5.0;
    return model.forward(x, inst.mask, 1, t_w, 1);
  };
  Tensor hit8 = probe(8);
  for (std::size_t q = 0; q < 3; ++q) CHECK(hit8.at({0, 0, 0, q}) == base.at({0, 0, 0, q}));
  Tensor hit7 = probe(7);
  bool changed = false;
  for (std::size_t q = 0; q < 3; ++q)
    changed = changed || hit7.at({0, 0, 0, q}) != base.at({0, 0, 0, q});
  CHECK(changed);
}

TEST_CASE("channel representations stay independent without g blocks") {
  GgNetModel model(tiny_config("2(3T-G)"), 3, 2, 31);
  Instance inst = random_instance(3, 8, 2, 13, 0.0);
  Tensor base = model.forward(inst.x, inst.mask, 3, 8, 2);

  auto x2 = inst.x;
  for (std::size_t i = 1; i < x2.size(); i += 2) x2[i] += 3.0;  // perturb channel 1
  Tensor out = model.forward(x2, inst.mask, 3, 8, 2);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t q = 0; q < 3; ++q)
        CHECK(out.at({n, t, 0, q}) == base.at({n, t, 0, q}));

  // with a g block, channel 0 becomes sensitive to channel 1
  GgNetModel mixed(tiny_config("3T-g"), 3, 2, 31);
  Tensor mbase = mixed.forward(inst.x, inst.mask, 3, 8, 2);
  Tensor mout = mixed.forward(x2, inst.mask, 3, 8, 2);
  bool changed = false;
  for (std::size_t i = 0; i < mbase.size(); i += 6)
    changed = changed || mbase.data()[i] != mout.data()[i];
  CHECK(changed);
}

TEST_CASE("forward gradients flow into every parameter group") {
  GgNetConfig cfg = tiny_config("1(1T-G-g)");
  cfg.dilation_schedule = {1};
  GgNetModel model(cfg, 2, 2, 37);
  Instance inst = random_instance(2, 4, 2, 14, 0.2);

  auto loss_with = [&](GgNetParams& params) {
    return sum(ggnet_forward(inst.x, inst.mask, params, cfg, 2, 4, 2));
  };

  // grad check a representative tensor from each group
  GgNetParams& p = model.params();
  auto check_param = [&](Tensor& target) {
    auto f = [&](const Tensor& probe) {
      Tensor saved = target;
      target = probe;
      Tensor loss = loss_with(p);
      target = saved;
      return loss;
    };
    return grad_check(f, target.detached(), 1e-6);
  };

  CHECK(check_param(p.location_embeddings) < 1e-5);
  CHECK(check_param(p.channel_scores) < 1e-5);
  CHECK(check_param(p.blocks[0].temporal.kernels[0]) < 1e-5);
  CHECK(check_param(p.blocks[1].graph.weight) < 1e-5);
  CHECK(check_param(p.decoders[1].w1) < 1e-5);
  CHECK(check_param(p.adjacency_src.w1) < 1e-5);
  CHECK(check_param(p.encoder_value.w2) < 1e-5);
}
