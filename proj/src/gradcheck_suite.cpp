#include "ggnet/gradcheck_suite.hpp"

#include <algorithm>

#include "ggnet/baselines.hpp"
#include "ggnet/training.hpp"

namespace ggnet {

namespace {

constexpr double kEps = 1e-6;

Tensor random_tensor(const Shape& shape, Rng& rng) {
  std::vector<double> data(shape_size(shape));
  for (double& x : data) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data(shape, std::move(data));
}

double check_param(Tensor& target, const std::function<Tensor()>& loss) {
  auto f = [&](const Tensor& probe) {
    Tensor saved = target;
    target = probe;
    Tensor value = loss();
    target = saved;
    return value;
  };
  return grad_check(f, target.detached(), kEps);
}

void primitives(std::vector<GradCheckResult>& out, Rng& rng) {
  auto add_check = [&](const std::string& name, double err) {
    out.push_back({"primitive/" + name, err});
  };
  Tensor b = random_tensor({3, 4}, rng);
  Tensor w34 = random_tensor({3, 4}, rng);
  add_check("add_mul_sub",
            grad_check([&](const Tensor& a) { return sum(mul(add(a, b), sub(a, b))); },
                       random_tensor({3, 4}, rng), kEps));
  Tensor m43 = random_tensor({4, 3}, rng);
  add_check("matmul",
            grad_check([&](const Tensor& a) { return sum(matmul(a, m43)); },
                       random_tensor({3, 4}, rng), kEps));
  Tensor agg_w = random_tensor({4, 3}, rng);
  add_check("aggregate_nodes",
            grad_check(
                [&](const Tensor& a) {
                  return sum(mul(aggregate_nodes(a, m43), agg_w));
                },
                random_tensor({4, 4}, rng), kEps));
  add_check("elu", grad_check([&](const Tensor& a) { return sum(mul(elu(a), a)); },
                              random_tensor({3, 4}, rng), kEps));
  add_check("tanh", grad_check([&](const Tensor& a) { return sum(mul(tanh_f(a), a)); },
                               random_tensor({3, 4}, rng), kEps));
  add_check("sigmoid",
            grad_check([&](const Tensor& a) { return sum(mul(sigmoid(a), a)); },
                       random_tensor({3, 4}, rng), kEps));
  add_check("softmax_rows",
            grad_check([&](const Tensor& a) { return sum(mul(softmax_rows(a), w34)); },
                       random_tensor({3, 4}, rng), kEps));
  Tensor kern = random_tensor({3, 2, 3}, rng);
  add_check("conv1d_centered",
            grad_check(
                [&](const Tensor& in) { return sum(conv1d_centered(in, kern, 2)); },
                random_tensor({2, 6, 2}, rng), kEps));
  Tensor in_c = random_tensor({2, 6, 2}, rng);
  add_check("conv1d_kernel",
            grad_check(
                [&](const Tensor& k) { return sum(conv1d_centered(in_c, k, 2)); },
                random_tensor({3, 2, 3}, rng), kEps));
  std::vector<std::size_t> idx{0, 2, 2, 1};
  Tensor w44 = random_tensor({4, 4}, rng);
  add_check("gather_scatter",
            grad_check(
                [&](const Tensor& a) {
                  return sum(mul(index_select(a, 0, idx), w44));
                },
                random_tensor({3, 4}, rng), kEps));
  Tensor c2 = random_tensor({3, 2}, rng);
  Tensor w36 = random_tensor({3, 6}, rng);
  add_check("concat",
            grad_check(
                [&](const Tensor& a) { return sum(mul(concat({a, c2}, 1), w36)); },
                random_tensor({3, 4}, rng), kEps));
  add_check("reduce_sum", grad_check([&](const Tensor& a) { return sum(a); },
                                     random_tensor({3, 4}, rng), kEps));
}

void gru(std::vector<GradCheckResult>& out, Rng& rng) {
  GruParams params = GruParams::create(3, 3, rng);
  Tensor x = random_tensor({2, 3}, rng);
  Tensor h = random_tensor({2, 3}, rng);
  double worst = 0.0;
  for (Tensor* leaf : params.leaves()) {
    worst = std::max(worst, check_param(*leaf, [&]() {
      Tensor next = gru_cell(x, h, params);
      return sum(mul(next, next));
    }));
  }
  worst = std::max(worst, grad_check([&](const Tensor& probe) {
                     return sum(gru_cell(probe, h, params));
                   }, x, kEps));
  out.push_back({"gru_cell", worst});
}

void adjacencies(std::vector<GradCheckResult>& out, Rng& rng) {
  Mlp m1 = Mlp::create(3, 5, 3, Activation::Tanh, rng);
  Mlp m2 = Mlp::create(3, 5, 3, Activation::Tanh, rng);
  Tensor score_w = random_tensor({4, 4}, rng);
  Tensor emb = random_tensor({4, 3}, rng);

  double worst = grad_check(
      [&](const Tensor& e) {
        return sum(mul(build_inter_adjacency(e, m1, m2).weights, score_w));
      },
      emb, kEps);
  for (Tensor* leaf : m1.leaves()) {
    worst = std::max(worst, check_param(*leaf, [&]() {
      Tensor e = Tensor::from_data(emb.shape(), emb.data(), true);
      return sum(mul(build_inter_adjacency(e, m1, m2).weights, score_w));
    }));
  }
  out.push_back({"inter_adjacency", worst});

  out.push_back({"intra_adjacency",
                 grad_check(
                     [&](const Tensor& phi) {
                       return sum(mul(build_intra_adjacency(phi).weights, score_w));
                     },
                     random_tensor({4, 4}, rng), kEps)});
}

// full training loss on a 3-location, 8-step, 2-channel instance; every
// parameter tensor probed coordinate by coordinate
void full_ggnet(std::vector<GradCheckResult>& out, Rng& rng) {
  GgNetConfig config;
  config.hidden = 6;
  config.loc_embedding = 3;
  config.chan_embedding = 2;
  config.block_pattern = GgNetConfig::parse_pattern("2(3T-G-g)");
  config.dilation_schedule = {1, 2, 4};

  const std::size_t n = 3, t_w = 8, d = 2;
  std::vector<double> x(n * t_w * d);
  std::vector<std::uint8_t> mask(x.size()), eval(x.size()), whitened(x.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    mask[i] = rng.bernoulli(0.75) ? 1 : 0;
    eval[i] = 1;
    whitened[i] = mask[i] ? 0 : 1;
  }

  GgNetModel model(config, n, d, rng.raw());
  auto loss = [&]() {
    Tensor preds = model.forward(x, mask, n, t_w, d);
    auto value = reconstruction_loss(preds, x, eval, whitened, 5.0, config.quantiles);
    return *value;
  };

  double worst = 0.0;
  std::string worst_name = "-";
  for (auto& [name, tensor] : model.params().named_leaves()) {
    const double err = check_param(*tensor, loss);
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  }
  out.push_back({"ggnet_full_loss(worst=" + worst_name + ")", worst});
}

void rnn_variants(std::vector<GradCheckResult>& out, Rng& rng) {
  const std::size_t n = 2, t_w = 6, d = 2;
  std::vector<double> x(n * t_w * d);
  std::vector<std::uint8_t> mask(x.size()), eval(x.size(), 1), whitened(x.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    mask[i] = rng.bernoulli(0.7) ? 1 : 0;
    whitened[i] = mask[i] ? 0 : 1;
  }

  const std::array<double, 3> quantiles{0.159, 0.5, 0.841};
  for (RnnVariant variant : {RnnVariant::Plain, RnnVariant::Bidirectional,
                             RnnVariant::Embedded, RnnVariant::Graph}) {
    RnnConfig config;
    config.variant = variant;
    config.hidden = 4;
    config.embedding = 3;
    RnnModel model(config, n, d, rng.raw());
    auto loss = [&]() {
      Tensor preds = model.forward(x, mask, n, t_w, d);
      return *reconstruction_loss(preds, x, eval, whitened, 5.0, quantiles,
                                  model.loss_kind());
    };
    double worst = 0.0;
    for (Tensor* leaf : model.leaves()) {
      worst = std::max(worst, check_param(*leaf, loss));
    }
    out.push_back({"rnn_full_loss/" + model.kind_name(), worst});
  }
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite() {
  std::vector<GradCheckResult> out;
  Rng rng(20240817);
  primitives(out, rng);
  gru(out, rng);
  adjacencies(out, rng);
  full_ggnet(out, rng);
  rnn_variants(out, rng);
  return out;
}

double gradient_suite_worst(const std::vector<GradCheckResult>& results) {
  double worst = 0.0;
  for (const auto& r : results) worst = std::max(worst, r.max_rel_error);
  return worst;
}

}  // namespace ggnet
