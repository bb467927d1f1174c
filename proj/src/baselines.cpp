#include "ggnet/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "ggnet/graphs.hpp"

namespace ggnet {

// ----------------------------------------------------------------- KNN, mean

PredictionSet knn_impute(const SpatioTemporalDataset& ds, const ChannelSplit& split,
                         std::size_t k) {
  if (!ds.has_coords()) throw DataError("knn_impute requires coordinates");
  if (k == 0 || k >= ds.N) throw ConfigError("knn_impute requires 0 < k < N");

  const std::vector<double> dist = pairwise_distances(ds.coords);
  PredictionSet preds = PredictionSet::empty(ds.N, ds.T, ds.D);

  for (std::size_t n = 0; n < ds.N; ++n) {
    // all other locations ordered by distance, ties toward lower index
    std::vector<std::size_t> order;
    order.reserve(ds.N - 1);
    for (std::size_t j = 0; j < ds.N; ++j)
      if (j != n) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dist[n * ds.N + a] < dist[n * ds.N + b];
    });

    for (std::size_t d = 0; d < ds.D; ++d) {
      if (split.label(n, d) == SplitLabel::Train) continue;
      std::vector<std::size_t> donors;
      for (std::size_t j : order) {
        if (split.label(j, d) == SplitLabel::Train) donors.push_back(j);
        if (donors.size() == k) break;
      }
      if (donors.empty()) continue;  // flagged missing via validity
      for (std::size_t t = 0; t < ds.T; ++t) {
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t j : donors) {
          if (!ds.observed(j, t, d)) continue;
          acc += ds.value_at(j, t, d);
          ++count;
        }
        if (count == 0) continue;
        const std::size_t i = preds.offset(n, t, d);
        preds.median[i] = acc / static_cast<double>(count);
        preds.validity[i] = 1;
      }
    }
  }
  return preds;
}

std::size_t select_knn_k(const SpatioTemporalDataset& ds, const ChannelSplit& split,
                         const std::vector<std::size_t>& candidates) {
  if (candidates.empty()) throw ConfigError("select_knn_k: empty candidate set");
  const std::vector<std::uint8_t> val_mask = eval_mask_for(ds, split, SplitLabel::Val);
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_k = candidates.front();
  for (std::size_t k : candidates) {
    if (k >= ds.N) continue;
    try {
      MetricReport report = score_predictions(knn_impute(ds, split, k), ds, val_mask);
      const double metric = global_metric(report, MetricKind::Mre);
      if (metric < best) {
        best = metric;
        best_k = k;
      }
    } catch (const NumericError&) {
      continue;  // no valid predictions for this k
    }
  }
  return best_k;
}

PredictionSet mean_impute(const SpatioTemporalDataset& ds, const ChannelSplit& split) {
  PredictionSet preds = PredictionSet::empty(ds.N, ds.T, ds.D);
  std::vector<double> channel_mean(ds.D, 0.0);
  std::vector<std::size_t> channel_count(ds.D, 0);
  for (std::size_t n = 0; n < ds.N; ++n)
    for (std::size_t d = 0; d < ds.D; ++d) {
      if (split.label(n, d) != SplitLabel::Train) continue;
      for (std::size_t t = 0; t < ds.T; ++t) {
        if (!ds.observed(n, t, d)) continue;
        channel_mean[d] += ds.value_at(n, t, d);
        channel_count[d] += 1;
      }
    }
  for (std::size_t d = 0; d < ds.D; ++d) {
    if (channel_count[d]) channel_mean[d] /= static_cast<double>(channel_count[d]);
  }
  for (std::size_t n = 0; n < ds.N; ++n)
    for (std::size_t t = 0; t < ds.T; ++t)
      for (std::size_t d = 0; d < ds.D; ++d) {
        if (!channel_count[d]) continue;
        const std::size_t i = preds.offset(n, t, d);
        preds.median[i] = channel_mean[d];
        preds.validity[i] = 1;
      }
  return preds;
}

// ------------------------------------------------------------------ GRU cell

GruParams GruParams::create(std::size_t input, std::size_t hidden, Rng& rng) {
  GruParams p;
  p.w_update = init_weight(input, hidden, rng);
  p.u_update = init_weight(hidden, hidden, rng);
  p.b_update = Tensor::zeros({hidden}, true);
  p.w_reset = init_weight(input, hidden, rng);
  p.u_reset = init_weight(hidden, hidden, rng);
  p.b_reset = Tensor::zeros({hidden}, true);
  p.w_cand = init_weight(input, hidden, rng);
  p.u_cand = init_weight(hidden, hidden, rng);
  p.b_cand = Tensor::zeros({hidden}, true);
  return p;
}

std::vector<Tensor*> GruParams::leaves() {
  return {&w_update, &u_update, &b_update, &w_reset, &u_reset,
          &b_reset,  &w_cand,   &u_cand,   &b_cand};
}

Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& params) {
  Tensor z = sigmoid(add_rowvec(
      add(matmul(x, params.w_update), matmul(h_prev, params.u_update)),
      params.b_update));
  Tensor r = sigmoid(add_rowvec(
      add(matmul(x, params.w_reset), matmul(h_prev, params.u_reset)), params.b_reset));
  Tensor candidate = tanh_f(add_rowvec(
      add(matmul(x, params.w_cand), matmul(mul(r, h_prev), params.u_cand)),
      params.b_cand));
  // h' = (1-z) h + z c
  Tensor keep = add_scalar(scale(z, -1.0), 1.0);
  return add(mul(keep, h_prev), mul(z, candidate));
}

Tensor filler(const Tensor& x, const Tensor& x_hat, const Tensor& mask) {
  Tensor inv = add_scalar(scale(mask, -1.0), 1.0);
  return add(mul(mask, x), mul(inv, x_hat));
}

// ----------------------------------------------------------------- RNN model

std::vector<Tensor*> RnnModel::Direction::leaves() {
  std::vector<Tensor*> out = gru.leaves();
  out.push_back(&w_out);
  out.push_back(&b_out);
  return out;
}

RnnModel::RnnModel(RnnConfig config, std::size_t n_locations, std::size_t n_channels,
                   std::uint64_t seed)
    : config_(config), n_channels_(n_channels) {
  Rng rng(seed);
  const std::size_t h = config_.hidden;
  const bool embedded =
      config_.variant == RnnVariant::Embedded || config_.variant == RnnVariant::Graph;
  const std::size_t he = embedded ? config_.embedding : 0;
  const std::size_t gru_in = 2 * n_channels + he;  // x || m (|| e)

  auto make_direction = [&]() {
    Direction dir;
    dir.gru = GruParams::create(gru_in, h, rng);
    dir.w_out = init_weight(h, n_channels, rng);
    dir.b_out = Tensor::zeros({n_channels}, true);
    return dir;
  };
  forward_dir_ = make_direction();
  if (config_.variant != RnnVariant::Plain) backward_dir_ = make_direction();

  const std::size_t heads = loss_kind() == LossKind::ThreeQuantile ? 3 : 1;
  std::size_t readout_in = 2 * h + he;
  if (config_.variant == RnnVariant::Graph) readout_in += h;
  if (config_.variant != RnnVariant::Plain) {
    readout_ = Mlp::create(readout_in, h, n_channels * heads, Activation::Elu, rng);
  }
  if (embedded) {
    const double s = 0.5 / std::sqrt(static_cast<double>(config_.embedding));
    embeddings_ = Tensor::uniform({n_locations, config_.embedding}, -s, s, rng, true);
  }
  if (config_.variant == RnnVariant::Graph) {
    adjacency_src_ = Mlp::create(config_.embedding, h, config_.embedding,
                                 Activation::Tanh, rng);
    adjacency_dst_ = Mlp::create(config_.embedding, h, config_.embedding,
                                 Activation::Tanh, rng);
    graph_.weight = init_weight(2 * h, h, rng);
    graph_.weight_skip = init_weight(2 * h, h, rng);
    graph_.bias = Tensor::zeros({h}, true);
  }
}

std::string RnnModel::kind_name() const {
  switch (config_.variant) {
    case RnnVariant::Plain: return "rnn";
    case RnnVariant::Bidirectional: return "rnn_bid";
    case RnnVariant::Embedded: return "rnn_emb";
    case RnnVariant::Graph: return "rnn_g";
  }
  return "rnn";
}

std::vector<Tensor*> RnnModel::leaves() {
  std::vector<Tensor*> out = forward_dir_.leaves();
  if (config_.variant != RnnVariant::Plain) {
    for (Tensor* t : backward_dir_.leaves()) out.push_back(t);
    for (Tensor* t : readout_.leaves()) out.push_back(t);
  }
  if (embeddings_.defined()) out.push_back(&embeddings_);
  if (config_.variant == RnnVariant::Graph) {
    for (Tensor* t : adjacency_src_.leaves()) out.push_back(t);
    for (Tensor* t : adjacency_dst_.leaves()) out.push_back(t);
    out.push_back(&graph_.weight);
    out.push_back(&graph_.weight_skip);
    out.push_back(&graph_.bias);
  }
  return out;
}

std::vector<Tensor> RnnModel::run_direction(const Direction& dir,
                                            const std::vector<Tensor>& x_steps,
                                            const std::vector<Tensor>& m_steps,
                                            const Tensor& emb, bool reversed,
                                            std::vector<Tensor>* prefill_out) {
  const std::size_t t_w = x_steps.size();
  const std::size_t batch = x_steps[0].dim(0);
  std::vector<Tensor> states(t_w);
  Tensor h = Tensor::zeros({batch, config_.hidden});
  for (std::size_t step = 0; step < t_w; ++step) {
    const std::size_t t = reversed ? t_w - 1 - step : step;
    // linear readout from the running state, then fill unobserved entries
    Tensor x_hat = add_rowvec(matmul(h, dir.w_out), dir.b_out);
    Tensor x_filled = filler(x_steps[t], x_hat, m_steps[t]);
    if (prefill_out) (*prefill_out)[t] = x_hat;
    std::vector<Tensor> parts{x_filled, m_steps[t]};
    if (emb.defined()) parts.push_back(emb);
    h = gru_cell(concat(parts, 1), h, dir.gru);
    states[t] = h;
  }
  return states;
}

Tensor RnnModel::forward(const std::vector<double>& x,
                         const std::vector<std::uint8_t>& input_mask, std::size_t n,
                         std::size_t t_w, std::size_t d) {
  if (d != n_channels_) throw ShapeError("rnn forward: channel count mismatch");
  if (x.size() != n * t_w * d || input_mask.size() != x.size()) {
    throw ShapeError("rnn forward: window size mismatch");
  }

  // per-step constants [N, D]; inputs are silenced at masked entries
  std::vector<Tensor> x_steps(t_w), m_steps(t_w);
  for (std::size_t t = 0; t < t_w; ++t) {
    std::vector<double> xv(n * d), mv(n * d);
    for (std::size_t nn = 0; nn < n; ++nn)
      for (std::size_t dd = 0; dd < d; ++dd) {
        const std::size_t i = (nn * t_w + t) * d + dd;
        mv[nn * d + dd] = input_mask[i] ? 1.0 : 0.0;
        xv[nn * d + dd] = input_mask[i] ? x[i] : 0.0;
      }
    x_steps[t] = Tensor::from_data({n, d}, std::move(xv));
    m_steps[t] = Tensor::from_data({n, d}, std::move(mv));
  }

  const std::size_t heads = loss_kind() == LossKind::ThreeQuantile ? 3 : 1;

  if (config_.variant == RnnVariant::Plain) {
    std::vector<Tensor> prefill(t_w);
    run_direction(forward_dir_, x_steps, m_steps, Tensor(), false, &prefill);
    std::vector<Tensor> out_steps;
    out_steps.reserve(t_w);
    for (std::size_t t = 0; t < t_w; ++t)
      out_steps.push_back(reshape(prefill[t], {n, 1, d, 1}));
    return concat(out_steps, 1);
  }

  std::vector<Tensor> fwd =
      run_direction(forward_dir_, x_steps, m_steps, embeddings_, false, nullptr);
  std::vector<Tensor> bwd =
      run_direction(backward_dir_, x_steps, m_steps, embeddings_, true, nullptr);

  Tensor adjacency;
  if (config_.variant == RnnVariant::Graph) {
    adjacency = build_inter_adjacency(embeddings_, adjacency_src_, adjacency_dst_).weights;
  }

  std::vector<Tensor> out_steps;
  out_steps.reserve(t_w);
  for (std::size_t t = 0; t < t_w; ++t) {
    std::vector<Tensor> parts{fwd[t], bwd[t]};
    if (config_.variant == RnnVariant::Graph) {
      Tensor joined = concat({fwd[t], bwd[t]}, 1);
      parts.push_back(graph_conv(joined, adjacency, Tensor(), graph_,
                                 Activation::Identity));
    }
    if (embeddings_.defined()) parts.push_back(embeddings_);
    Tensor out = readout_.apply(concat(parts, 1));  // [N, D*heads]
    out_steps.push_back(reshape(out, {n, 1, d, heads}));
  }
  return concat(out_steps, 1);
}

}  // namespace ggnet
