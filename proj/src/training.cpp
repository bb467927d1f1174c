#include "ggnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace ggnet {

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (lr_min < 0.0 || lr_min > lr) throw ConfigError("lr_min must lie in [0, lr]");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (t_w == 0) throw ConfigError("window length must be positive");
  if (p_whiten_channels < 0.0 || p_whiten_channels > 1.0 || p_whiten_points < 0.0 ||
      p_whiten_points > 1.0) {
    throw ConfigError("whitening probabilities must lie in [0,1]");
  }
  if (w_whiten < 1.0) throw ConfigError("w_whiten must be >= 1");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
}

double pinball_loss(double pred, double target, double quantile) {
  if (quantile <= 0.0 || quantile >= 1.0) {
    throw ConfigError("pinball quantile must lie in (0,1)");
  }
  const double e = target - pred;
  return e >= 0.0 ? quantile * e : (quantile - 1.0) * e;
}

namespace {

// q*relu(y-p) + (1-q)*relu(p-y), elementwise over flat tensors
Tensor pinball_terms(const Tensor& pred_flat, const Tensor& target_flat, double q) {
  Tensor err = sub(target_flat, pred_flat);
  return add(scale(relu(err), q), scale(relu(scale(err, -1.0)), 1.0 - q));
}

}  // namespace

std::optional<WeightedLoss> weighted_reconstruction_terms(
    const Tensor& preds, const std::vector<double>& targets,
    const std::vector<std::uint8_t>& eval_mask,
    const std::vector<std::uint8_t>& whitened, double w_whiten,
    const std::array<double, 3>& quantiles, LossKind kind) {
  if (preds.ndim() != 4) throw ShapeError("loss: predictions must be [N,Tw,D,Q]");
  const std::size_t entries = preds.dim(0) * preds.dim(1) * preds.dim(2);
  const std::size_t heads = preds.dim(3);
  if (targets.size() != entries || eval_mask.size() != entries ||
      whitened.size() != entries) {
    throw ShapeError("loss: target/mask size mismatch");
  }

  std::vector<double> weights(entries, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < entries; ++i) {
    if (!eval_mask[i]) continue;
    weights[i] = whitened[i] ? w_whiten : 1.0;
    total += weights[i];
  }
  if (total <= 0.0) return std::nullopt;

  Tensor weight_t = Tensor::from_data({entries}, std::move(weights));
  Tensor target_t = Tensor::from_data({entries}, targets);

  Tensor per_entry;
  if (kind == LossKind::ThreeQuantile) {
    if (heads != 3) throw ShapeError("loss: three-quantile loss expects 3 heads");
    for (std::size_t qi = 0; qi < 3; ++qi) {
      Tensor head = reshape(index_select(preds, 3, {qi}), {entries});
      Tensor term = pinball_terms(head, target_t, quantiles[qi]);
      per_entry = qi == 0 ? term : add(per_entry, term);
    }
  } else {
    Tensor head = reshape(index_select(preds, 3, {heads > 1 ? 1u : 0u}), {entries});
    Tensor err = sub(target_t, head);
    per_entry = add(relu(err), relu(scale(err, -1.0)));  // |error|
  }
  return WeightedLoss{sum(mul(per_entry, weight_t)), total};
}

std::optional<Tensor> reconstruction_loss(const Tensor& preds,
                                          const std::vector<double>& targets,
                                          const std::vector<std::uint8_t>& eval_mask,
                                          const std::vector<std::uint8_t>& whitened,
                                          double w_whiten,
                                          const std::array<double, 3>& quantiles,
                                          LossKind kind) {
  auto terms =
      weighted_reconstruction_terms(preds, targets, eval_mask, whitened, w_whiten,
                                    quantiles, kind);
  if (!terms) return std::nullopt;
  return scale(terms->value, 1.0 / terms->weight);
}

double cosine_lr(std::size_t epoch, std::size_t max_epochs, double lr_max,
                 double lr_min) {
  if (max_epochs == 0 || epoch > max_epochs) {
    throw ConfigError("cosine_lr: epoch must lie in [0, max_epochs]");
  }
  const double phase = M_PI * static_cast<double>(epoch) / static_cast<double>(max_epochs);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

AdamState AdamState::init(const std::vector<Tensor*>& params) {
  AdamState state;
  for (const Tensor* p : params) {
    state.m.emplace_back(p->size(), 0.0);
    state.v.emplace_back(p->size(), 0.0);
  }
  return state;
}

void adam_step(const std::vector<Tensor*>& params, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  if (params.size() != state.m.size()) {
    throw ConfigError("adam_step: state does not match parameter list");
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (double g : params[pi]->grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam_step aborted: non-finite gradient in parameter " +
                           std::to_string(pi) + " (size " +
                           std::to_string(params[pi]->size()) + ")");
      }
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::vector<double>& g = params[pi]->grad();
    std::vector<double>& m = state.m[pi];
    std::vector<double>& v = state.v[pi];
    std::vector<double> delta(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      delta[i] = m_hat / (std::sqrt(v_hat) + eps);
    }
    params[pi]->apply_update(delta, -lr);
  }
}

void clip_gradients(const std::vector<Tensor*>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const Tensor* p : params)
    for (double g : p->grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double factor = max_norm / norm;
  for (Tensor* p : params) p->scale_grad(factor);
}

std::vector<std::uint8_t> input_visibility(const SpatioTemporalDataset& ds,
                                           const ChannelSplit& split) {
  std::vector<std::uint8_t> vis(ds.mask.size(), 0);
  for (std::size_t n = 0; n < ds.N; ++n)
    for (std::size_t d = 0; d < ds.D; ++d) {
      if (split.label(n, d) != SplitLabel::Train) continue;
      for (std::size_t t = 0; t < ds.T; ++t) {
        const std::size_t i = ds.offset(n, t, d);
        vis[i] = ds.mask[i];
      }
    }
  return vis;
}

namespace {

std::vector<std::uint8_t> window_slice(const std::vector<std::uint8_t>& full,
                                       const SpatioTemporalDataset& ds,
                                       std::size_t t0, std::size_t t_w,
                                       std::size_t real_steps) {
  std::vector<std::uint8_t> out(ds.N * t_w * ds.D, 0);
  for (std::size_t n = 0; n < ds.N; ++n)
    for (std::size_t t = 0; t < real_steps; ++t)
      for (std::size_t d = 0; d < ds.D; ++d)
        out[(n * t_w + t) * ds.D + d] = full[ds.offset(n, t0 + t, d)];
  return out;
}

struct ParamSnapshot {
  std::vector<std::vector<double>> values;

  static ParamSnapshot capture(const std::vector<Tensor*>& params) {
    ParamSnapshot s;
    for (const Tensor* p : params) s.values.push_back(p->data());
    return s;
  }
  void restore(const std::vector<Tensor*>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->set_data(values[i]);
  }
};

}  // namespace

PredictionSet predict_full(ImputationModel& model, const SpatioTemporalDataset& std_ds,
                           const Standardization& stats, const ChannelSplit& split,
                           std::size_t t_w) {
  NoGradGuard inference;
  const std::vector<std::uint8_t> visibility = input_visibility(std_ds, split);
  PredictionSet preds = PredictionSet::empty(std_ds.N, std_ds.T, std_ds.D);
  preds.lower.assign(preds.median.size(), 0.0);
  preds.upper.assign(preds.median.size(), 0.0);

  auto batches = window_batches(std_ds, std::min(t_w, std_ds.T), 1, 0, false);
  for (const WindowBatch& batch : batches) {
    for (const Window& win : batch.windows) {
      const std::size_t tw_eff = win.mask.size() / (std_ds.N * std_ds.D);
      auto input_mask = window_slice(visibility, std_ds, win.t0, tw_eff, win.real_steps);
      Tensor out = model.forward(win.values, input_mask, std_ds.N, tw_eff, std_ds.D);
      const std::size_t heads = out.dim(3);
      for (std::size_t n = 0; n < std_ds.N; ++n) {
        for (std::size_t t = 0; t < win.real_steps; ++t) {
          for (std::size_t d = 0; d < std_ds.D; ++d) {
            const std::size_t i = std_ds.offset(n, win.t0 + t, d);
            if (heads == 3) {
              preds.lower[i] = stats.to_original(out.at({n, t, d, 0}), d);
              preds.median[i] = stats.to_original(out.at({n, t, d, 1}), d);
              preds.upper[i] = stats.to_original(out.at({n, t, d, 2}), d);
            } else {
              const double v = stats.to_original(out.at({n, t, d, 0}), d);
              preds.lower[i] = preds.median[i] = preds.upper[i] = v;
            }
            preds.validity[i] = 1;
          }
        }
      }
    }
  }
  return preds;
}

TrainHistory train_model(ImputationModel& model, const SpatioTemporalDataset& std_ds,
                         const Standardization& stats, const ChannelSplit& split,
                         const TrainConfig& config) {
  config.validate();
  const std::vector<Tensor*> params = model.leaves();
  AdamState adam = AdamState::init(params);
  TrainHistory history;

  const std::vector<std::uint8_t> visibility = input_visibility(std_ds, split);
  const SpatioTemporalDataset truth = destandardize(std_ds, stats);
  const std::vector<std::uint8_t> val_mask = eval_mask_for(std_ds, split, SplitLabel::Val);
  const std::size_t t_w = std::min(config.t_w, std_ds.T);

  double best_metric = std::numeric_limits<double>::infinity();
  ParamSnapshot best_params = ParamSnapshot::capture(params);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch - 1, config.max_epochs, config.lr, config.lr_min);
    auto batches = window_batches(std_ds, t_w, config.batch_size,
                                  derive_seed(config.seed, epoch), true);

    double epoch_loss_sum = 0.0;
    double epoch_weight = 0.0;
    bool numeric_failure = false;

    for (std::size_t bi = 0; bi < batches.size() && !numeric_failure; ++bi) {
      const WindowBatch& batch = batches[bi];

      // Sample whitening masks for the whole batch first so every window can
      // be normalized by the shared total weight.
      std::vector<std::vector<std::uint8_t>> input_masks, whitened, evals;
      double batch_weight = 0.0;
      for (std::size_t wi = 0; wi < batch.windows.size(); ++wi) {
        const Window& win = batch.windows[wi];
        auto avail = window_slice(visibility, std_ds, win.t0, t_w, win.real_steps);
        WhiteningMask wm = sample_whitening_mask(
            avail, std_ds.N, t_w, std_ds.D, split, config.p_whiten_channels,
            config.p_whiten_points, derive_seed(config.seed, epoch, bi * 4096 + wi));
        std::vector<std::uint8_t> hidden(avail.size(), 0);
        for (std::size_t i = 0; i < avail.size(); ++i) {
          hidden[i] = avail[i] && !wm.combined[i];
          batch_weight += avail[i] ? (hidden[i] ? config.w_whiten : 1.0) : 0.0;
        }
        input_masks.push_back(std::move(wm.combined));
        whitened.push_back(std::move(hidden));
        evals.push_back(std::move(avail));
      }
      if (batch_weight <= 0.0) continue;  // nothing to reconstruct in this batch

      for (Tensor* p : params) p->zero_grad();
      for (std::size_t wi = 0; wi < batch.windows.size(); ++wi) {
        const Window& win = batch.windows[wi];
        Tensor preds =
            model.forward(win.values, input_masks[wi], std_ds.N, t_w, std_ds.D);
        auto terms = weighted_reconstruction_terms(
            preds, win.values, evals[wi], whitened[wi], config.w_whiten,
            config.quantiles, model.loss_kind());
        if (!terms) continue;
        Tensor scaled = scale(terms->value, 1.0 / batch_weight);
        if (!std::isfinite(scaled.value())) {
          numeric_failure = true;
          break;
        }
        backward(scaled);
        epoch_loss_sum += terms->value.value();
      }
      if (numeric_failure) break;
      epoch_weight += batch_weight;

      clip_gradients(params, config.clip_norm);
      try {
        adam_step(params, adam, lr);
      } catch (const NumericError&) {
        numeric_failure = true;
      }
    }

    if (numeric_failure) {
      history.diverged = true;
      break;  // the best snapshot so far is restored below
    }

    history.lr.push_back(lr);
    history.train_loss.push_back(epoch_weight > 0 ? epoch_loss_sum / epoch_weight : 0.0);

    PredictionSet preds = predict_full(model, std_ds, stats, split, t_w);
    double metric;
    try {
      MetricReport report = score_predictions(preds, truth, val_mask);
      metric = global_metric(report, MetricKind::Mre);
    } catch (const NumericError&) {
      // degenerate validation truth; fall back to MAE so training can proceed
      MetricReport report = score_predictions(preds, truth, val_mask);
      metric = global_metric(report, MetricKind::Mae);
    }
    history.val_metric.push_back(metric);

    if (metric < best_metric) {
      best_metric = metric;
      history.best_epoch = epoch;
      best_params = ParamSnapshot::capture(params);
    } else if (epoch - history.best_epoch >= config.patience) {
      break;
    }
  }

  best_params.restore(params);
  return history;
}

void save_history_csv(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out.precision(12);
  out << "epoch,train_loss,val_mre,lr\n";
  for (std::size_t e = 0; e < history.epochs(); ++e) {
    out << (e + 1) << ',' << history.train_loss[e] << ',' << history.val_metric[e]
        << ',' << history.lr[e] << '\n';
  }
}

}  // namespace ggnet
