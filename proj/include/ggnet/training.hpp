#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ggnet/dataset.hpp"
#include "ggnet/metrics.hpp"
#include "ggnet/model.hpp"

namespace ggnet {

struct TrainConfig {
  double lr = 0.001;
  double lr_min = 0.0;
  std::size_t max_epochs = 500;
  std::size_t patience = 30;
  std::size_t batch_size = 32;
  std::size_t t_w = 24;
  double p_whiten_channels = 0.3;
  double p_whiten_points = 0.05;
  double w_whiten = 5.0;
  std::array<double, 3> quantiles{0.159, 0.5, 0.841};
  double clip_norm = 5.0;  // global-norm gradient clip; 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch, weighted mean over entries
  std::vector<double> val_metric;  // MRE (%) on validation channels
  std::vector<double> lr;
  std::size_t best_epoch = 0;  // 1-based; 0 until a validation pass ran
  bool diverged = false;

  std::size_t epochs() const { return train_loss.size(); }
};

/// Asymmetric quantile ("pinball") loss for one scalar:
/// q(y-p) when y >= p, else (1-q)(p-y).
double pinball_loss(double pred, double target, double quantile);

/// Weighted sum of per-entry quantile losses before normalization.
/// preds is [N,Tw,D,Q]; eval_mask marks entries with ground truth; whitened
/// entries (hidden from the model this batch) weigh w_whiten, others 1.
struct WeightedLoss {
  Tensor value;        // weighted sum, differentiable
  double weight = 0;   // total weight
};
std::optional<WeightedLoss> weighted_reconstruction_terms(
    const Tensor& preds, const std::vector<double>& targets,
    const std::vector<std::uint8_t>& eval_mask,
    const std::vector<std::uint8_t>& whitened, double w_whiten,
    const std::array<double, 3>& quantiles, LossKind kind);

/// Mask-normalized reconstruction objective; empty when nothing is evaluated.
std::optional<Tensor> reconstruction_loss(const Tensor& preds,
                                          const std::vector<double>& targets,
                                          const std::vector<std::uint8_t>& eval_mask,
                                          const std::vector<std::uint8_t>& whitened,
                                          double w_whiten,
                                          const std::array<double, 3>& quantiles,
                                          LossKind kind = LossKind::ThreeQuantile);

/// Cosine annealing: lr_min + (lr_max-lr_min)(1+cos(pi epoch/max))/2.
double cosine_lr(std::size_t epoch, std::size_t max_epochs, double lr_max,
                 double lr_min);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;

  static AdamState init(const std::vector<Tensor*>& params);
};

/// Bias-corrected Adam update from the gradients currently stored on the
/// leaves. Throws NumericError on non-finite gradients.
void adam_step(const std::vector<Tensor*>& params, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Scale gradients so their global L2 norm is at most max_norm.
void clip_gradients(const std::vector<Tensor*>& params, double max_norm);

/// Model-input visibility: observed entries of train-labeled channels.
/// Validation/test channels are hidden from the model at all times.
std::vector<std::uint8_t> input_visibility(const SpatioTemporalDataset& ds,
                                           const ChannelSplit& split);

/// Reconstruct the full series by tiling windows in time order. Inputs are
/// restricted to train visibility; outputs are mapped back to original units.
PredictionSet predict_full(ImputationModel& model, const SpatioTemporalDataset& std_ds,
                           const Standardization& stats, const ChannelSplit& split,
                           std::size_t t_w);

/// Masked-channel training loop: per batch, sample a whitening mask, minimize
/// the weighted reconstruction loss on train channels, track validation MRE,
/// stop after `patience` epochs without improvement, and restore the
/// parameters of the best epoch.
TrainHistory train_model(ImputationModel& model, const SpatioTemporalDataset& std_ds,
                         const Standardization& stats, const ChannelSplit& split,
                         const TrainConfig& config);

void save_history_csv(const TrainHistory& history, const std::string& path);

}  // namespace ggnet
