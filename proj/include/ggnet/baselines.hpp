#pragma once

#include <cstdint>
#include <vector>

#include "ggnet/dataset.hpp"
#include "ggnet/metrics.hpp"
#include "ggnet/model.hpp"

namespace ggnet {

/// Geographic KNN: each non-train channel (n,d) is predicted at time t as the
/// mean over the k nearest locations whose channel d is train-labeled and
/// observed at t. Entries with no eligible neighbor stay invalid.
PredictionSet knn_impute(const SpatioTemporalDataset& ds, const ChannelSplit& split,
                         std::size_t k);

/// Pick k from the candidate set by validation MRE.
std::size_t select_knn_k(const SpatioTemporalDataset& ds, const ChannelSplit& split,
                         const std::vector<std::size_t>& candidates = {1, 2, 3, 5, 10});

/// Train-channel mean predictor (floor baseline).
PredictionSet mean_impute(const SpatioTemporalDataset& ds, const ChannelSplit& split);

// ------------------------------------------------------------- RNN baselines

enum class RnnVariant { Plain, Bidirectional, Embedded, Graph };

struct RnnConfig {
  RnnVariant variant = RnnVariant::Plain;
  std::size_t hidden = 64;
  std::size_t embedding = 16;  // used by Embedded and Graph
  std::array<double, 3> quantiles{0.159, 0.5, 0.841};
};

struct GruParams {
  Tensor w_update, u_update, b_update;
  Tensor w_reset, u_reset, b_reset;
  Tensor w_cand, u_cand, b_cand;

  static GruParams create(std::size_t input, std::size_t hidden, Rng& rng);
  std::vector<Tensor*> leaves();
};

/// One gated-recurrent-unit step on a batch: x [B,in], h_prev [B,h] -> [B,h].
Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& params);

/// Observed entries pass through, missing ones take the running prediction:
/// m*x + (1-m)*x_hat.
Tensor filler(const Tensor& x, const Tensor& x_hat, const Tensor& mask);

/// The recurrent baseline family. Plain iterates a linear readout, the
/// filler and a GRU update; Bidirectional adds a reversed pass and an MLP on
/// the joined states; Embedded concatenates per-location embeddings to the
/// inputs and readout; Graph adds a convolution over the learned
/// inter-location graph between the recurrent pass and the readout.
class RnnModel : public ImputationModel {
 public:
  RnnModel(RnnConfig config, std::size_t n_locations, std::size_t n_channels,
           std::uint64_t seed);

  Tensor forward(const std::vector<double>& x,
                 const std::vector<std::uint8_t>& input_mask, std::size_t n,
                 std::size_t t_w, std::size_t d) override;
  std::vector<Tensor*> leaves() override;
  LossKind loss_kind() const override {
    return config_.variant == RnnVariant::Plain ||
                   config_.variant == RnnVariant::Bidirectional
               ? LossKind::MeanAbsolute
               : LossKind::ThreeQuantile;
  }
  std::string kind_name() const override;

  const RnnConfig& config() const { return config_; }
  Tensor& location_embeddings() { return embeddings_; }

  struct Direction {
    GruParams gru;
    Tensor w_out, b_out;  // linear filler readout
    std::vector<Tensor*> leaves();
  };

 private:
  RnnConfig config_;
  std::size_t n_channels_;
  Direction forward_dir_, backward_dir_;
  Mlp readout_;          // joined-state readout (all but Plain)
  Tensor embeddings_;    // [N, embedding] (Embedded, Graph)
  Mlp adjacency_src_, adjacency_dst_;
  GraphLayerParams graph_;  // Graph variant

  // per-direction recurrent sweep; returns hidden states per step
  std::vector<Tensor> run_direction(const Direction& dir,
                                    const std::vector<Tensor>& x_steps,
                                    const std::vector<Tensor>& m_steps,
                                    const Tensor& emb, bool reversed,
                                    std::vector<Tensor>* prefill_out);
};

}  // namespace ggnet
