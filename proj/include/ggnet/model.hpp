#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ggnet/graphs.hpp"
#include "ggnet/tensor.hpp"

namespace ggnet {

enum class BlockKind : std::uint8_t { Temporal, InterGraph, IntraGraph };

/// Architecture hyperparameters. The block pattern uses the compact notation
/// "2(3T-G-g)": counts repeat the following element or parenthesised group,
/// T is a channel-wise temporal convolution layer, G a graph convolution over
/// locations, g a graph convolution over channels.
struct GgNetConfig {
  std::size_t hidden = 128;
  std::size_t loc_embedding = 16;   // per-location embedding width
  std::size_t chan_embedding = 8;   // per-channel embedding width
  std::vector<BlockKind> block_pattern = parse_pattern("2(3T-G-g)");
  std::size_t kernel_k = 3;
  std::vector<std::size_t> dilation_schedule{1, 2, 4};
  std::array<double, 3> quantiles{0.159, 0.5, 0.841};
  bool residual = true;
  Activation activation = Activation::Elu;

  void validate() const;
  static std::vector<BlockKind> parse_pattern(const std::string& text);
  static std::string pattern_string(const std::vector<BlockKind>& pattern);
};

struct TemporalLayerParams {
  std::vector<Tensor> kernels;  // one [k, F_in, H] filter bank per channel
  std::vector<Tensor> biases;   // one [H] per channel
};

struct GraphLayerParams {
  Tensor weight;       // [F_in, H], applied to the aggregated features
  Tensor weight_skip;  // [F_in, H], applied to the unaggregated input
  Tensor bias;         // [H]
};

struct BlockParams {
  BlockKind kind = BlockKind::Temporal;
  std::size_t dilation = 1;  // temporal layers only
  TemporalLayerParams temporal;
  GraphLayerParams graph;
};

/// All trainable state of the network, including the embedding tables and
/// the intra-location edge scores shared with the adjacency builders.
struct GgNetParams {
  Mlp encoder_value;      // scalar observation -> hidden
  Mlp encoder_embedding;  // concat(location, channel embedding) -> hidden
  std::vector<BlockParams> blocks;
  std::vector<Mlp> decoders;    // one per channel, hidden(+cond) -> 3 quantiles
  Tensor location_embeddings;   // [N, loc_embedding]
  Tensor channel_embeddings;    // [D, chan_embedding]
  Tensor channel_scores;        // [D, D] free parameters behind the intra graph
  Mlp adjacency_src, adjacency_dst;  // embedding transforms behind the inter graph

  static GgNetParams init(const GgNetConfig& config, std::size_t n_locations,
                          std::size_t n_channels, Rng& rng);
  std::vector<Tensor*> leaves();
  std::vector<std::pair<std::string, Tensor*>> named_leaves();
};

/// Graph convolution on a node-feature matrix: act(A.in.W + in.W_skip + b)
/// with in = concat(features, cond) when cond has columns.
Tensor graph_conv(const Tensor& features, const Tensor& adjacency,
                  const Tensor& cond, const GraphLayerParams& params,
                  Activation act);

/// Per-(location, step, channel) encodings from observations and embeddings;
/// masked entries depend on the embeddings only.
Tensor encode_inputs(const Tensor& x, const Tensor& mask_f,
                     const GgNetParams& params, std::size_t n, std::size_t t_w,
                     std::size_t d);

/// Full forward pass over one window: encoder, pattern blocks, per-channel
/// quantile readout. x/input_mask are flat [N*Tw*D]; the returned tensor is
/// [N, Tw, D, 3] with the median head at index 1.
Tensor ggnet_forward(const std::vector<double>& x,
                     const std::vector<std::uint8_t>& input_mask,
                     const GgNetParams& params, const GgNetConfig& config,
                     std::size_t n, std::size_t t_w, std::size_t d);

enum class LossKind { ThreeQuantile, MeanAbsolute };

/// Minimal trainable-model interface shared by GgNet and the RNN baselines.
class ImputationModel {
 public:
  virtual ~ImputationModel() = default;
  /// Returns [N, Tw, D, Q] predictions; Q = 3 quantile heads or 1 point head.
  virtual Tensor forward(const std::vector<double>& x,
                         const std::vector<std::uint8_t>& input_mask,
                         std::size_t n, std::size_t t_w, std::size_t d) = 0;
  virtual std::vector<Tensor*> leaves() = 0;
  virtual LossKind loss_kind() const = 0;
  virtual std::string kind_name() const = 0;
};

class GgNetModel : public ImputationModel {
 public:
  GgNetModel(GgNetConfig config, std::size_t n_locations, std::size_t n_channels,
             std::uint64_t seed);
  GgNetModel(GgNetConfig config, GgNetParams params);

  Tensor forward(const std::vector<double>& x,
                 const std::vector<std::uint8_t>& input_mask, std::size_t n,
                 std::size_t t_w, std::size_t d) override;
  std::vector<Tensor*> leaves() override { return params_.leaves(); }
  LossKind loss_kind() const override { return LossKind::ThreeQuantile; }
  std::string kind_name() const override { return "ggnet"; }

  GgNetParams& params() { return params_; }
  const GgNetParams& params() const { return params_; }
  const GgNetConfig& config() const { return config_; }

 private:
  GgNetConfig config_;
  GgNetParams params_;
};

}  // namespace ggnet
