#include "ggnet/model.hpp"

#include <cctype>
#include <cmath>

#include "ggnet/errors.hpp"

namespace ggnet {

// ------------------------------------------------------------------- pattern

namespace {

void parse_sequence(const std::string& text, std::size_t& pos,
                    std::vector<BlockKind>& out, bool nested);

void parse_item(const std::string& text, std::size_t& pos,
                std::vector<BlockKind>& out) {
  std::size_t count = 1;
  if (std::isdigit(static_cast<unsigned char>(text[pos]))) {
    count = 0;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      count = count * 10 + static_cast<std::size_t>(text[pos] - '0');
      ++pos;
    }
    if (count == 0) throw ConfigError("block pattern: zero repeat count");
  }
  if (pos >= text.size()) throw ConfigError("block pattern: dangling count");
  std::vector<BlockKind> unit;
  if (text[pos] == '(') {
    ++pos;
    parse_sequence(text, pos, unit, true);
    if (pos >= text.size() || text[pos] != ')') {
      throw ConfigError("block pattern: unbalanced parenthesis");
    }
    ++pos;
  } else if (text[pos] == 'T') {
    unit.push_back(BlockKind::Temporal);
    ++pos;
  } else if (text[pos] == 'G') {
    unit.push_back(BlockKind::InterGraph);
    ++pos;
  } else if (text[pos] == 'g') {
    unit.push_back(BlockKind::IntraGraph);
    ++pos;
  } else {
    throw ConfigError(std::string("block pattern: unexpected character '") +
                      text[pos] + "'");
  }
  for (std::size_t i = 0; i < count; ++i)
    out.insert(out.end(), unit.begin(), unit.end());
}

void parse_sequence(const std::string& text, std::size_t& pos,
                    std::vector<BlockKind>& out, bool nested) {
  while (pos < text.size()) {
    parse_item(text, pos, out);
    if (pos < text.size() && text[pos] == '-') {
      ++pos;
      continue;
    }
    if (pos < text.size() && text[pos] == ')' && nested) return;
    if (pos < text.size() && text[pos] != ')') continue;  // allow "2(G-g)3T" style
    return;
  }
}

}  // namespace

std::vector<BlockKind> GgNetConfig::parse_pattern(const std::string& text) {
  std::string compact;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) compact.push_back(c);
  if (compact.empty()) throw ConfigError("block pattern: empty");
  std::size_t pos = 0;
  std::vector<BlockKind> out;
  parse_sequence(compact, pos, out, false);
  if (pos != compact.size()) throw ConfigError("block pattern: trailing input");
  if (out.empty()) throw ConfigError("block pattern: empty");
  return out;
}

std::string GgNetConfig::pattern_string(const std::vector<BlockKind>& pattern) {
  std::string out;
  std::size_t i = 0;
  while (i < pattern.size()) {
    if (!out.empty()) out += "-";
    if (pattern[i] == BlockKind::Temporal) {
      std::size_t run = 0;
      while (i < pattern.size() && pattern[i] == BlockKind::Temporal) {
        ++run;
        ++i;
      }
      if (run > 1) out += std::to_string(run);
      out += "T";
    } else {
      out += pattern[i] == BlockKind::InterGraph ? "G" : "g";
      ++i;
    }
  }
  return out;
}

void GgNetConfig::validate() const {
  if (hidden == 0 || loc_embedding == 0 || chan_embedding == 0) {
    throw ConfigError("hidden and embedding sizes must be positive");
  }
  if (block_pattern.empty()) throw ConfigError("block pattern must be nonempty");
  if (kernel_k % 2 == 0) throw ConfigError("temporal kernel length must be odd");
  if (dilation_schedule.empty()) throw ConfigError("dilation schedule must be nonempty");
  for (std::size_t d : dilation_schedule)
    if (d < 1) throw ConfigError("dilations must be >= 1");
  for (int i = 0; i < 3; ++i) {
    if (quantiles[i] <= 0.0 || quantiles[i] >= 1.0) {
      throw ConfigError("quantiles must lie in (0,1)");
    }
    if (i > 0 && quantiles[i] <= quantiles[i - 1]) {
      throw ConfigError("quantiles must be strictly increasing");
    }
  }
}

// -------------------------------------------------------------------- params

GgNetParams GgNetParams::init(const GgNetConfig& config, std::size_t n_locations,
                              std::size_t n_channels, Rng& rng) {
  config.validate();
  const std::size_t h = config.hidden;
  const std::size_t he_loc = config.loc_embedding;
  const std::size_t he_chan = config.chan_embedding;

  GgNetParams p;
  p.encoder_value = Mlp::create(1, h, h, config.activation, rng);
  p.encoder_embedding = Mlp::create(he_loc + he_chan, h, h, config.activation, rng);

  const std::size_t conv_in = h + 1 + he_loc;            // hidden + mask + location emb
  const std::size_t graph_in = h + 1 + he_loc + he_chan; // + channel emb

  std::size_t t_count = 0;
  for (BlockKind kind : config.block_pattern) {
    BlockParams block;
    block.kind = kind;
    if (kind == BlockKind::Temporal) {
      block.dilation = config.dilation_schedule[t_count % config.dilation_schedule.size()];
      ++t_count;
      for (std::size_t d = 0; d < n_channels; ++d) {
        const double s = 1.0 / std::sqrt(static_cast<double>(config.kernel_k * conv_in));
        block.temporal.kernels.push_back(
            Tensor::uniform({config.kernel_k, conv_in, h}, -s, s, rng, true));
        block.temporal.biases.push_back(Tensor::zeros({h}, true));
      }
    } else {
      block.graph.weight = init_weight(graph_in, h, rng);
      block.graph.weight_skip = init_weight(graph_in, h, rng);
      block.graph.bias = Tensor::zeros({h}, true);
    }
    p.blocks.push_back(std::move(block));
  }

  for (std::size_t d = 0; d < n_channels; ++d) {
    p.decoders.push_back(Mlp::create(graph_in, h, 3, config.activation, rng));
  }

  const double s_loc = 0.5 / std::sqrt(static_cast<double>(he_loc));
  const double s_chan = 0.5 / std::sqrt(static_cast<double>(he_chan));
  p.location_embeddings = Tensor::uniform({n_locations, he_loc}, -s_loc, s_loc, rng, true);
  p.channel_embeddings = Tensor::uniform({n_channels, he_chan}, -s_chan, s_chan, rng, true);
  p.channel_scores = Tensor::zeros({n_channels, n_channels}, true);
  p.adjacency_src = Mlp::create(he_loc, h, he_loc, Activation::Tanh, rng);
  p.adjacency_dst = Mlp::create(he_loc, h, he_loc, Activation::Tanh, rng);
  return p;
}

std::vector<Tensor*> GgNetParams::leaves() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_leaves()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> GgNetParams::named_leaves() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto add_mlp = [&out](const std::string& prefix, Mlp& mlp) {
    out.emplace_back(prefix + ".w1", &mlp.w1);
    out.emplace_back(prefix + ".b1", &mlp.b1);
    out.emplace_back(prefix + ".w2", &mlp.w2);
    out.emplace_back(prefix + ".b2", &mlp.b2);
  };
  add_mlp("encoder_value", encoder_value);
  add_mlp("encoder_embedding", encoder_embedding);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b);
    BlockParams& block = blocks[b];
    if (block.kind == BlockKind::Temporal) {
      for (std::size_t d = 0; d < block.temporal.kernels.size(); ++d) {
        out.emplace_back(prefix + ".kernel" + std::to_string(d),
                         &block.temporal.kernels[d]);
        out.emplace_back(prefix + ".bias" + std::to_string(d),
                         &block.temporal.biases[d]);
      }
    } else {
      out.emplace_back(prefix + ".weight", &block.graph.weight);
      out.emplace_back(prefix + ".weight_skip", &block.graph.weight_skip);
      out.emplace_back(prefix + ".bias", &block.graph.bias);
    }
  }
  for (std::size_t d = 0; d < decoders.size(); ++d) {
    add_mlp("decoder" + std::to_string(d), decoders[d]);
  }
  out.emplace_back("location_embeddings", &location_embeddings);
  out.emplace_back("channel_embeddings", &channel_embeddings);
  out.emplace_back("channel_scores", &channel_scores);
  add_mlp("adjacency_src", adjacency_src);
  add_mlp("adjacency_dst", adjacency_dst);
  return out;
}

// ------------------------------------------------------------------- forward

Tensor graph_conv(const Tensor& features, const Tensor& adjacency,
                  const Tensor& cond, const GraphLayerParams& params,
                  Activation act) {
  if (adjacency.ndim() != 2 || adjacency.dim(0) != adjacency.dim(1)) {
    throw ShapeError("graph_conv: adjacency must be square");
  }
  if (features.ndim() != 2 || features.dim(0) != adjacency.dim(0)) {
    throw ShapeError("graph_conv: feature rows must match adjacency size");
  }
  Tensor in = features;
  if (cond.defined() && cond.size() > 0) {
    if (cond.dim(0) != features.dim(0)) {
      throw ShapeError("graph_conv: cond rows must match feature rows");
    }
    in = concat({features, cond}, 1);
  }
  Tensor aggregated = aggregate_nodes(adjacency, in);
  Tensor out = add_rowvec(
      add(matmul(aggregated, params.weight), matmul(in, params.weight_skip)),
      params.bias);
  return apply_activation(out, act);
}

namespace {

// Index maps reused across the blocks of one forward pass.
struct ForwardContext {
  std::size_t N, Tw, D, H;
  Tensor mask3;                   // [N,Tw,D] constant
  Tensor mask4;                   // [N,Tw,D,1] constant
  std::vector<Tensor> mask_chan;  // per channel, [N,Tw,1] constant
  Tensor loc_rows_nt;             // [N,Tw,hG] embeddings per (n,t)
  Tensor cond4;                   // [N,Tw,D,1+hG+hg]
};

ForwardContext make_context(const std::vector<std::uint8_t>& input_mask,
                            const GgNetParams& params, const GgNetConfig& config,
                            std::size_t n, std::size_t t_w, std::size_t d) {
  ForwardContext ctx;
  ctx.N = n;
  ctx.Tw = t_w;
  ctx.D = d;
  ctx.H = config.hidden;

  std::vector<double> mask_data(input_mask.size());
  for (std::size_t i = 0; i < input_mask.size(); ++i)
    mask_data[i] = input_mask[i] ? 1.0 : 0.0;
  ctx.mask3 = Tensor::from_data({n, t_w, d}, mask_data);
  ctx.mask4 = Tensor::from_data({n, t_w, d, 1}, std::move(mask_data));

  for (std::size_t dd = 0; dd < d; ++dd) {
    std::vector<double> md(n * t_w);
    for (std::size_t nn = 0; nn < n; ++nn)
      for (std::size_t t = 0; t < t_w; ++t)
        md[nn * t_w + t] = input_mask[(nn * t_w + t) * d + dd] ? 1.0 : 0.0;
    ctx.mask_chan.push_back(Tensor::from_data({n, t_w, 1}, std::move(md)));
  }

  std::vector<std::size_t> n_of_nt(n * t_w);
  for (std::size_t nn = 0; nn < n; ++nn)
    for (std::size_t t = 0; t < t_w; ++t) n_of_nt[nn * t_w + t] = nn;
  ctx.loc_rows_nt = reshape(index_select(params.location_embeddings, 0, n_of_nt),
                            {n, t_w, config.loc_embedding});

  std::vector<std::size_t> n_of_row(n * t_w * d), d_of_row(n * t_w * d);
  for (std::size_t nn = 0; nn < n; ++nn)
    for (std::size_t t = 0; t < t_w; ++t)
      for (std::size_t dd = 0; dd < d; ++dd) {
        n_of_row[(nn * t_w + t) * d + dd] = nn;
        d_of_row[(nn * t_w + t) * d + dd] = dd;
      }
  Tensor loc4 = reshape(index_select(params.location_embeddings, 0, n_of_row),
                        {n, t_w, d, config.loc_embedding});
  Tensor chan4 = reshape(index_select(params.channel_embeddings, 0, d_of_row),
                         {n, t_w, d, config.chan_embedding});
  ctx.cond4 = concat({ctx.mask4, loc4, chan4}, 3);
  return ctx;
}

Tensor temporal_layer(const Tensor& h4, const ForwardContext& ctx,
                      const BlockParams& block, const GgNetConfig& config) {
  std::vector<Tensor> parts;
  parts.reserve(ctx.D);
  for (std::size_t dd = 0; dd < ctx.D; ++dd) {
    Tensor hd = reshape(index_select(h4, 2, {dd}), {ctx.N, ctx.Tw, ctx.H});
    Tensor in = concat({hd, ctx.mask_chan[dd], ctx.loc_rows_nt}, 2);
    Tensor conv = conv1d_centered(in, block.temporal.kernels[dd], block.dilation);
    Tensor out = apply_activation(add_rowvec(conv, block.temporal.biases[dd]),
                                  config.activation);
    if (config.residual) out = add(out, hd);
    parts.push_back(reshape(out, {ctx.N, ctx.Tw, 1, ctx.H}));
  }
  return concat(parts, 2);
}

Tensor graph_layer(const Tensor& h4, const ForwardContext& ctx,
                   const Tensor& adjacency, const GraphLayerParams& gp,
                   const GgNetConfig& config, bool over_locations) {
  Tensor in4 = concat({h4, ctx.cond4}, 3);
  const std::size_t f = in4.dim(3);
  const std::size_t rows = ctx.N * ctx.Tw * ctx.D;

  Tensor agg4;
  if (over_locations) {
    Tensor flat = reshape(in4, {ctx.N, ctx.Tw * ctx.D * f});
    agg4 = reshape(aggregate_nodes(adjacency, flat), {ctx.N, ctx.Tw, ctx.D, f});
  } else {
    Tensor by_chan = reshape(permute(in4, {2, 0, 1, 3}), {ctx.D, ctx.N * ctx.Tw * f});
    Tensor mixed = reshape(aggregate_nodes(adjacency, by_chan), {ctx.D, ctx.N, ctx.Tw, f});
    agg4 = permute(mixed, {1, 2, 0, 3});
  }

  Tensor flat_in = reshape(in4, {rows, f});
  Tensor flat_agg = reshape(agg4, {rows, f});
  Tensor out = add_rowvec(
      add(matmul(flat_agg, gp.weight), matmul(flat_in, gp.weight_skip)), gp.bias);
  out = apply_activation(out, config.activation);
  Tensor out4 = reshape(out, {ctx.N, ctx.Tw, ctx.D, ctx.H});
  return config.residual ? add(out4, h4) : out4;
}

Tensor readout(const Tensor& h4, const ForwardContext& ctx,
               const GgNetParams& params) {
  const std::size_t rows = ctx.N * ctx.Tw;
  Tensor loc_flat = reshape(ctx.loc_rows_nt, {rows, params.location_embeddings.dim(1)});
  std::vector<Tensor> parts;
  parts.reserve(ctx.D);
  for (std::size_t dd = 0; dd < ctx.D; ++dd) {
    Tensor hd = reshape(index_select(h4, 2, {dd}), {rows, ctx.H});
    Tensor md = reshape(ctx.mask_chan[dd], {rows, 1});
    Tensor ed = index_select(params.channel_embeddings, 0,
                             std::vector<std::size_t>(rows, dd));
    Tensor in = concat({hd, md, loc_flat, ed}, 1);
    parts.push_back(reshape(params.decoders[dd].apply(in), {ctx.N, ctx.Tw, 1, 3}));
  }
  return concat(parts, 2);
}

}  // namespace

Tensor encode_inputs(const Tensor& x, const Tensor& mask_f, const GgNetParams& params,
                     std::size_t n, std::size_t t_w, std::size_t d) {
  const std::size_t rows = n * t_w * d;
  const std::size_t h = params.encoder_value.b2.size();

  // Masked entries are silenced before and after the value encoder, so the
  // output there depends on the embeddings alone.
  Tensor x_masked = mul(x, mask_f);
  Tensor enc = params.encoder_value.apply(reshape(x_masked, {rows, 1}));
  std::vector<double> mask_wide(rows * h);
  for (std::size_t r = 0; r < rows; ++r) {
    const double m = mask_f.data()[r];
    for (std::size_t j = 0; j < h; ++j) mask_wide[r * h + j] = m;
  }
  enc = mul(enc, Tensor::from_data({rows, h}, std::move(mask_wide)));

  std::vector<std::size_t> n_of_pair(n * d), d_of_pair(n * d), pair_of_row(rows);
  for (std::size_t nn = 0; nn < n; ++nn)
    for (std::size_t dd = 0; dd < d; ++dd) {
      n_of_pair[nn * d + dd] = nn;
      d_of_pair[nn * d + dd] = dd;
    }
  for (std::size_t nn = 0; nn < n; ++nn)
    for (std::size_t t = 0; t < t_w; ++t)
      for (std::size_t dd = 0; dd < d; ++dd)
        pair_of_row[(nn * t_w + t) * d + dd] = nn * d + dd;

  Tensor pair_emb = concat({index_select(params.location_embeddings, 0, n_of_pair),
                            index_select(params.channel_embeddings, 0, d_of_pair)},
                           1);
  Tensor emb = index_select(params.encoder_embedding.apply(pair_emb), 0, pair_of_row);
  return reshape(add(enc, emb), {n, t_w, d, h});
}

Tensor ggnet_forward(const std::vector<double>& x,
                     const std::vector<std::uint8_t>& input_mask,
                     const GgNetParams& params, const GgNetConfig& config,
                     std::size_t n, std::size_t t_w, std::size_t d) {
  if (x.size() != n * t_w * d || input_mask.size() != x.size()) {
    throw ShapeError("ggnet_forward: window size mismatch");
  }
  config.validate();
  ForwardContext ctx = make_context(input_mask, params, config, n, t_w, d);

  Tensor x_t = Tensor::from_data({n, t_w, d}, x);
  Tensor h = encode_inputs(x_t, ctx.mask3, params, n, t_w, d);

  Tensor adj_loc =
      build_inter_adjacency(params.location_embeddings, params.adjacency_src,
                            params.adjacency_dst)
          .weights;
  Tensor adj_chan = build_intra_adjacency(params.channel_scores).weights;

  for (const BlockParams& block : params.blocks) {
    switch (block.kind) {
      case BlockKind::Temporal:
        h = temporal_layer(h, ctx, block, config);
        break;
      case BlockKind::InterGraph:
        h = graph_layer(h, ctx, adj_loc, block.graph, config, true);
        break;
      case BlockKind::IntraGraph:
        h = graph_layer(h, ctx, adj_chan, block.graph, config, false);
        break;
    }
  }
  return readout(h, ctx, params);
}

GgNetModel::GgNetModel(GgNetConfig config, std::size_t n_locations,
                       std::size_t n_channels, std::uint64_t seed)
    : config_(std::move(config)) {
  Rng rng(seed);
  params_ = GgNetParams::init(config_, n_locations, n_channels, rng);
}

GgNetModel::GgNetModel(GgNetConfig config, GgNetParams params)
    : config_(std::move(config)), params_(std::move(params)) {}

Tensor GgNetModel::forward(const std::vector<double>& x,
                           const std::vector<std::uint8_t>& input_mask,
                           std::size_t n, std::size_t t_w, std::size_t d) {
  return ggnet_forward(x, input_mask, params_, config_, n, t_w, d);
}

}  // namespace ggnet
