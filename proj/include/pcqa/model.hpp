#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pcqa/autodiff.hpp"
#include "pcqa/errors.hpp"
#include "pcqa/knn_graph.hpp"
#include "pcqa/partitioner.hpp"
#include "pcqa/random.hpp"

namespace pcqa {

using ad::Tape;
using ad::Tensor;

struct ModelConfig {
  int k = 6;
  std::vector<int> layer_dims{64, 64, 128};
  int embed_dim = 256;
  int heads = 4;
  int ff_dim = 512;
  std::vector<int> regressor_dims{256, 64, 1};
  double leaky_slope = 0.2;
  double graph_norm_eps = 1e-5;
  double layer_norm_eps = 1e-5;

  int hidden_dim() const { return 2 * layer_dims.back(); }
};

inline void validate(const ModelConfig& cfg) {
  if (cfg.k < 1) throw ConfigError("k", "k must be >= 1");
  if (cfg.layer_dims.empty()) throw ConfigError("layer-dims", "at least one EdgeConv layer is required");
  for (int d : cfg.layer_dims)
    if (d < 1) throw ConfigError("layer-dims", "layer widths must be positive");
  if (cfg.embed_dim != cfg.hidden_dim())
    throw ConfigError("embed-dim", "embedding dim " + std::to_string(cfg.embed_dim) + " must equal 2 x last layer dim " +
                                       std::to_string(cfg.hidden_dim()));
  if (cfg.heads < 1 || cfg.embed_dim % cfg.heads != 0)
    throw ConfigError("heads", "embedding dim must be divisible by the head count");
  if (cfg.ff_dim < 1) throw ConfigError("ff-dim", "feed-forward width must be positive");
  if (cfg.regressor_dims.size() < 2 || cfg.regressor_dims.front() != cfg.embed_dim || cfg.regressor_dims.back() != 1)
    throw ConfigError("regressor-dims", "regressor must map the embedding dim to 1");
  if (!(cfg.graph_norm_eps > 0.0) || !(cfg.layer_norm_eps > 0.0)) throw ConfigError("eps", "epsilons must be positive");
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct EdgeConvParams {
  Tensor weight;  // (2 F_in) x F_out, rows [0,F_in) act on x_i, rows [F_in,2F_in) on x_i - x_j
  Tensor bias;    // F_out
};

struct GraphNormParams {
  Tensor alpha, gamma, beta;  // F each
};

struct StreamParams {
  std::vector<EdgeConvParams> conv;
  std::vector<GraphNormParams> norm;
};

struct AttentionParams {
  std::vector<Tensor> wq, wk, wv;  // one C x (C/h) matrix per head
  Tensor wo;                       // C x C
};

struct LayerNormParams {
  Tensor gamma, beta;
};

struct TransformerParams {
  AttentionParams attn;
  LayerNormParams norm1, norm2;
  Tensor w1, b1, w2, b2;  // C -> ff -> C
};

struct RegressorParams {
  std::vector<Tensor> weights, biases;
};

using NamedTensor = std::pair<std::string, Tensor>;

struct ModelParams {
  StreamParams geometry, color;
  AttentionParams cross;
  TransformerParams transformer;
  RegressorParams regressor;

  /// Every learnable tensor under a stable, ordered name.
  std::vector<NamedTensor> named() const {
    std::vector<NamedTensor> out;
    auto stream = [&](const std::string& p, const StreamParams& s) {
      for (std::size_t l = 0; l < s.conv.size(); ++l) {
        const std::string c = p + ".conv" + std::to_string(l);
        out.emplace_back(c + ".weight", s.conv[l].weight);
        out.emplace_back(c + ".bias", s.conv[l].bias);
        const std::string n = p + ".norm" + std::to_string(l);
        out.emplace_back(n + ".alpha", s.norm[l].alpha);
        out.emplace_back(n + ".gamma", s.norm[l].gamma);
        out.emplace_back(n + ".beta", s.norm[l].beta);
      }
    };
    auto attention = [&](const std::string& p, const AttentionParams& a) {
      for (std::size_t h = 0; h < a.wq.size(); ++h) {
        const std::string hp = p + ".head" + std::to_string(h);
        out.emplace_back(hp + ".wq", a.wq[h]);
        out.emplace_back(hp + ".wk", a.wk[h]);
        out.emplace_back(hp + ".wv", a.wv[h]);
      }
      out.emplace_back(p + ".wo", a.wo);
    };
    stream("geometry", geometry);
    stream("color", color);
    attention("cross", cross);
    attention("transformer.attn", transformer.attn);
    out.emplace_back("transformer.norm1.gamma", transformer.norm1.gamma);
    out.emplace_back("transformer.norm1.beta", transformer.norm1.beta);
    out.emplace_back("transformer.norm2.gamma", transformer.norm2.gamma);
    out.emplace_back("transformer.norm2.beta", transformer.norm2.beta);
    out.emplace_back("transformer.ff.w1", transformer.w1);
    out.emplace_back("transformer.ff.b1", transformer.b1);
    out.emplace_back("transformer.ff.w2", transformer.w2);
    out.emplace_back("transformer.ff.b2", transformer.b2);
    for (std::size_t l = 0; l < regressor.weights.size(); ++l) {
      out.emplace_back("regressor.fc" + std::to_string(l) + ".weight", regressor.weights[l]);
      out.emplace_back("regressor.fc" + std::to_string(l) + ".bias", regressor.biases[l]);
    }
    return out;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors()) t.zero_grad();
  }
};

namespace detail {

inline Tensor xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = rng.uniform(-a, a);
  return Tensor::parameter({fan_in, fan_out}, std::move(v));
}

inline Tensor filled(std::size_t n, double value) { return Tensor::parameter({n}, std::vector<double>(n, value)); }

inline AttentionParams init_attention(Rng& rng, std::size_t c, std::size_t heads) {
  AttentionParams a;
  const std::size_t d = c / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    a.wq.push_back(xavier(rng, c, d));
    a.wk.push_back(xavier(rng, c, d));
    a.wv.push_back(xavier(rng, c, d));
  }
  a.wo = xavier(rng, c, c);
  return a;
}

inline StreamParams init_stream(Rng& rng, const ModelConfig& cfg) {
  StreamParams s;
  std::size_t in = 3;
  for (int d : cfg.layer_dims) {
    const auto out = static_cast<std::size_t>(d);
    s.conv.push_back({xavier(rng, 2 * in, out), filled(out, 0.0)});
    s.norm.push_back({filled(out, 1.0), filled(out, 1.0), filled(out, 0.0)});
    in = out;
  }
  return s;
}

}  // namespace detail

/// Xavier-uniform weights, zero biases, identity normalizations.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  const auto c = static_cast<std::size_t>(cfg.embed_dim);
  const auto ff = static_cast<std::size_t>(cfg.ff_dim);
  ModelParams p;
  p.geometry = detail::init_stream(rng, cfg);
  p.color = detail::init_stream(rng, cfg);
  p.cross = detail::init_attention(rng, c, static_cast<std::size_t>(cfg.heads));
  p.transformer.attn = detail::init_attention(rng, c, static_cast<std::size_t>(cfg.heads));
  p.transformer.norm1 = {detail::filled(c, 1.0), detail::filled(c, 0.0)};
  p.transformer.norm2 = {detail::filled(c, 1.0), detail::filled(c, 0.0)};
  p.transformer.w1 = detail::xavier(rng, c, ff);
  p.transformer.b1 = detail::filled(ff, 0.0);
  p.transformer.w2 = detail::xavier(rng, ff, c);
  p.transformer.b2 = detail::filled(c, 0.0);
  for (std::size_t l = 0; l + 1 < cfg.regressor_dims.size(); ++l) {
    const auto in = static_cast<std::size_t>(cfg.regressor_dims[l]);
    const auto out = static_cast<std::size_t>(cfg.regressor_dims[l + 1]);
    p.regressor.weights.push_back(detail::xavier(rng, in, out));
    p.regressor.biases.push_back(detail::filled(out, 0.0));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// x'_i = max over out-edges (i,j) of leaky_relu([x_i, x_i - x_j] W + b).
/// With W = [W_a; W_b] the edge term is c_i - n_j where c_i = x_i (W_a + W_b) + b
/// and n_j = x_j W_b. Leaky-relu is strictly increasing, so the edge max equals
/// leaky_relu(c_i + max_j(-n_j)) with the same maximizing edge.
inline Tensor edge_conv(Tape& tape, const KnnGraph& graph, const Tensor& x, const EdgeConvParams& p, double slope) {
  if (x.rank() != 2 || x.dim(0) != graph.num_nodes())
    throw ShapeError("mismatch", "edge_conv: features " + ad::to_string(x.shape()) + " for " +
                                     std::to_string(graph.num_nodes()) + " nodes");
  const std::size_t f_in = x.dim(1);
  if (p.weight.rank() != 2 || p.weight.dim(0) != 2 * f_in || p.bias.rank() != 1 || p.bias.dim(0) != p.weight.dim(1))
    throw ShapeError("mismatch", "edge_conv: weight " + ad::to_string(p.weight.shape()) + " for input width " +
                                     std::to_string(f_in));
  const Tensor w_center = ad::slice_rows(tape, p.weight, 0, f_in);
  const Tensor w_diff = ad::slice_rows(tape, p.weight, f_in, 2 * f_in);
  const Tensor center = ad::add_bias(tape, ad::matmul(tape, x, ad::add(tape, w_center, w_diff)), p.bias);
  const Tensor neg_neighbor = ad::scale(tape, ad::matmul(tape, x, w_diff), -1.0);
  const Tensor edges = ad::gather_rows(tape, neg_neighbor, graph.targets(), {graph.num_nodes(), graph.degree()});
  return ad::leaky_relu(tape, ad::add(tape, center, ad::max_over_axis(tape, edges, 1)), slope);
}

/// Per-channel over nodes: (x - alpha E[x]) / sqrt(Var[x - alpha E[x]] + eps) * gamma + beta.
inline Tensor graph_norm(Tape& tape, const Tensor& x, const GraphNormParams& p, double eps) {
  if (x.rank() != 2 || x.dim(0) == 0) throw ShapeError("empty", "graph_norm needs a non-empty M x F input");
  const Tensor shift = ad::mul(tape, p.alpha, ad::mean_over_axis(tape, x, 0));
  const Tensor shifted = ad::add_bias(tape, x, ad::scale(tape, shift, -1.0));
  const Tensor inv_std = ad::reciprocal(tape, ad::sqrt_eps(tape, ad::variance_over_axis(tape, shifted, 0), eps));
  return ad::add_bias(tape, ad::mul_bias(tape, ad::mul_bias(tape, shifted, inv_std), p.gamma), p.beta);
}

/// concat(channel max over nodes, channel mean over nodes): M x F -> 2F.
inline Tensor node_aggregate(Tape& tape, const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) == 0) throw ShapeError("empty", "node_aggregate needs a non-empty M x F input");
  return ad::concat(tape, {ad::max_over_axis(tape, x, 0), ad::mean_over_axis(tape, x, 0)}, 0);
}

struct StreamResult {
  Tensor hidden;                  // 2F
  std::vector<KnnGraph> graphs;   // graph used at each layer
};

/// Stack of (EdgeConv, GraphNorm) layers followed by node aggregation.
/// Without `fixed_graphs` the layer-1 graph comes from the input features and
/// each later graph from the previous layer's embeddings; gradients never flow
/// through neighbour selection.
inline StreamResult stream_forward(Tape& tape, const Tensor& features, const ModelConfig& cfg, const StreamParams& p,
                                   const std::vector<KnnGraph>* fixed_graphs = nullptr) {
  const std::size_t layers = p.conv.size();
  if (fixed_graphs && fixed_graphs->size() != layers)
    throw ShapeError("mismatch", "stream_forward: " + std::to_string(fixed_graphs->size()) + " graphs for " +
                                     std::to_string(layers) + " layers");
  const auto k = static_cast<std::size_t>(cfg.k);
  const std::size_t m = features.dim(0);
  StreamResult res;
  Tensor x = features;
  for (std::size_t l = 0; l < layers; ++l) {
    KnnGraph g = fixed_graphs ? (*fixed_graphs)[l] : rebuild_for_layer(x.values(), m, k);
    x = edge_conv(tape, g, x, p.conv[l], cfg.leaky_slope);
    x = graph_norm(tape, x, p.norm[l], cfg.graph_norm_eps);
    res.graphs.push_back(std::move(g));
  }
  res.hidden = node_aggregate(tape, x);
  return res;
}

/// Multi-head scaled dot-product attention: queries from `query_src`, keys and
/// values from `kv_src`, both (n x C). Softmax of q k^T / sqrt(C/h) per row.
inline Tensor multi_head_attention(Tape& tape, const Tensor& query_src, const Tensor& kv_src, const AttentionParams& p,
                                   std::vector<Tensor>* attention_out = nullptr) {
  if (query_src.rank() != 2 || kv_src.rank() != 2 || query_src.dim(1) != kv_src.dim(1))
    throw ShapeError("mismatch", "attention: " + ad::to_string(query_src.shape()) + " vs " + ad::to_string(kv_src.shape()));
  const std::size_t heads = p.wq.size();
  const double head_dim = static_cast<double>(p.wq.front().dim(1));
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor q = ad::matmul(tape, query_src, p.wq[h]);
    const Tensor k = ad::matmul(tape, kv_src, p.wk[h]);
    const Tensor v = ad::matmul(tape, kv_src, p.wv[h]);
    const Tensor logits = ad::scale(tape, ad::matmul(tape, q, ad::transpose(tape, k)), 1.0 / std::sqrt(head_dim));
    const Tensor a = ad::softmax(tape, logits, 1);
    if (attention_out) attention_out->push_back(a);
    outs.push_back(ad::matmul(tape, a, v));
  }
  return ad::matmul(tape, ad::concat(tape, outs, 1), p.wo);
}

/// Queries from the color stream, keys and values from the geometry stream.
inline Tensor cross_attention(Tape& tape, const Tensor& hidden_xyz, const Tensor& hidden_rgb, const AttentionParams& p,
                              std::vector<Tensor>* attention_out = nullptr) {
  if (hidden_xyz.shape() != hidden_rgb.shape())
    throw ShapeError("mismatch", "cross_attention: " + ad::to_string(hidden_xyz.shape()) + " vs " +
                                     ad::to_string(hidden_rgb.shape()));
  return multi_head_attention(tape, hidden_rgb, hidden_xyz, p, attention_out);
}

inline Tensor layer_norm(Tape& tape, const Tensor& x, const LayerNormParams& p, double eps) {
  return ad::add_bias(tape, ad::mul_bias(tape, ad::layer_norm_core(tape, x, eps), p.gamma), p.beta);
}

/// y = LN(x + SelfAttn(x)); z = LN(y + FF(y)) with FF = leaky(y W1 + b1) W2 + b2.
inline Tensor transformer_block(Tape& tape, const Tensor& x, const TransformerParams& p, const ModelConfig& cfg) {
  const Tensor y = layer_norm(tape, ad::add(tape, x, multi_head_attention(tape, x, x, p.attn)), p.norm1, cfg.layer_norm_eps);
  const Tensor hidden = ad::leaky_relu(tape, ad::add_bias(tape, ad::matmul(tape, y, p.w1), p.b1), cfg.leaky_slope);
  const Tensor ff = ad::add_bias(tape, ad::matmul(tape, hidden, p.w2), p.b2);
  return layer_norm(tape, ad::add(tape, y, ff), p.norm2, cfg.layer_norm_eps);
}

/// Channel-wise max over the patch sequence: (n x C) -> C.
inline Tensor graphs_aggregate(Tape& tape, const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) == 0) throw ShapeError("empty", "graphs_aggregate needs at least one row");
  return ad::max_over_axis(tape, x, 0);
}

/// Shallow MLP from a C vector to a single score, shape [1].
inline Tensor regress(Tape& tape, const Tensor& v, const RegressorParams& p, double slope) {
  Tensor h = ad::reshape(tape, v, {1, v.numel()});
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    h = ad::add_bias(tape, ad::matmul(tape, h, p.weights[l]), p.biases[l]);
    if (l + 1 < p.weights.size()) h = ad::leaky_relu(tape, h, slope);
  }
  return ad::reshape(tape, h, {1});
}

// ---------------------------------------------------------------------------
// Whole-cloud forward pass
// ---------------------------------------------------------------------------

/// Geometry-stream graphs per partition, per patch, per layer.
using CloudGraphs = std::vector<std::vector<std::vector<KnnGraph>>>;

struct ForwardResult {
  Tensor score;                          // scalar
  std::vector<Tensor> partition_scores;  // each of shape [1]
  CloudGraphs graphs;
};

inline Tensor patch_tensor(const std::vector<Vec3>& rows) {
  std::vector<double> v;
  v.reserve(rows.size() * 3);
  for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
  return Tensor::constant({rows.size(), 3}, std::move(v));
}

/// Score of one partition from its patch sequence.
inline Tensor partition_forward(Tape& tape, const std::vector<Patch>& patches, const ModelConfig& cfg,
                                const ModelParams& p, std::vector<std::vector<KnnGraph>>& graphs,
                                bool use_fixed_graphs) {
  if (patches.empty()) throw PartitionError("empty-partition", "partition without patches");
  if (use_fixed_graphs && graphs.size() != patches.size())
    throw ShapeError("mismatch", "cached graphs do not match the patch count");
  if (!use_fixed_graphs) graphs.assign(patches.size(), {});
  std::vector<Tensor> xyz_rows, rgb_rows;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i].size() <= static_cast<std::size_t>(cfg.k))
      throw GraphError("too-few-nodes", "patch of " + std::to_string(patches[i].size()) + " points for k=" +
                                            std::to_string(cfg.k));
    StreamResult geo = stream_forward(tape, patch_tensor(patches[i].positions), cfg, p.geometry,
                                      use_fixed_graphs ? &graphs[i] : nullptr);
    StreamResult col = stream_forward(tape, patch_tensor(patches[i].colors), cfg, p.color, &geo.graphs);
    const std::size_t width = geo.hidden.numel();
    xyz_rows.push_back(ad::reshape(tape, geo.hidden, {1, width}));
    rgb_rows.push_back(ad::reshape(tape, col.hidden, {1, width}));
    if (!use_fixed_graphs) graphs[i] = std::move(geo.graphs);
  }
  const Tensor hidden_xyz = ad::concat(tape, xyz_rows, 0);
  const Tensor hidden_rgb = ad::concat(tape, rgb_rows, 0);
  const Tensor fused = cross_attention(tape, hidden_xyz, hidden_rgb, p.cross);
  const Tensor refined = transformer_block(tape, fused, p.transformer, cfg);
  return regress(tape, graphs_aggregate(tape, refined), p.regressor, cfg.leaky_slope);
}

/// Mean of the partition scores. Pass `fixed` to reuse previously built graphs
/// (used to hold structure constant under finite differences).
inline ForwardResult forward_pointcloud(Tape& tape, const PreprocessedCloud& cloud, const ModelConfig& cfg,
                                        const ModelParams& p, const CloudGraphs* fixed = nullptr) {
  if (cloud.partitions.empty()) throw PartitionError("no-partitions", "cloud produced no partitions");
  ForwardResult res;
  if (fixed) {
    if (fixed->size() != cloud.partitions.size()) throw ShapeError("mismatch", "cached graphs do not match partitions");
    res.graphs = *fixed;
  } else {
    res.graphs.resize(cloud.partitions.size());
  }
  for (std::size_t i = 0; i < cloud.partitions.size(); ++i)
    res.partition_scores.push_back(partition_forward(tape, cloud.partitions[i], cfg, p, res.graphs[i], fixed != nullptr));
  res.score = ad::mean_over_axis(tape, ad::concat(tape, res.partition_scores, 0), 0);
  return res;
}

struct Prediction {
  double score = 0.0;
  std::vector<double> partition_scores;
};

inline Prediction predict(const PointCloud& pc, const ModelConfig& cfg, const PreprocessConfig& pre,
                          const ModelParams& p) {
  const PreprocessedCloud cloud = preprocess(pc, pre);
  Tape tape = Tape::inference();
  const ForwardResult r = forward_pointcloud(tape, cloud, cfg, p);
  Prediction out{r.score.item(), {}};
  for (const auto& s : r.partition_scores) out.partition_scores.push_back(s.item());
  return out;
}

}  // namespace pcqa
