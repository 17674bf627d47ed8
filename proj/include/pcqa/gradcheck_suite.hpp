#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "pcqa/grad_check.hpp"
#include "pcqa/model.hpp"
#include "pcqa/random.hpp"
#include "pcqa/synthetic.hpp"
#include "pcqa/trainer.hpp"

namespace pcqa {

struct BlockCheck {
  std::string block;
  ad::GradCheckReport report;
};

struct GradcheckSuiteOptions {
  std::uint64_t seed = 0;
  double h = 1e-5;
  double tol = 1e-4;
  /// Negative control: scales the analytic gradient of this block.
  std::string faulty_block;
  double fault_scale = 1.01;
};

namespace detail {

inline Tensor random_leaf(Rng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::parameter(std::move(shape), std::move(v));
}

inline Tensor random_constant(Rng& rng, ad::Shape shape) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::constant(std::move(shape), std::move(v));
}

/// Scalar probe sum(out * weights) with fixed random weights, so every output
/// coordinate contributes a distinct amount to the loss.
inline Tensor probe(Tape& tape, const Tensor& out, const Tensor& weights) {
  const Tensor flat = ad::reshape(tape, ad::mul(tape, out, weights), {out.numel()});
  return ad::sum_over_axis(tape, flat, 0);
}

inline KnnGraph random_graph(Rng& rng, std::size_t nodes, std::size_t k) {
  std::vector<double> pts(nodes * 3);
  for (auto& v : pts) v = rng.uniform(-1.0, 1.0);
  return knn_graph({pts, nodes, 3}, k);
}

inline void perturb_all(Rng& rng, const ModelParams& p, double amount) {
  for (auto t : p.tensors())
    for (auto& v : t.values()) v += amount * rng.uniform(-1.0, 1.0);
}

}  // namespace detail

/// Toy cloud for end-to-end gradient checks: 64 points that split into
/// 2 partitions x 2 patches x 16 points.
inline PreprocessedCloud toy_cloud(std::uint64_t seed, PreprocessConfig* cfg_out = nullptr) {
  const PreprocessConfig cfg{2, 16, seed};
  if (cfg_out) *cfg_out = cfg;
  return preprocess(synthetic::make_shape(synthetic::Shape::torus, 64, seed), cfg);
}

/// Finite-difference checks of every model block on random 8-node inputs,
/// plus the end-to-end loss on the toy cloud with graphs held fixed.
inline const std::vector<std::string>& gradcheck_blocks() {
  static const std::vector<std::string> names{"edge_conv",         "graph_norm", "node_aggregate", "cross_attention",
                                              "transformer_block", "regressor",  "full_loss"};
  return names;
}

inline std::vector<BlockCheck> run_gradcheck_suite(const GradcheckSuiteOptions& opt = {}) {
  using namespace detail;
  if (!opt.faulty_block.empty() && std::find(gradcheck_blocks().begin(), gradcheck_blocks().end(), opt.faulty_block) ==
                                       gradcheck_blocks().end())
    throw ConfigError("unknown-block", "no gradient-check block named '" + opt.faulty_block + "'");
  std::vector<BlockCheck> out;
  Rng rng(mix_seed(opt.seed, 17));
  auto options = [&](const std::string& name, std::size_t coords) {
    ad::GradCheckOptions o;
    o.h = opt.h;
    o.tol = opt.tol;
    o.seed = mix_seed(opt.seed, out.size());
    o.max_coords_per_leaf = coords;
    if (name == opt.faulty_block) o.analytic_scale = opt.fault_scale;
    return o;
  };
  constexpr std::size_t nodes = 8;
  constexpr double slope = 0.2;

  {
    const KnnGraph g = random_graph(rng, nodes, 3);
    Tensor x = random_leaf(rng, {nodes, 4});
    EdgeConvParams p{random_leaf(rng, {8, 5}), random_leaf(rng, {5})};
    const Tensor w = random_constant(rng, {nodes, 5});
    auto f = [&](Tape& t) { return probe(t, edge_conv(t, g, x, p, slope), w); };
    out.push_back({"edge_conv", ad::grad_check(f, {x, p.weight, p.bias}, options("edge_conv", 0))});
  }
  {
    Tensor x = random_leaf(rng, {nodes, 4});
    GraphNormParams p{random_leaf(rng, {4}, 0.2, 1.2), random_leaf(rng, {4}, 0.5, 1.5), random_leaf(rng, {4})};
    const Tensor w = random_constant(rng, {nodes, 4});
    auto f = [&](Tape& t) { return probe(t, graph_norm(t, x, p, 1e-5), w); };
    out.push_back({"graph_norm", ad::grad_check(f, {x, p.alpha, p.gamma, p.beta}, options("graph_norm", 0))});
  }
  {
    Tensor x = random_leaf(rng, {nodes, 4});
    const Tensor w = random_constant(rng, {8});
    auto f = [&](Tape& t) { return probe(t, node_aggregate(t, x), w); };
    out.push_back({"node_aggregate", ad::grad_check(f, {x}, options("node_aggregate", 0))});
  }

  ModelConfig small;
  small.layer_dims = {4};
  small.embed_dim = 8;
  small.heads = 2;
  small.ff_dim = 12;
  small.regressor_dims = {8, 4, 1};
  const ModelParams sp = init_params(small, mix_seed(opt.seed, 3));
  perturb_all(rng, sp, 0.1);
  {
    Tensor hx = random_leaf(rng, {nodes, 8});
    Tensor hr = random_leaf(rng, {nodes, 8});
    const Tensor w = random_constant(rng, {nodes, 8});
    auto f = [&](Tape& t) { return probe(t, cross_attention(t, hx, hr, sp.cross), w); };
    std::vector<Tensor> leaves{hx, hr, sp.cross.wo};
    for (std::size_t h = 0; h < sp.cross.wq.size(); ++h) {
      leaves.push_back(sp.cross.wq[h]);
      leaves.push_back(sp.cross.wk[h]);
      leaves.push_back(sp.cross.wv[h]);
    }
    out.push_back({"cross_attention", ad::grad_check(f, leaves, options("cross_attention", 0))});
  }
  {
    Tensor x = random_leaf(rng, {nodes, 8});
    const Tensor w = random_constant(rng, {nodes, 8});
    const TransformerParams& tp = sp.transformer;
    auto f = [&](Tape& t) { return probe(t, transformer_block(t, x, tp, small), w); };
    std::vector<Tensor> leaves{x, tp.attn.wo, tp.norm1.gamma, tp.norm1.beta, tp.norm2.gamma, tp.norm2.beta,
                               tp.w1, tp.b1, tp.w2, tp.b2};
    for (std::size_t h = 0; h < tp.attn.wq.size(); ++h) {
      leaves.push_back(tp.attn.wq[h]);
      leaves.push_back(tp.attn.wk[h]);
      leaves.push_back(tp.attn.wv[h]);
    }
    out.push_back({"transformer_block", ad::grad_check(f, leaves, options("transformer_block", 0))});
  }
  {
    Tensor v = random_leaf(rng, {8});
    const RegressorParams& rp = sp.regressor;
    auto f = [&](Tape& t) { return ad::sum_over_axis(t, regress(t, v, rp, slope), 0); };
    std::vector<Tensor> leaves{v};
    for (std::size_t l = 0; l < rp.weights.size(); ++l) {
      leaves.push_back(rp.weights[l]);
      leaves.push_back(rp.biases[l]);
    }
    out.push_back({"regressor", ad::grad_check(f, leaves, options("regressor", 0))});
  }
  {
    const ModelConfig cfg;
    const PreprocessedCloud cloud = toy_cloud(opt.seed);
    const ModelParams p = init_params(cfg, mix_seed(opt.seed, 5));
    perturb_all(rng, p, 0.05);
    CloudGraphs graphs;
    {
      Tape t = Tape::inference();
      graphs = forward_pointcloud(t, cloud, cfg, p).graphs;
    }
    auto f = [&](Tape& t) {
      return mse_loss(t, forward_pointcloud(t, cloud, cfg, p, &graphs).partition_scores, 0.5);
    };
    out.push_back({"full_loss", ad::grad_check(f, p.tensors(), options("full_loss", 4))});
  }
  return out;
}

}  // namespace pcqa
