#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pcqa/checkpoint.hpp"
#include "pcqa/errors.hpp"
#include "pcqa/manifest.hpp"
#include "pcqa/model.hpp"
#include "pcqa/partitioner.hpp"
#include "pcqa/ply.hpp"
#include "pcqa/random.hpp"

namespace pcqa {

/// (mean(partition scores) - mos)^2 on the tape.
inline Tensor mse_loss(Tape& tape, const std::vector<Tensor>& partition_scores, double mos) {
  if (partition_scores.empty()) throw TrainError("no-partitions", "loss over an empty score list");
  const Tensor mean = ad::mean_over_axis(tape, ad::concat(tape, partition_scores, 0), 0);
  return ad::square(tape, ad::sub(tape, mean, Tensor::scalar(mos)));
}

inline double mse_loss(const std::vector<double>& partition_scores, double mos) {
  if (partition_scores.empty()) throw TrainError("no-partitions", "loss over an empty score list");
  const double mean = std::accumulate(partition_scores.begin(), partition_scores.end(), 0.0) /
                      static_cast<double>(partition_scores.size());
  return (mean - mos) * (mean - mos);
}

struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m, v;
};

/// Bias-corrected Adam update of every tensor from its gradient; gradients are
/// zeroed afterwards.
inline void adam_step(std::vector<Tensor>& params, AdamState& st) {
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.numel(), 0.0);
      st.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("mismatch", "optimizer state does not match the parameter list");
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].values();
    auto g = params[i].mutable_grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    if (m.size() != w.size()) throw ShapeError("mismatch", "optimizer moment size differs from parameter " + std::to_string(i));
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = st.beta1 * m[j] + (1.0 - st.beta1) * g[j];
      v[j] = st.beta2 * v[j] + (1.0 - st.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= st.learning_rate * mhat / (std::sqrt(vhat) + st.eps);
      g[j] = 0.0;
    }
  }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
inline double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.mutable_grad()) g *= s;
  }
  return norm;
}

struct TrainConfig {
  int epochs = 100;
  std::uint64_t seed = 0;
  double learning_rate = 1e-4;
  bool shuffle = true;
  double clip_norm = 5.0;
  /// Start the regressor's output bias at the mean training MOS.
  bool init_bias_to_mean_mos = true;
  /// Called after every epoch with (epoch, mean loss).
  std::function<void(int, double)> on_epoch;
  /// Receives warnings about skipped clouds.
  std::function<void(const std::string&)> on_warning;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("epochs", "epochs must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning-rate", "learning rate must be positive");
}

struct LabeledCloud {
  PreprocessedCloud cloud;
  double mos = 0.0;
  std::string name;
};

struct TrainResult {
  Checkpoint final_model;
  Checkpoint best_model;
  std::vector<double> loss_history;  // mean loss per epoch
  int best_epoch = 0;
  std::uint64_t steps = 0;
  std::vector<std::string> warnings;
};

/// One forward/backward/update step on a single cloud; returns the loss.
inline double train_step(const LabeledCloud& sample, const ModelConfig& mcfg, ModelParams& params,
                         std::vector<Tensor>& tensors, AdamState& adam, double clip_norm) {
  Tape tape;
  const ForwardResult fwd = forward_pointcloud(tape, sample.cloud, mcfg, params);
  const Tensor loss = mse_loss(tape, fwd.partition_scores, sample.mos);
  const double value = loss.item();
  tape.backward(loss);
  clip_grad_norm(tensors, clip_norm);
  adam_step(tensors, adam);
  return value;
}

namespace detail {

inline Checkpoint snapshot(const ModelConfig& m, const PreprocessConfig& p, const ModelParams& params) {
  Checkpoint ck{m, p, init_params(m, 0)};
  auto dst = ck.params.tensors();
  auto src = params.tensors();
  for (std::size_t i = 0; i < src.size(); ++i)
    std::copy(src[i].values().begin(), src[i].values().end(), dst[i].values().begin());
  return ck;
}

}  // namespace detail

/// Batch-size-one training over preprocessed clouds.
inline TrainResult train_on_clouds(const std::vector<LabeledCloud>& data, const TrainConfig& tcfg,
                                   const ModelConfig& mcfg, const PreprocessConfig& pcfg) {
  validate(tcfg);
  validate(mcfg);
  if (data.empty()) throw TrainError("empty-epoch", "no trainable clouds");
  ModelParams params = init_params(mcfg, tcfg.seed);
  if (tcfg.init_bias_to_mean_mos) {
    double mean = 0.0;
    for (const auto& d : data) mean += d.mos;
    params.regressor.biases.back().values()[0] = mean / static_cast<double>(data.size());
  }
  std::vector<Tensor> tensors = params.tensors();
  AdamState adam;
  adam.learning_rate = tcfg.learning_rate;

  TrainResult res;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    if (tcfg.shuffle) {
      Rng rng(mix_seed(tcfg.seed, static_cast<std::uint64_t>(epoch)));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    double total = 0.0;
    for (std::size_t idx : order) total += train_step(data[idx], mcfg, params, tensors, adam, tcfg.clip_norm);
    const double mean = total / static_cast<double>(data.size());
    res.loss_history.push_back(mean);
    if (mean < best) {
      best = mean;
      res.best_epoch = epoch;
      res.best_model = detail::snapshot(mcfg, pcfg, params);
    }
    if (tcfg.on_epoch) tcfg.on_epoch(epoch, mean);
  }
  res.steps = adam.t;
  res.final_model = detail::snapshot(mcfg, pcfg, params);
  return res;
}

/// Loads and preprocesses manifest rows; unreadable clouds are skipped with a warning.
inline std::vector<LabeledCloud> load_labeled_clouds(const DatasetManifest& manifest, const PreprocessConfig& pcfg,
                                                     std::vector<std::string>& warnings) {
  std::vector<LabeledCloud> out;
  for (const auto& e : manifest.entries) {
    try {
      out.push_back({preprocess(ply::load_ply(e.path), pcfg), e.mos, e.path});
    } catch (const Error& err) {
      warnings.push_back("skipping '" + e.path + "': " + err.what());
    }
  }
  return out;
}

inline TrainResult train(const DatasetManifest& manifest, const TrainConfig& tcfg, const ModelConfig& mcfg,
                         const PreprocessConfig& pcfg) {
  validate(pcfg);
  std::vector<std::string> warnings;
  const auto data = load_labeled_clouds(manifest, pcfg, warnings);
  if (tcfg.on_warning)
    for (const auto& w : warnings) tcfg.on_warning(w);
  if (data.empty()) throw TrainError("empty-epoch", "every manifest cloud failed to load or preprocess");
  TrainResult res = train_on_clouds(data, tcfg, mcfg, pcfg);
  res.warnings = std::move(warnings);
  return res;
}

inline std::string loss_history_csv(const std::vector<double>& history) {
  std::ostringstream os;
  os << "epoch,mean_loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < history.size(); ++i) os << (i + 1) << ',' << history[i] << '\n';
  return os.str();
}

}  // namespace pcqa
