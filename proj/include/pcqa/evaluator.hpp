#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pcqa/checkpoint.hpp"
#include "pcqa/errors.hpp"
#include "pcqa/manifest.hpp"
#include "pcqa/model.hpp"
#include "pcqa/ply.hpp"
#include "pcqa/trainer.hpp"

namespace pcqa {

/// Sample Pearson correlation.
inline double plcc(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw EvalError("length-mismatch", std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  if (x.size() < 2) throw EvalError("too-short", "correlation needs at least two samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw EvalError("zero-variance", "constant input to correlation");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> fractional_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double srocc(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw EvalError("length-mismatch", std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  return plcc(fractional_ranks(x), fractional_ranks(y));
}

struct FoldSplit {
  int fold_index = 0;
  std::set<std::string> train_refs;
  std::set<std::string> test_refs;
  std::vector<std::size_t> train_entries;
  std::vector<std::size_t> test_entries;
};

/// One fold per reference id (ordered by id), holding that id out for testing.
inline std::vector<FoldSplit> kfold_by_reference(const DatasetManifest& m) {
  const auto groups = group_by_reference(m);
  if (groups.size() < 2) throw EvalError("one-group", "k-fold needs at least two reference contents");
  std::vector<FoldSplit> folds;
  int idx = 0;
  for (const auto& [test_ref, test_rows] : groups) {
    FoldSplit f;
    f.fold_index = idx++;
    f.test_refs.insert(test_ref);
    f.test_entries = test_rows;
    for (const auto& [ref, rows] : groups) {
      if (ref == test_ref) continue;
      f.train_refs.insert(ref);
      f.train_entries.insert(f.train_entries.end(), rows.begin(), rows.end());
    }
    std::sort(f.train_entries.begin(), f.train_entries.end());
    folds.push_back(std::move(f));
  }
  return folds;
}

enum class EvalMode { kfold, whole_set };

struct FoldResult {
  int fold_index = 0;
  std::string test_reference;
  std::size_t count = 0;
  double plcc = 0.0;
  double srocc = 0.0;
};

struct EvalReport {
  EvalMode mode = EvalMode::whole_set;
  std::vector<FoldResult> folds;
  double mean_plcc = 0.0;
  double mean_srocc = 0.0;
  std::vector<double> predictions;  // manifest order
};

/// Correlations of given predictions against manifest MOS. In k-fold mode
/// each fold's test set is scored separately and the fold values averaged.
inline EvalReport report_from_predictions(const DatasetManifest& m, const std::vector<double>& predictions, EvalMode mode) {
  if (predictions.size() != m.size()) throw EvalError("length-mismatch", "one prediction per manifest row required");
  EvalReport rep;
  rep.mode = mode;
  rep.predictions = predictions;
  auto score = [&](const std::vector<std::size_t>& rows, int idx, std::string ref) {
    std::vector<double> p, y;
    for (std::size_t r : rows) {
      p.push_back(predictions[r]);
      y.push_back(m.entries[r].mos);
    }
    rep.folds.push_back({idx, std::move(ref), rows.size(), plcc(p, y), srocc(p, y)});
  };
  if (mode == EvalMode::kfold) {
    for (const auto& f : kfold_by_reference(m)) score(f.test_entries, f.fold_index, *f.test_refs.begin());
  } else {
    std::vector<std::size_t> all(m.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    score(all, 0, "*");
  }
  for (const auto& f : rep.folds) {
    rep.mean_plcc += f.plcc;
    rep.mean_srocc += f.srocc;
  }
  rep.mean_plcc /= static_cast<double>(rep.folds.size());
  rep.mean_srocc /= static_cast<double>(rep.folds.size());
  return rep;
}

/// Scores every manifest cloud with the checkpoint, spread over `threads` workers.
inline std::vector<double> score_manifest(const Checkpoint& ck, const DatasetManifest& m, unsigned threads = 1) {
  std::vector<double> out(m.size(), 0.0);
  std::vector<std::exception_ptr> errors(m.size());
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(m.size())));
  auto worker = [&](unsigned w) {
    for (std::size_t i = w; i < m.size(); i += threads) {
      try {
        out[i] = predict(ply::load_ply(m.entries[i].path), ck.model, ck.preprocess, ck.params).score;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline EvalReport evaluate(const Checkpoint& ck, const DatasetManifest& m, EvalMode mode, unsigned threads = 1) {
  return report_from_predictions(m, score_manifest(ck, m, threads), mode);
}

/// Full content-wise protocol: a fresh model is trained on each fold's
/// training references and scored on its held-out reference.
inline EvalReport cross_validate(const DatasetManifest& m, const TrainConfig& tcfg, const ModelConfig& mcfg,
                                 const PreprocessConfig& pcfg) {
  const auto folds = kfold_by_reference(m);
  std::vector<LabeledCloud> data;
  for (const auto& e : m.entries) data.push_back({preprocess(ply::load_ply(e.path), pcfg), e.mos, e.path});
  std::vector<double> predictions(m.size(), 0.0);
  for (const auto& f : folds) {
    std::vector<LabeledCloud> train_set;
    for (std::size_t r : f.train_entries) train_set.push_back(data[r]);
    const TrainResult tr = train_on_clouds(train_set, tcfg, mcfg, pcfg);
    for (std::size_t r : f.test_entries) {
      Tape tape = Tape::inference();
      predictions[r] = forward_pointcloud(tape, data[r].cloud, mcfg, tr.final_model.params).score.item();
    }
  }
  return report_from_predictions(m, predictions, EvalMode::kfold);
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["mode"] = r.mode == EvalMode::kfold ? "kfold" : "whole-set";
  j["folds"] = nlohmann::json::array();
  for (const auto& f : r.folds)
    j["folds"].push_back({{"fold", f.fold_index}, {"test_reference", f.test_reference}, {"count", f.count},
                          {"plcc", f.plcc}, {"srocc", f.srocc}});
  j["mean_plcc"] = r.mean_plcc;
  j["mean_srocc"] = r.mean_srocc;
  return j;
}

inline void print_report_table(std::ostream& os, const EvalReport& r) {
  char line[160];
  std::snprintf(line, sizeof line, "%-6s %-24s %6s %9s %9s\n", "fold", "test reference", "n", "PLCC", "SROCC");
  os << line;
  for (const auto& f : r.folds) {
    std::snprintf(line, sizeof line, "%-6d %-24s %6zu %9.4f %9.4f\n", f.fold_index, f.test_reference.c_str(), f.count,
                  f.plcc, f.srocc);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-6s %-24s %6s %9.4f %9.4f\n", "mean", "", "", r.mean_plcc, r.mean_srocc);
  os << line;
}

}  // namespace pcqa
