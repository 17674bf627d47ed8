// Command-line front end: train, predict, eval, gradcheck, graph-dump.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcqa/checkpoint.hpp"
#include "pcqa/evaluator.hpp"
#include "pcqa/gradcheck_suite.hpp"
#include "pcqa/knn_graph.hpp"
#include "pcqa/manifest.hpp"
#include "pcqa/model.hpp"
#include "pcqa/ply.hpp"
#include "pcqa/run_config.hpp"
#include "pcqa/trainer.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerics = 3 };

struct Flags {
  std::string config_file;
  std::optional<int> partitions, patch_size, k, epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> learning_rate;
  std::optional<unsigned> threads;
  bool no_shuffle = false;
};

void add_common_flags(CLI::App* cmd, Flags& f, bool training) {
  cmd->add_option("--config", f.config_file, "key=value settings file (flags take precedence)");
  cmd->add_option("--partitions", f.partitions, "vertical slices per cloud (8-24)");
  cmd->add_option("--patch-size", f.patch_size, "points per patch");
  cmd->add_option("--k", f.k, "nearest neighbours per node");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--threads", f.threads, "worker threads (fallback: PCQA_THREADS)");
  if (training) {
    cmd->add_option("--lr", f.learning_rate, "Adam learning rate");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_flag("--no-shuffle", f.no_shuffle, "keep manifest order every epoch");
  }
}

pcqa::RunConfig resolve(const Flags& f) {
  pcqa::RunConfig rc;
  rc.threads = pcqa::threads_from_env();
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw pcqa::ConfigError("io", "cannot open config file '" + f.config_file + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    pcqa::apply_config(rc, pcqa::parse_config_text(ss.str()));
  }
  if (f.partitions) rc.partitions = *f.partitions;
  if (f.patch_size) rc.patch_size = *f.patch_size;
  if (f.k) rc.k = *f.k;
  if (f.seed) rc.seed = *f.seed;
  if (f.learning_rate) rc.learning_rate = *f.learning_rate;
  if (f.epochs) rc.epochs = *f.epochs;
  if (f.threads) rc.threads = *f.threads;
  if (f.no_shuffle) rc.shuffle = false;
  pcqa::validate(rc);
  return rc;
}

std::string pick_path(const pcqa::RunConfig& rc, const std::string& flag, const char* key) {
  if (!flag.empty()) return flag;
  if (auto it = rc.paths.find(key); it != rc.paths.end()) return it->second;
  throw pcqa::ConfigError("missing-path", std::string("--") + key + " is required");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw pcqa::ParseError("io", "cannot write '" + path + "'");
  out << text;
}

int cmd_train(const Flags& f, const std::string& manifest_flag, const std::string& out_flag,
              const std::string& history_flag) {
  const pcqa::RunConfig rc = resolve(f);
  const std::string manifest_path = pick_path(rc, manifest_flag, "manifest");
  const std::string out = pick_path(rc, out_flag, "out");
  std::string history = history_flag;
  if (history.empty()) history = rc.paths.count("loss_history") ? rc.paths.at("loss_history") : out + ".loss.csv";

  const auto manifest = pcqa::load_manifest_file(manifest_path);
  pcqa::TrainConfig tcfg = pcqa::train_config(rc);
  tcfg.on_epoch = [](int epoch, double loss) { std::cerr << "epoch " << epoch << " mean_loss " << loss << '\n'; };
  tcfg.on_warning = [](const std::string& w) { std::cerr << "warning: " << w << '\n'; };
  const auto res = pcqa::train(manifest, tcfg, pcqa::model_config(rc), pcqa::preprocess_config(rc));
  pcqa::save_checkpoint(out, res.final_model);
  pcqa::save_checkpoint(out + ".best", res.best_model);
  write_text(history, pcqa::loss_history_csv(res.loss_history));
  std::cout << "trained " << res.steps << " steps; final mean loss " << res.loss_history.back() << " (best epoch "
            << res.best_epoch << ")\n";
  return kOk;
}

int cmd_predict(const std::string& ckpt_path, const std::string& input, bool json) {
  const auto ck = pcqa::load_checkpoint(ckpt_path);
  const auto pred = pcqa::predict(pcqa::ply::load_ply(input), ck.model, ck.preprocess, ck.params);
  if (json) {
    std::cout << nlohmann::json{{"score", pred.score}, {"partition_scores", pred.partition_scores}}.dump() << '\n';
  } else {
    std::cout << std::setprecision(17) << pred.score << '\n';
    for (std::size_t i = 0; i < pred.partition_scores.size(); ++i)
      std::cout << "partition " << i << ' ' << pred.partition_scores[i] << '\n';
  }
  return kOk;
}

int cmd_eval(const Flags& f, const std::string& ckpt_path, const std::string& manifest_path, bool kfold, bool whole,
             bool retrain, bool json_only, const std::string& report_path) {
  if (kfold && whole) throw pcqa::ConfigError("mode", "--kfold and --whole-set are mutually exclusive");
  if (retrain && !kfold) throw pcqa::ConfigError("mode", "--retrain requires --kfold");
  const pcqa::RunConfig rc = resolve(f);
  const auto manifest = pcqa::load_manifest_file(pick_path(rc, manifest_path, "manifest"));
  const auto mode = kfold ? pcqa::EvalMode::kfold : pcqa::EvalMode::whole_set;
  pcqa::EvalReport rep;
  if (retrain) {
    rep = pcqa::cross_validate(manifest, pcqa::train_config(rc), pcqa::model_config(rc), pcqa::preprocess_config(rc));
  } else {
    const auto ck = pcqa::load_checkpoint(pick_path(rc, ckpt_path, "ckpt"));
    rep = pcqa::evaluate(ck, manifest, mode, rc.threads);
  }
  const auto j = pcqa::report_to_json(rep);
  if (!json_only) pcqa::print_report_table(std::cout, rep);
  std::cout << j.dump() << '\n';
  if (!report_path.empty()) write_text(report_path, j.dump(2) + "\n");
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& fault) {
  pcqa::GradcheckSuiteOptions opt;
  opt.seed = seed;
  opt.faulty_block = fault;
  bool ok = true;
  for (const auto& b : pcqa::run_gradcheck_suite(opt)) {
    char line[160];
    std::snprintf(line, sizeof line, "%-18s max_rel_error=%.3e coords=%zu retries=%d %s\n", b.block.c_str(),
                  b.report.max_rel_error, b.report.coords_checked, b.report.retries_used,
                  b.report.passed ? "PASS" : "FAIL");
    std::cout << line;
    ok = ok && b.report.passed;
  }
  return ok ? kOk : kNumerics;
}

int cmd_graph_dump(const Flags& f, const std::string& input, std::optional<std::size_t> patch) {
  const pcqa::RunConfig rc = resolve(f);
  const auto pc = pcqa::ply::load_ply(input);
  const auto k = static_cast<std::size_t>(rc.k);
  if (!patch) {
    const auto norm = pcqa::normalize_cloud(pc);
    std::vector<double> flat;
    for (const auto& p : norm.positions) flat.insert(flat.end(), p.begin(), p.end());
    pcqa::dump_graph(std::cout, pcqa::knn_graph({flat, norm.size(), 3}, k));
    return kOk;
  }
  const auto cloud = pcqa::preprocess(pc, pcqa::preprocess_config(rc));
  std::size_t idx = *patch;
  for (const auto& part : cloud.partitions) {
    if (idx < part.size()) {
      std::vector<double> flat;
      for (const auto& p : part[idx].positions) flat.insert(flat.end(), p.begin(), p.end());
      pcqa::dump_graph(std::cout, pcqa::knn_graph({flat, part[idx].size(), 3}, k));
      return kOk;
    }
    idx -= part.size();
  }
  throw pcqa::ConfigError("patch", "patch index " + std::to_string(*patch) + " out of range");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"No-reference point cloud quality assessment"};
  app.require_subcommand(1);

  Flags train_flags, eval_flags, dump_flags;
  std::string manifest, out, history, ckpt, input, report;
  bool json = false, kfold = false, whole = false, retrain = false;
  std::uint64_t gc_seed = 0;
  std::string fault;
  std::optional<std::size_t> patch;

  auto* train = app.add_subcommand("train", "train a model from a manifest");
  train->add_option("--manifest", manifest, "CSV with path,mos,reference")->required();
  train->add_option("--out", out, "checkpoint to write")->required();
  train->add_option("--loss-history", history, "epoch,mean_loss CSV (default <out>.loss.csv)");
  add_common_flags(train, train_flags, true);

  auto* predict = app.add_subcommand("predict", "score one point cloud");
  predict->add_option("--ckpt", ckpt, "checkpoint")->required();
  predict->add_option("--input", input, "PLY file")->required();
  predict->add_flag("--json", json, "emit {score, partition_scores}");

  auto* eval = app.add_subcommand("eval", "correlation report over a manifest");
  eval->add_option("--ckpt", ckpt, "checkpoint");
  eval->add_option("--manifest", manifest, "CSV with path,mos,reference")->required();
  eval->add_flag("--kfold", kfold, "per-reference folds, mean over folds");
  eval->add_flag("--whole-set", whole, "one PLCC/SROCC pair over the manifest");
  eval->add_flag("--retrain", retrain, "with --kfold: train a fresh model per fold");
  eval->add_flag("--json", json, "print only the JSON report");
  eval->add_option("--report", report, "also write the JSON report to this file");
  add_common_flags(eval, eval_flags, true);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every model block");
  gradcheck->add_option("--seed", gc_seed, "random seed");
  gradcheck->add_option("--inject-fault", fault, "scale one block's analytic gradient (negative control)");

  auto* dump = app.add_subcommand("graph-dump", "print a kNN graph as `i: j0 ... jk` lines");
  dump->add_option("--input", input, "PLY file")->required();
  dump->add_option("--patch", patch, "dump this patch's layer-1 graph instead of the whole cloud");
  add_common_flags(dump, dump_flags, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(train_flags, manifest, out, history);
    if (*predict) return cmd_predict(ckpt, input, json);
    if (*eval) return cmd_eval(eval_flags, ckpt, manifest, kfold, whole, retrain, json, report);
    if (*gradcheck) return cmd_gradcheck(gc_seed, fault);
    if (*dump) return cmd_graph_dump(dump_flags, input, patch);
  } catch (const pcqa::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const pcqa::NumericsError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerics;
  } catch (const pcqa::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
