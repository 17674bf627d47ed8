#include <gtest/gtest.h>

#include <sstream>

#include "common.hpp"
#include "oracles.hpp"
#include "pcqa/evaluator.hpp"

using namespace pcqa;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-10, 10);
  return v;
}

DatasetManifest grouped_manifest(int refs, int per_ref) {
  DatasetManifest m;
  for (int r = 0; r < refs; ++r)
    for (int e = 0; e < per_ref; ++e)
      m.entries.push_back({"c" + std::to_string(r) + "_" + std::to_string(e), double(e + r), "ref" + std::to_string(r)});
  return m;
}

}  // namespace

TEST(Evaluator, PlccWorkedExample) { EXPECT_NEAR(plcc({1, 2, 3, 4}, {1, 3, 2, 4}), 0.8, 1e-12); }

TEST(Evaluator, PlccMatchesOracleAndIsAffineInvariant) {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_vector(rng, 20), y = random_vector(rng, 20);
    const double r = plcc(x, y);
    EXPECT_NEAR(r, oracle::pearson(x, y), 1e-12);
    std::vector<double> ax(x.size());
    const double a = rng.uniform(0.1, 5), b = rng.uniform(-5, 5);
    for (std::size_t i = 0; i < x.size(); ++i) ax[i] = a * x[i] + b;
    EXPECT_NEAR(plcc(ax, y), r, 1e-12);
    for (auto& v : ax) v = -v;
    EXPECT_NEAR(plcc(ax, y), -r, 1e-12);
  }
}

TEST(Evaluator, SroccIsMonotoneInvariant) {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_vector(rng, 20), y = random_vector(rng, 20);
    std::vector<double> mx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) mx[i] = std::exp(0.3 * x[i]) + x[i] * x[i] * x[i];
    EXPECT_NEAR(srocc(mx, y), srocc(x, y), 1e-12);
  }
}

TEST(Evaluator, FractionalRanksMatchCountingOracle) {
  const std::vector<double> x{3, 1, 3, 2, 3, 1};
  EXPECT_EQ(fractional_ranks(x), (std::vector<double>{5, 1.5, 5, 3, 5, 1.5}));
  Rng rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(30);
    for (auto& e : v) e = static_cast<double>(rng.below(8));
    EXPECT_EQ(fractional_ranks(v), oracle::fractional_ranks(v));
  }
}

TEST(Evaluator, CorrelationErrors) {
  EXPECT_THROW(plcc({1, 2}, {1, 2, 3}), EvalError);
  EXPECT_THROW(plcc({1}, {1}), EvalError);
  EXPECT_THROW(plcc({1, 1, 1}, {1, 2, 3}), EvalError);
}

TEST(Evaluator, KFoldHoldsOutEachReference) {
  const DatasetManifest m = grouped_manifest(6, 15);
  const auto folds = kfold_by_reference(m);
  ASSERT_EQ(folds.size(), 6u);
  std::set<std::size_t> tested;
  for (const auto& f : folds) {
    EXPECT_EQ(f.test_entries.size(), 15u);
    EXPECT_EQ(f.train_entries.size(), 75u);
    EXPECT_EQ(f.train_refs.size(), 5u);
    for (std::size_t r : f.test_entries) {
      EXPECT_EQ(f.train_refs.count(m.entries[r].reference), 0u);
      tested.insert(r);
    }
  }
  EXPECT_EQ(tested.size(), 90u);
  EXPECT_THROW(kfold_by_reference(grouped_manifest(1, 5)), EvalError);
}

TEST(Evaluator, ReportAveragesFolds) {
  const DatasetManifest m = grouped_manifest(2, 4);
  // Fold 0 ranks perfectly, fold 1 reversed.
  const std::vector<double> pred{0, 1, 2, 3, 3, 2, 1, 0};
  const EvalReport k = report_from_predictions(m, pred, EvalMode::kfold);
  ASSERT_EQ(k.folds.size(), 2u);
  EXPECT_NEAR(k.folds[0].srocc, 1.0, 1e-12);
  EXPECT_NEAR(k.folds[1].srocc, -1.0, 1e-12);
  EXPECT_NEAR(k.mean_srocc, 0.0, 1e-12);
  const EvalReport w = report_from_predictions(m, pred, EvalMode::whole_set);
  ASSERT_EQ(w.folds.size(), 1u);
  EXPECT_EQ(w.folds[0].count, 8u);

  const auto j = report_to_json(k);
  EXPECT_EQ(j["mode"], "kfold");
  EXPECT_EQ(j["folds"].size(), 2u);
  std::ostringstream os;
  print_report_table(os, k);
  EXPECT_NE(os.str().find("mean"), std::string::npos);
  EXPECT_THROW(report_from_predictions(m, {1, 2}, EvalMode::kfold), EvalError);
}

TEST(Evaluator, ScoringIsThreadCountIndependent) {
  const auto dir = testutil::scratch_dir("evaluator");
  DatasetManifest m;
  const synthetic::Shape shapes[] = {synthetic::Shape::sphere, synthetic::Shape::torus, synthetic::Shape::box};
  for (int i = 0; i < 3; ++i)
    m.entries.push_back({testutil::write_shape(dir, "c" + std::to_string(i) + ".ply", shapes[i], 300, i), double(i), "r"});
  const ModelConfig cfg = testutil::tiny_model();
  const Checkpoint ck{cfg, {2, 16, 0}, init_params(cfg, 2)};
  EXPECT_EQ(score_manifest(ck, m, 1), score_manifest(ck, m, 3));
  m.entries.push_back({(dir / "missing.ply").string(), 1.0, "r"});
  EXPECT_THROW(score_manifest(ck, m, 2), ParseError);
}

TEST(Evaluator, CrossValidationTrainsPerFold) {
  const auto dir = testutil::scratch_dir("crossval");
  DatasetManifest m;
  for (int r = 0; r < 2; ++r)
    for (int e = 0; e < 3; ++e)
      m.entries.push_back({testutil::write_shape(dir, "c" + std::to_string(r) + std::to_string(e) + ".ply",
                                                 r ? synthetic::Shape::torus : synthetic::Shape::sphere, 200, 10 * r + e,
                                                 0.01 * e),
                           -double(e), "ref" + std::to_string(r)});
  TrainConfig t;
  t.epochs = 2;
  const EvalReport rep = cross_validate(m, t, testutil::tiny_model(), {2, 16, 0});
  EXPECT_EQ(rep.folds.size(), 2u);
  for (const auto& f : rep.folds) {
    EXPECT_EQ(f.count, 3u);
    EXPECT_LE(std::abs(f.srocc), 1.0);
  }
}
