#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "splitgp/data_io.hpp"
#include "splitgp/splitting_model.hpp"

using namespace splitgp;

namespace {

KernelSpec iso(Index dims, double l = 1.0, double sf2 = 1.0, double sn2 = 0.1) {
  return KernelSpec(Hyperparameters::isotropic(dims, l, sf2, sn2));
}

TrainSchedule no_training() {
  TrainSchedule s;
  s.policy = TrainPolicy::kNever;
  return s;
}

Vector v1(double a) { return Vector::Constant(1, a); }
Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

using Row = std::vector<double>;

std::vector<Row> stored_rows(const SplittingModel& model) {
  std::vector<Row> out;
  for (const auto& c : model.children()) {
    for (Index r = 0; r < c.size(); ++r) {
      Row row;
      for (Index d = 0; d < c.inputs.cols(); ++d) row.push_back(c.inputs(r, d));
      row.push_back(c.targets[r]);
      out.push_back(row);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Row> dataset_rows(const Matrix& X, const Vector& Y) {
  std::vector<Row> out;
  for (Index r = 0; r < X.rows(); ++r) {
    Row row;
    for (Index d = 0; d < X.cols(); ++d) row.push_back(X(r, d));
    row.push_back(Y[r]);
    out.push_back(row);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Two children on a line, one per side of the origin, fixed spec.
SplittingModel two_child_model() {
  SplittingModel model(iso(1), 2, no_training());
  model.update(v1(-1.0), 1.0);
  model.update(v1(-0.9), 1.0);
  model.update(v1(1.0), 3.0);
  model.update(v1(1.1), 3.0);
  return model;
}

}  // namespace

TEST(SplittingModel, FirstObservationCreatesChild) {
  SplittingModel model(iso(2), 5, no_training());
  EXPECT_EQ(model.num_children(), 0);
  model.update(v2(0.3, -0.2), 1.5);
  ASSERT_EQ(model.num_children(), 1);
  EXPECT_EQ(model.children()[0].center, v2(0.3, -0.2));
  EXPECT_EQ(model.size(), 1);
}

TEST(SplittingModel, ThirdCollinearPointTriggersSplit) {
  SplittingModel model(iso(1), 2, no_training());
  model.update(v1(0.0), 0.0);
  model.update(v1(0.1), 0.0);
  EXPECT_EQ(model.num_children(), 1);
  model.update(v1(10.0), 0.0);
  EXPECT_EQ(model.num_children(), 2);
  for (const auto& c : model.children()) EXPECT_LE(c.size(), 2);
}

TEST(SplittingModel, AssignsToMostSimilarCenter) {
  SplittingModel two(iso(2), 2, no_training());
  two.update(v2(0, 0), 0.0);
  two.update(v2(0.1, 0), 0.0);
  two.update(v2(10, 0), 0.0);
  ASSERT_EQ(two.num_children(), 2);
  const Index far = two.children()[0].center[0] > 5 ? 0 : 1;
  const Index before = two.children()[static_cast<std::size_t>(far)].size();
  two.update(v2(9, 0), 1.0);
  EXPECT_EQ(two.children()[static_cast<std::size_t>(far)].size(), before + 1);
}

TEST(SplittingModel, CenterIsCentroidAfterUpdate) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  SplittingModel model(iso(2), 20, no_training());
  for (int i = 0; i < 100; ++i) {
    model.update(v2(z(rng), z(rng)), z(rng));
    for (const auto& c : model.children()) {
      EXPECT_LT((c.center - c.inputs.colwise().mean().transpose()).norm(), 1e-12);
    }
  }
}

TEST(SplittingModel, BatchOfSizeOneMatchesUpdate) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  SplittingModel a(iso(2), 7, no_training()), b(iso(2), 7, no_training());
  for (int i = 0; i < 40; ++i) {
    const Vector x = v2(z(rng), z(rng));
    const double y = z(rng);
    a.update(x, y);
    b.update_batch(x.transpose(), Vector::Constant(1, y));
  }
  ASSERT_EQ(a.num_children(), b.num_children());
  for (std::size_t i = 0; i < a.children().size(); ++i) {
    EXPECT_EQ(a.children()[i].inputs, b.children()[i].inputs);
    EXPECT_EQ(a.children()[i].targets, b.children()[i].targets);
  }
}

TEST(SplittingModel, EmptyBatchIsNoOp) {
  SplittingModel model(iso(2), 5);
  model.update_batch(Matrix(0, 2), Vector(0));
  EXPECT_EQ(model.num_children(), 0);
}

TEST(SplittingModel, StreamingInvariantsOnSynthetic) {
  const SeedPlan seeds{5};
  const Dataset ds = synth_dataset(2500, seeds);
  SplittingModel model(iso(2), 500, no_training());
  model.update_batch(ds.X, ds.Y);
  EXPECT_EQ(model.size(), 2500);
  const Index C = model.num_children();
  EXPECT_GE(C, 5);
  EXPECT_LE(C, 11);
  for (const auto& c : model.children()) EXPECT_LE(c.size(), 500);
  EXPECT_EQ(stored_rows(model), dataset_rows(ds.X, ds.Y));
}

TEST(SplittingModel, ChildCountBoundProperty) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  for (const Index m : {2, 3, 10, 25}) {
    SplittingModel model(iso(2, 0.5), m, no_training());
    for (Index n = 1; n <= 200; ++n) {
      model.update(v2(u(rng), u(rng)), u(rng));
      const Index C = model.num_children();
      EXPECT_GE(C, (n + m - 1) / m);
      EXPECT_LE(C, (2 * n + m - 1) / m + 1);
    }
  }
}

TEST(SplittingModel, PredictRequiresChildren) {
  SplittingModel model(iso(1), 5);
  EXPECT_THROW(model.predict_mean(v1(0.0)), ModelEmpty);
}

TEST(SplittingModel, SingleChildEqualsChildPosterior) {
  SplittingModel model(iso(1), 10, no_training());
  for (double x : {-1.0, 0.0, 0.5, 2.0}) model.update(v1(x), x * x);
  const auto p = model.predict(v1(0.25));
  const auto& c = model.children()[0];
  EXPECT_EQ(p.weights.size(), 1);
  EXPECT_EQ(p.weights[0], 1.0);
  EXPECT_EQ(p.mean, posterior_mean(c.posterior, v1(0.25), model.spec()));
  EXPECT_EQ(*p.variance, posterior_variance(c.posterior, v1(0.25), model.spec()));
}

TEST(SplittingModel, EquidistantChildrenAverage) {
  const auto model = two_child_model();
  ASSERT_EQ(model.num_children(), 2);
  // Centers at -0.95 and 1.05; the midpoint is equidistant.
  const Vector mid = v1(0.05);
  const auto p = model.predict(mid);
  EXPECT_NEAR(p.weights[0], 0.5, 1e-12);
  const double m0 = posterior_mean(model.children()[0].posterior, mid, model.spec());
  const double m1 = posterior_mean(model.children()[1].posterior, mid, model.spec());
  EXPECT_NEAR(p.mean, 0.5 * (m0 + m1), 1e-12);
  const double v0 = posterior_variance(model.children()[0].posterior, mid, model.spec());
  const double v1_ = posterior_variance(model.children()[1].posterior, mid, model.spec());
  EXPECT_NEAR(*p.variance, 0.25 * (v0 + v1_), 1e-12);
}

TEST(SplittingModel, WeightsFormConvexCombination) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-2, 2);
  SplittingModel model(iso(2, 0.6), 5, no_training());
  for (int i = 0; i < 40; ++i) model.update(v2(u(rng), u(rng)), u(rng));
  for (int t = 0; t < 100; ++t) {
    const Vector x = v2(u(rng), u(rng));
    const auto p = model.predict_mean(x);
    EXPECT_NEAR(p.weights.sum(), 1.0, 1e-12);
    EXPECT_GE(p.weights.minCoeff(), 0.0);
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& c : model.children()) {
      const double m = posterior_mean(c.posterior, x, model.spec());
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
    EXPECT_GE(p.mean, lo - 1e-12);
    EXPECT_LE(p.mean, hi + 1e-12);
  }
}

TEST(SplittingModel, ThreeChildVarianceFormula) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> z;
  SplittingModel model(iso(2, 0.8), 6, no_training());
  for (int i = 0; i < 14; ++i) model.update(v2(z(rng), z(rng)), z(rng));
  ASSERT_GE(model.num_children(), 3);
  const Vector x = v2(0.2, -0.1);
  double S = 0.0, num = 0.0, var = 0.0;
  for (const auto& c : model.children()) S += eval(c.center, x, model.spec());
  for (const auto& c : model.children()) {
    const double w = eval(c.center, x, model.spec()) / S;
    num += w * posterior_mean(c.posterior, x, model.spec());
    var += w * w * posterior_variance(c.posterior, x, model.spec());
  }
  const auto p = model.predict(x);
  EXPECT_NEAR(p.mean, num, 1e-12);
  EXPECT_NEAR(*p.variance, var, 1e-12);
  EXPECT_NEAR(p.normalizer, S, 1e-12);
  EXPECT_DOUBLE_EQ(model.predict_variance(x), *p.variance);
  double max_var = 0.0;
  for (const auto& c : model.children()) max_var = std::max(max_var, posterior_variance(c.posterior, x, model.spec()));
  EXPECT_LE(*p.variance, max_var);
  EXPECT_GE(*p.variance, 0.0);
}

TEST(SplittingModel, UnderflowFallsBackToUniformWeights) {
  SplittingModel model(KernelSpec(Hyperparameters::isotropic(1, 1e-3)), 2, no_training());
  model.update(v1(0.0), 1.0);
  model.update(v1(0.1), 1.0);
  model.update(v1(5.0), 3.0);
  const auto p = model.predict_mean(v1(1e6));
  EXPECT_TRUE(p.uniform_fallback);
  EXPECT_EQ(p.weights, Vector::Constant(2, 0.5));
  EXPECT_TRUE(std::isfinite(p.mean));
}

TEST(SplittingModel, MemoryFootprint) {
  SplittingModel model(iso(2), 50, no_training());
  EXPECT_EQ(model.memory_footprint(), 0u);
  for (int i = 0; i < 10; ++i) model.update(v2(0.1 * i, 0.0), 0.0);
  EXPECT_EQ(model.memory_footprint(), 8u * (100 + 20 + 10 + 2));
}

TEST(SplittingModel, FootprintBoundAfterStreaming) {
  const SeedPlan seeds{8};
  const Dataset ds = synth_dataset(1000, seeds);
  const Index m = 100;
  SplittingModel model(iso(2, 0.5), m, no_training());
  model.update_batch(ds.X, ds.Y);
  const auto n = static_cast<std::size_t>(ds.size());
  const auto C = static_cast<std::size_t>(model.num_children());
  EXPECT_LE(model.memory_footprint(), 8 * (static_cast<std::size_t>(m) * n + n * 2 + n + C * 2));
}

TEST(SplittingModel, TrainingScheduleRefitsOnSplit) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> z;
  TrainSchedule schedule;
  schedule.fit.max_iterations = 5;
  SplittingModel model(iso(1), 10, schedule);
  const auto initial = model.spec();
  for (int i = 0; i < 10; ++i) model.update(v1(z(rng)), z(rng));
  EXPECT_EQ(model.spec(), initial);  // no split, no fit yet
  model.update(v1(z(rng)), z(rng));
  EXPECT_EQ(model.num_children(), 2);
  EXPECT_FALSE(model.spec() == initial);
}

TEST(SplittingModel, CachesFollowSpec) {
  SplittingModel model(iso(1), 3, no_training());
  for (double x : {0.0, 0.5, 1.0, 3.0, 3.5}) model.update(v1(x), x);
  model.set_spec(iso(1, 0.3, 2.0, 0.05));
  for (const auto& c : model.children()) EXPECT_EQ(c.posterior.spec(), model.spec());
  EXPECT_NO_THROW(model.predict(v1(0.7)));
}

TEST(SplittingModel, RejectsBadInput) {
  EXPECT_THROW(SplittingModel(iso(1), 1), ContractViolation);
  SplittingModel model(iso(2), 5);
  EXPECT_THROW(model.update(v1(0.0), 1.0), ContractViolation);
  EXPECT_THROW(model.update(v2(0.0, std::nan("")), 1.0), ContractViolation);
  EXPECT_THROW(model.update(v2(0.0, 0.0), INFINITY), ContractViolation);
}

TEST(SplittingModel, IdenticalInputsStillSplit) {
  SplittingModel model(iso(1), 2, no_training());
  for (int i = 0; i < 9; ++i) model.update(v1(1.0), static_cast<double>(i));
  EXPECT_EQ(model.size(), 9);
  for (const auto& c : model.children()) EXPECT_LE(c.size(), 2);
}

TEST(SplittingModel, OjaModeKeepsInvariants) {
  const SeedPlan seeds{3};
  const Dataset ds = synth_dataset(600, seeds);
  SplittingModel model(iso(2, 0.5), 100, no_training(), DirectionMode::kOjaStreaming);
  for (Index r = 0; r < ds.size(); ++r) model.update(ds.X.row(r), ds.Y[r]);
  EXPECT_EQ(stored_rows(model), dataset_rows(ds.X, ds.Y));
  for (const auto& c : model.children()) EXPECT_LE(c.size(), 100);
}

TEST(SplittingModel, SnapshotRoundTrip) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  SplittingModel model(KernelSpec(Hyperparameters::isotropic(2, 0.7, 1.3, 0.02)), 8, no_training());
  for (int i = 0; i < 30; ++i) model.update(v2(z(rng), z(rng)), z(rng));
  std::stringstream buf;
  model.save(buf);
  const auto back = SplittingModel::load(buf, no_training());
  EXPECT_EQ(back.spec(), model.spec());
  EXPECT_EQ(back.split_limit(), 8);
  ASSERT_EQ(back.num_children(), model.num_children());
  for (std::size_t i = 0; i < model.children().size(); ++i) {
    EXPECT_EQ(back.children()[i].inputs, model.children()[i].inputs);
    EXPECT_EQ(back.children()[i].targets, model.children()[i].targets);
    EXPECT_EQ(back.children()[i].center, model.children()[i].center);
  }
  const Vector x = v2(0.3, 0.4);
  EXPECT_EQ(back.predict_mean(x).mean, model.predict_mean(x).mean);
}

TEST(SplittingModel, SnapshotErrors) {
  std::stringstream bad("not-a-snapshot\n");
  EXPECT_THROW(SplittingModel::load(bad), DataError);
  std::stringstream truncated(
      "splitgp-snapshot 1\nsplit_limit=4\ndirection_mode=batch-svd\nlengthscales=1\n"
      "signal_variance=1\nnoise_variance=0.1\nchildren=1\nchild 2\ncenter 0\n0 1\n");
  EXPECT_THROW(SplittingModel::load(truncated), DataError);
}
