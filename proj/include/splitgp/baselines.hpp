#pragma once

// Comparison models behind one streaming interface: a single full GP, the
// similarity-threshold local GP (w_gen), the robust Bayesian committee
// machine with random expert assignment, and an adapter for SplittingModel.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "splitgp/errors.hpp"
#include "splitgp/gp_core.hpp"
#include "splitgp/kernel.hpp"
#include "splitgp/splitting_model.hpp"
#include "splitgp/training.hpp"

namespace splitgp {

struct RegressorPrediction {
  double mean = 0.0;
  std::optional<double> variance;
  /// Weights underflowed and a uniform fallback was used.
  bool fallback = false;
};

class OnlineRegressor {
 public:
  virtual ~OnlineRegressor() = default;

  virtual std::string name() const = 0;
  virtual void ingest(const Vector& x, double y) = 0;
  virtual void ingest_batch(const Matrix& X, const Vector& Y) = 0;
  virtual RegressorPrediction predict(const Vector& x) const = 0;
  /// Mean only; skips variance work where the model allows it.
  virtual RegressorPrediction predict_mean(const Vector& x) const { return predict(x); }
  /// Analytic storage in bytes (kernel matrices plus stored data).
  virtual std::size_t footprint() const = 0;
  /// Local models / experts / children currently held.
  virtual Index num_components() const = 0;
  virtual FitResult train() = 0;
  virtual const KernelSpec& spec() const = 0;
  /// Some fit hit a factorization failure.
  virtual bool warning() const = 0;
};

namespace detail {

inline void check_batch(const Matrix& X, const Vector& Y, Index dims) {
  require(X.rows() == Y.size(), "ingest_batch: X rows and Y length differ");
  require(X.rows() == 0 || X.cols() == dims, "ingest_batch: column count does not match kernel");
  require(X.allFinite() && Y.allFinite(), "ingest_batch: non-finite observation");
}

inline void check_point(const Vector& x, double y, Index dims) {
  require(x.size() == dims, "ingest: input dimension does not match kernel");
  require(x.allFinite() && std::isfinite(y), "ingest: non-finite observation");
}

}  // namespace detail

// ---- full GP --------------------------------------------------------------

class FullGp final : public OnlineRegressor {
 public:
  explicit FullGp(KernelSpec spec, TrainSchedule schedule = {})
      : trainer_(std::move(spec), std::move(schedule)), posterior_(trainer_.spec()) {}

  std::string name() const override { return "fullgp"; }

  void ingest(const Vector& x, double y) override {
    detail::check_point(x, y, spec().dims());
    detail::append_row(X_, Y_, x, y);
    if (trainer_.schedule().policy == TrainPolicy::kEveryUpdate) {
      train();
    } else {
      rebuild();
    }
  }

  void ingest_batch(const Matrix& X, const Vector& Y) override {
    detail::check_batch(X, Y, spec().dims());
    if (X.rows() == 0) return;
    const Index n = X_.rows();
    X_.conservativeResize(n + X.rows(), spec().dims());
    Y_.conservativeResize(n + X.rows());
    X_.bottomRows(X.rows()) = X;
    Y_.tail(X.rows()) = Y;
    if (trainer_.schedule().policy != TrainPolicy::kNever) {
      train();
    } else {
      rebuild();
    }
  }

  RegressorPrediction predict(const Vector& x) const override {
    return {posterior_mean(posterior_, x, spec()), posterior_variance(posterior_, x, spec())};
  }

  RegressorPrediction predict_mean(const Vector& x) const override {
    return {posterior_mean(posterior_, x, spec()), std::nullopt};
  }

  std::size_t footprint() const override {
    const auto n = static_cast<std::size_t>(Y_.size());
    const auto d = static_cast<std::size_t>(spec().dims());
    return 8 * (n * n + n * d + n);
  }

  Index num_components() const override { return Y_.size() > 0 ? 1 : 0; }

  FitResult train() override {
    detail::require(Y_.size() > 0, "train: full GP has no observations");
    const Shard shard{&X_, &Y_};
    FitResult result = trainer_.fit(std::span<const Shard>(&shard, 1));
    rebuild();
    return result;
  }

  const KernelSpec& spec() const override { return trainer_.spec(); }
  bool warning() const override { return trainer_.warning(); }

  const GpPosterior& posterior() const { return posterior_; }

 private:
  void rebuild() { posterior_ = GpPosterior(spec(), X_, Y_); }

  Trainer trainer_;
  Matrix X_;
  Vector Y_;
  GpPosterior posterior_;
};

// ---- threshold local GP ---------------------------------------------------

/// Local GP with a similarity threshold: a new local model is opened iff the
/// normalized similarity k(x, c_i) / sf2 is <= w_gen for every existing
/// center; otherwise x joins the most similar model.
class LocalGpWgen final : public OnlineRegressor {
 public:
  /// Similarities below this are treated as exactly zero.
  static constexpr double kSimilarityFloor = 1e-300;

  LocalGpWgen(KernelSpec spec, double w_gen, TrainSchedule schedule = {})
      : trainer_(std::move(spec), std::move(schedule)), w_gen_(w_gen) {
    detail::require(w_gen > 0.0 && w_gen <= 1.0, "LocalGpWgen: w_gen must lie in (0, 1]");
  }

  std::string name() const override { return "localgp"; }
  double w_gen() const { return w_gen_; }
  const std::vector<ChildModel>& models() const { return models_; }

  void ingest(const Vector& x, double y) override {
    detail::check_point(x, y, spec().dims());
    const Index touched = assign(x, y);
    if (trainer_.schedule().policy == TrainPolicy::kEveryUpdate) {
      train();
    } else {
      rebuild(touched);
    }
  }

  void ingest_batch(const Matrix& X, const Vector& Y) override {
    detail::check_batch(X, Y, spec().dims());
    if (X.rows() == 0) return;
    std::set<Index> dirty;
    for (Index r = 0; r < X.rows(); ++r) dirty.insert(assign(X.row(r).transpose(), Y[r]));
    if (trainer_.schedule().policy != TrainPolicy::kNever) {
      train();
    } else {
      for (const Index i : dirty) rebuild(i);
    }
  }

  RegressorPrediction predict(const Vector& x) const override {
    if (models_.empty()) throw ModelEmpty("predict: local GP has no models");
    const Vector s = similarities(x);
    const double total = s.sum();
    Vector w;
    const bool fallback = !(total > 0.0 && std::isfinite(total));
    if (fallback) {
      w = Vector::Constant(s.size(), 1.0 / static_cast<double>(s.size()));
    } else {
      w = s / total;
    }
    double mean = 0.0;
    for (std::size_t i = 0; i < models_.size(); ++i) {
      const double wi = w[static_cast<Index>(i)];
      if (wi == 0.0) continue;
      mean += wi * posterior_mean(models_[i].posterior, x, spec());
    }
    return {mean, std::nullopt, fallback};
  }

  std::size_t footprint() const override {
    std::size_t total = 0;
    for (const auto& m : models_) total += detail::child_footprint(m.size(), spec().dims());
    return total;
  }

  Index num_components() const override { return static_cast<Index>(models_.size()); }

  FitResult train() override {
    detail::require(!models_.empty(), "train: local GP has no observations");
    std::vector<Shard> shards;
    for (const auto& m : models_) shards.push_back({&m.inputs, &m.targets});
    FitResult result = trainer_.fit(shards);
    std::vector<GpPosterior> fresh;
    for (const auto& m : models_) fresh.emplace_back(spec(), m.inputs, m.targets);
    for (std::size_t i = 0; i < models_.size(); ++i) models_[i].posterior = std::move(fresh[i]);
    return result;
  }

  const KernelSpec& spec() const override { return trainer_.spec(); }
  bool warning() const override { return trainer_.warning(); }

  /// k(x, c_i) / sf2 with the underflow clamp applied.
  Vector similarities(const Vector& x) const {
    Vector s(static_cast<Index>(models_.size()));
    for (std::size_t i = 0; i < models_.size(); ++i) {
      double v = eval(models_[i].center, x, spec()) / spec().signal_variance();
      if (v < kSimilarityFloor) v = 0.0;
      s[static_cast<Index>(i)] = v;
    }
    return s;
  }

 private:
  Index assign(const Vector& x, double y) {
    if (!models_.empty()) {
      const Vector s = similarities(x);
      Index best = 0;
      const double top = s.maxCoeff(&best);
      if (top > w_gen_) {
        ChildModel& m = models_[static_cast<std::size_t>(best)];
        detail::append_row(m.inputs, m.targets, x, y);
        m.center = centroid(m.inputs);
        return best;
      }
    }
    ChildModel m;
    m.inputs = x.transpose();
    m.targets = Vector::Constant(1, y);
    m.center = x;
    models_.push_back(std::move(m));
    return static_cast<Index>(models_.size()) - 1;
  }

  void rebuild(Index i) {
    auto& m = models_[static_cast<std::size_t>(i)];
    m.posterior = GpPosterior(spec(), m.inputs, m.targets);
  }

  Trainer trainer_;
  double w_gen_;
  std::vector<ChildModel> models_;
};

// ---- robust Bayesian committee machine -------------------------------------

/// E experts, each observation sent to a uniformly random expert. Prediction
/// combines the non-empty experts:
///
///   beta_k   = 0.5 * (log s_prior^2 - log s_k^2(x*))
///   prec     = sum_k beta_k / s_k^2 + (1 - sum_k beta_k) / s_prior^2
///   mean     = (1 / prec) * sum_k beta_k * mu_k / s_k^2
///
/// With a single expert beta is 1, which reproduces that expert exactly.
class Rbcm final : public OnlineRegressor {
 public:
  Rbcm(KernelSpec spec, Index experts, std::uint64_t seed, TrainSchedule schedule = {})
      : trainer_(std::move(spec), std::move(schedule)),
        experts_(static_cast<std::size_t>(experts)),
        rng_(seed) {
    detail::require(experts >= 1, "Rbcm: needs at least one expert");
    for (auto& e : experts_) e.posterior = GpPosterior(trainer_.spec());
  }

  std::string name() const override { return "rbcm"; }
  Index num_experts() const { return static_cast<Index>(experts_.size()); }
  const std::vector<ChildModel>& experts() const { return experts_; }
  const std::vector<Index>& assignments() const { return assignments_; }

  void ingest(const Vector& x, double y) override {
    detail::check_point(x, y, spec().dims());
    const Index e = assign(x, y);
    if (trainer_.schedule().policy == TrainPolicy::kEveryUpdate) {
      train();
    } else {
      rebuild(e);
    }
  }

  void ingest_batch(const Matrix& X, const Vector& Y) override {
    detail::check_batch(X, Y, spec().dims());
    if (X.rows() == 0) return;
    std::set<Index> dirty;
    for (Index r = 0; r < X.rows(); ++r) dirty.insert(assign(X.row(r).transpose(), Y[r]));
    if (trainer_.schedule().policy != TrainPolicy::kNever) {
      train();
    } else {
      for (const Index i : dirty) rebuild(i);
    }
  }

  RegressorPrediction predict(const Vector& x) const override {
    const double prior_var = spec().signal_variance();
    const double var_floor = 1e-12 * prior_var;
    bool any = false;
    double beta_sum = 0.0;
    double precision = 0.0;
    double weighted = 0.0;
    const bool single = experts_.size() == 1;
    for (const auto& e : experts_) {
      if (e.size() == 0) continue;
      any = true;
      const double mu = posterior_mean(e.posterior, x, spec());
      const double var = std::max(posterior_variance(e.posterior, x, spec()), var_floor);
      const double beta = single ? 1.0 : 0.5 * (std::log(prior_var) - std::log(var));
      beta_sum += beta;
      precision += beta / var;
      weighted += beta * mu / var;
    }
    if (!any) throw ModelEmpty("predict: every rBCM expert is empty");
    precision += (1.0 - beta_sum) / prior_var;
    if (!(precision > 0.0) || !std::isfinite(precision) || !std::isfinite(weighted)) {
      throw NumericalFailure("rBCM: combined precision is not positive and finite");
    }
    const double var = 1.0 / precision;
    return {var * weighted, var};
  }

  std::size_t footprint() const override {
    std::size_t total = 0;
    const auto d = static_cast<std::size_t>(spec().dims());
    for (const auto& e : experts_) {
      const auto n = static_cast<std::size_t>(e.size());
      total += 8 * (n * n + n * d + n);
    }
    return total;
  }

  Index num_components() const override { return num_experts(); }

  FitResult train() override {
    std::vector<Shard> shards;
    for (const auto& e : experts_) shards.push_back({&e.inputs, &e.targets});
    FitResult result = trainer_.fit(shards);
    std::vector<GpPosterior> fresh;
    for (const auto& e : experts_) fresh.emplace_back(spec(), e.inputs, e.targets);
    for (std::size_t i = 0; i < experts_.size(); ++i) experts_[i].posterior = std::move(fresh[i]);
    return result;
  }

  const KernelSpec& spec() const override { return trainer_.spec(); }
  bool warning() const override { return trainer_.warning(); }

 private:
  Index assign(const Vector& x, double y) {
    std::uniform_int_distribution<Index> pick(0, num_experts() - 1);
    const Index e = pick(rng_);
    auto& expert = experts_[static_cast<std::size_t>(e)];
    if (expert.size() == 0) expert.inputs.resize(0, spec().dims());
    detail::append_row(expert.inputs, expert.targets, x, y);
    assignments_.push_back(e);
    return e;
  }

  void rebuild(Index i) {
    auto& e = experts_[static_cast<std::size_t>(i)];
    e.posterior = GpPosterior(spec(), e.inputs, e.targets);
  }

  Trainer trainer_;
  std::vector<ChildModel> experts_;
  std::vector<Index> assignments_;
  std::mt19937_64 rng_;
};

// ---- splitting model adapter ----------------------------------------------

class SplittingRegressor final : public OnlineRegressor {
 public:
  explicit SplittingRegressor(SplittingModel model) : model_(std::move(model)) {}

  std::string name() const override { return "splitting"; }
  void ingest(const Vector& x, double y) override { model_.update(x, y); }
  void ingest_batch(const Matrix& X, const Vector& Y) override { model_.update_batch(X, Y); }

  RegressorPrediction predict(const Vector& x) const override {
    const auto p = model_.predict(x);
    return {p.mean, p.variance, p.uniform_fallback};
  }

  RegressorPrediction predict_mean(const Vector& x) const override {
    const auto p = model_.predict_mean(x);
    return {p.mean, std::nullopt, p.uniform_fallback};
  }

  std::size_t footprint() const override { return model_.memory_footprint(); }
  Index num_components() const override { return model_.num_children(); }
  FitResult train() override { return model_.train(); }
  const KernelSpec& spec() const override { return model_.spec(); }
  bool warning() const override { return model_.fit_warning(); }

  const SplittingModel& model() const { return model_; }

 private:
  SplittingModel model_;
};

}  // namespace splitgp
