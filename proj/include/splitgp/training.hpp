#pragma once

// Shared-hyperparameter training used by every model that holds several
// local GPs: one KernelSpec, fitted by maximizing the summed LML of all
// local data sets.

#include <span>
#include <vector>

#include "splitgp/gp_core.hpp"
#include "splitgp/kernel.hpp"

namespace splitgp {

enum class TrainPolicy {
  kNever,
  /// Refit after every split / after every batch.
  kOnSplitAndBatch,
  /// Refit after every single observation.
  kEveryUpdate,
};

struct TrainSchedule {
  TrainPolicy policy = TrainPolicy::kOnSplitAndBatch;
  FitSettings fit;
  /// On the first fit, reset signal/noise variance from the data seen so far.
  bool init_from_data = true;
};

class Trainer {
 public:
  Trainer() = default;
  Trainer(KernelSpec spec, TrainSchedule schedule)
      : spec_(std::move(spec)), schedule_(std::move(schedule)) {}

  const KernelSpec& spec() const { return spec_; }
  const TrainSchedule& schedule() const { return schedule_; }
  bool warning() const { return warning_; }
  bool initialized() const { return initialized_; }

  void set_spec(KernelSpec spec) {
    spec_ = std::move(spec);
    initialized_ = true;
  }

  /// Fits spec() to the shards and stores the result.
  FitResult fit(std::span<const Shard> shards) {
    if (schedule_.init_from_data && !initialized_) {
      spec_ = pooled_default_spec(shards);
    }
    initialized_ = true;
    FitResult result = splitgp::fit(shards, spec_, schedule_.fit);
    warning_ = warning_ || result.numerical_warning;
    spec_ = result.spec;
    return result;
  }

 private:
  KernelSpec pooled_default_spec(std::span<const Shard> shards) const {
    Index total = 0;
    for (const auto& s : shards) total += s.targets->size();
    Vector all(total);
    Index offset = 0;
    for (const auto& s : shards) {
      all.segment(offset, s.targets->size()) = *s.targets;
      offset += s.targets->size();
    }
    KernelSpec out = default_spec(all, spec_.dims(), spec_);
    if (out == spec_) return spec_;
    // Keep the caller's lengthscales; only the variances come from data.
    Hyperparameters p = out.params();
    p.lengthscales = spec_.lengthscales();
    return KernelSpec(std::move(p), spec_.family());
  }

  KernelSpec spec_;
  TrainSchedule schedule_;
  bool initialized_ = false;
  bool warning_ = false;
};

namespace detail {

template <typename A>
void append_row(Matrix& X, Vector& Y, const Eigen::MatrixBase<A>& x, double y) {
  const Index n = X.rows();
  X.conservativeResize(n + 1, x.size());
  Y.conservativeResize(n + 1);
  X.row(n) = x.transpose();
  Y[n] = y;
}

}  // namespace detail
}  // namespace splitgp
