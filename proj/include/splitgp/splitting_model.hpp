#pragma once

// Streaming splitting-GP model. Observations go to the child whose center
// is most similar under the kernel; a child that grows past the splitting
// limit m is bisected along its principal direction. Predictions are a
// kernel-weighted average over every child:
//
//   mean(x*) = sum_i w_i * mean_i(x*),   w_i = k(c_i, x*) / S,   S = sum_i k(c_i, x*)

#include <Eigen/Dense>

#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "splitgp/errors.hpp"
#include "splitgp/gp_core.hpp"
#include "splitgp/kernel.hpp"
#include "splitgp/kv.hpp"
#include "splitgp/partitioner.hpp"
#include "splitgp/training.hpp"

namespace splitgp {

/// One local GP: its data, its center and the factorization cache.
struct ChildModel {
  Matrix inputs;
  Vector targets;
  Vector center;
  GpPosterior posterior;
  OjaEstimator oja;

  Index size() const { return targets.size(); }
};

struct PredictionSummary {
  double mean = 0.0;
  std::optional<double> variance;
  Vector weights;
  double normalizer = 0.0;
  /// S underflowed; uniform weights were used instead.
  bool uniform_fallback = false;
};

namespace detail {

/// w_i = k(c_i, x*) / S over the given centers.
template <typename A>
Vector center_weights(const std::vector<ChildModel>& children, const Eigen::MatrixBase<A>& x,
                      const KernelSpec& spec, double& normalizer, bool& fallback) {
  const auto C = static_cast<Index>(children.size());
  Vector s(C);
  for (Index i = 0; i < C; ++i) s[i] = eval(children[static_cast<std::size_t>(i)].center, x, spec);
  normalizer = s.sum();
  fallback = !(normalizer > 0.0) || !std::isfinite(normalizer);
  if (fallback) return Vector::Constant(C, 1.0 / static_cast<double>(C));
  return s / normalizer;
}

/// 8 bytes per stored scalar: kernel matrix, inputs, responses, center.
inline std::size_t child_footprint(Index n, Index dims) {
  const auto un = static_cast<std::size_t>(n);
  const auto ud = static_cast<std::size_t>(dims);
  return 8 * (un * un + un * ud + un + ud);
}

}  // namespace detail

class SplittingModel {
 public:
  SplittingModel(KernelSpec spec, Index split_limit, TrainSchedule schedule = {},
                 DirectionMode mode = DirectionMode::kBatchSvd)
      : trainer_(std::move(spec), std::move(schedule)), split_limit_(split_limit), mode_(mode) {
    detail::require(split_limit >= 2, "SplittingModel: splitting limit must be at least 2");
  }

  const std::vector<ChildModel>& children() const { return children_; }
  Index num_children() const { return static_cast<Index>(children_.size()); }
  const KernelSpec& spec() const { return trainer_.spec(); }
  Index split_limit() const { return split_limit_; }
  Index dims() const { return spec().dims(); }
  DirectionMode direction_mode() const { return mode_; }
  const TrainSchedule& schedule() const { return trainer_.schedule(); }
  /// A fit hit a factorization failure at some point.
  bool fit_warning() const { return trainer_.warning(); }

  Index size() const {
    Index n = 0;
    for (const auto& c : children_) n += c.size();
    return n;
  }

  template <typename A>
  void update(const Eigen::MatrixBase<A>& x, double y) {
    check_observation(x, y);
    const auto [touched, did_split] = ingest(Vector(x), y);
    const auto policy = schedule().policy;
    if (policy == TrainPolicy::kEveryUpdate ||
        (policy == TrainPolicy::kOnSplitAndBatch && did_split)) {
      train();
    } else {
      rebuild(touched);
    }
  }

  /// Sequential ingestion of every row; training (if any) runs once at the end.
  void update_batch(const Matrix& X, const Vector& Y) {
    detail::require(X.rows() == Y.size(), "update_batch: X rows and Y length differ");
    if (X.rows() == 0) return;
    detail::require(X.cols() == dims(), "update_batch: column count does not match kernel");
    for (Index r = 0; r < X.rows(); ++r) check_observation(X.row(r), Y[r]);
    std::set<Index> dirty;
    for (Index r = 0; r < X.rows(); ++r) {
      const auto [touched, did_split] = ingest(X.row(r).transpose(), Y[r]);
      dirty.insert(touched.begin(), touched.end());
    }
    if (schedule().policy != TrainPolicy::kNever) {
      train();
    } else {
      rebuild({dirty.begin(), dirty.end()});
    }
  }

  /// Fits the shared kernel to all children and rebuilds every cache.
  FitResult train() {
    detail::require(!children_.empty(), "train: model has no observations");
    std::vector<Shard> shards;
    shards.reserve(children_.size());
    for (const auto& c : children_) shards.push_back({&c.inputs, &c.targets});
    FitResult result = trainer_.fit(shards);
    rebuild_all();
    return result;
  }

  /// Replaces the kernel without fitting and rebuilds every cache.
  void set_spec(KernelSpec spec) {
    detail::require(spec.dims() == dims(), "set_spec: dimension mismatch");
    trainer_.set_spec(std::move(spec));
    rebuild_all();
  }

  template <typename A>
  PredictionSummary predict_mean(const Eigen::MatrixBase<A>& x) const {
    return predict_impl(x, false);
  }

  /// Mean and variance; the variance treats children as independent:
  /// sum_i w_i^2 var_i.
  template <typename A>
  PredictionSummary predict(const Eigen::MatrixBase<A>& x) const {
    return predict_impl(x, true);
  }

  template <typename A>
  double predict_variance(const Eigen::MatrixBase<A>& x) const {
    return *predict_impl(x, true).variance;
  }

  std::size_t memory_footprint() const {
    std::size_t total = 0;
    for (const auto& c : children_) total += detail::child_footprint(c.size(), dims());
    return total;
  }

  // ---- snapshots --------------------------------------------------------
  //
  //   splitgp-snapshot 1
  //   split_limit=<m>
  //   direction_mode=batch-svd|oja
  //   lengthscales=<l1,...>
  //   signal_variance=<v>
  //   noise_variance=<v>
  //   children=<C>
  //   child <n_i>
  //   center <c_1> ... <c_M>
  //   <x_1> ... <x_M> <y>        (n_i rows)
  //
  // Numbers use the shortest round-trip decimal form. Oja state is rebuilt
  // from the stored rows on load.

  void save(std::ostream& out) const {
    out << "splitgp-snapshot 1\n";
    out << "split_limit=" << split_limit_ << '\n';
    out << "direction_mode=" << (mode_ == DirectionMode::kBatchSvd ? "batch-svd" : "oja") << '\n';
    out << to_kv(spec().params());
    out << "children=" << children_.size() << '\n';
    for (const auto& c : children_) {
      out << "child " << c.size() << "\ncenter";
      for (Index d = 0; d < c.center.size(); ++d) out << ' ' << kv::format_double(c.center[d]);
      out << '\n';
      for (Index r = 0; r < c.size(); ++r) {
        for (Index d = 0; d < c.inputs.cols(); ++d) out << kv::format_double(c.inputs(r, d)) << ' ';
        out << kv::format_double(c.targets[r]) << '\n';
      }
    }
  }

  static SplittingModel load(std::istream& in, TrainSchedule schedule = {}) {
    std::string line;
    if (!std::getline(in, line) || kv::trim(line) != "splitgp-snapshot 1") {
      throw DataError("snapshot: missing or unsupported header");
    }
    kv::Map header;
    while (std::getline(in, line)) {
      const auto view = kv::trim(line);
      const auto eq = view.find('=');
      if (eq == std::string_view::npos) throw DataError("snapshot: malformed header line");
      header[std::string(view.substr(0, eq))] = std::string(view.substr(eq + 1));
      if (view.substr(0, eq) == "children") break;
    }
    const auto get = [&](const char* key) -> const std::string& {
      const auto it = header.find(key);
      if (it == header.end()) throw DataError(std::string("snapshot: missing key ") + key);
      return it->second;
    };
    const auto mode = get("direction_mode") == "oja" ? DirectionMode::kOjaStreaming
                                                      : DirectionMode::kBatchSvd;
    KernelSpec spec(hyperparameters_from_kv(header));
    SplittingModel model(spec, kv::to_integer(get("split_limit"), "split_limit"),
                         std::move(schedule), mode);
    model.trainer_.set_spec(spec);
    const auto count = kv::to_integer(get("children"), "children");
    const Index dims = spec.dims();
    for (long long c = 0; c < count; ++c) {
      ChildModel child;
      std::string tag;
      long long n = 0;
      in >> tag >> n;
      if (!in || tag != "child" || n < 1) throw DataError("snapshot: malformed child record");
      in >> tag;
      if (tag != "center") throw DataError("snapshot: missing center");
      child.center.resize(dims);
      for (Index d = 0; d < dims; ++d) child.center[d] = read_number(in);
      child.inputs.resize(n, dims);
      child.targets.resize(n);
      for (Index r = 0; r < n; ++r) {
        for (Index d = 0; d < dims; ++d) child.inputs(r, d) = read_number(in);
        child.targets[r] = read_number(in);
      }
      model.children_.push_back(std::move(child));
    }
    for (auto& child : model.children_) model.reseed_oja(child);
    model.rebuild_all();
    return model;
  }

 private:
  struct IngestResult {
    std::vector<Index> touched;
    bool split = false;
  };

  static double read_number(std::istream& in) {
    std::string token;
    if (!(in >> token)) throw DataError("snapshot: truncated data");
    return kv::to_double(token, "snapshot value");
  }

  template <typename A>
  void check_observation(const Eigen::MatrixBase<A>& x, double y) const {
    detail::require(x.size() == dims(), "update: input dimension does not match kernel");
    detail::require(x.allFinite() && std::isfinite(y), "update: non-finite observation");
  }

  IngestResult ingest(const Vector& x, double y) {
    if (children_.empty()) {
      ChildModel child;
      child.inputs = x.transpose();
      child.targets = Vector::Constant(1, y);
      child.center = x;
      children_.push_back(std::move(child));
      return {{0}, false};
    }

    Index best = 0;
    double best_sim = -1.0;
    for (Index i = 0; i < num_children(); ++i) {
      const double sim = eval(children_[static_cast<std::size_t>(i)].center, x, spec());
      if (sim > best_sim) {
        best_sim = sim;
        best = i;
      }
    }
    ChildModel& child = children_[static_cast<std::size_t>(best)];
    detail::append_row(child.inputs, child.targets, x, y);
    child.center = centroid(child.inputs);
    if (mode_ == DirectionMode::kOjaStreaming) {
      const Vector centered = x - child.center;
      child.oja.observe(centered);
    }
    if (child.size() <= split_limit_) return {{best}, false};

    const PrincipalDirectionEstimator est{mode_, child.oja};
    SplitResult parts;
    try {
      parts = split(child.inputs, child.targets, child.center, est);
    } catch (const DegenerateData&) {
      // Identical inputs: any direction projects to zero, which lands on
      // the rank-based bisection.
      parts = split_along(child.inputs, child.targets, child.center,
                          Vector::Unit(dims(), 0));
    }
    children_[static_cast<std::size_t>(best)] = make_child(std::move(parts.left));
    children_.push_back(make_child(std::move(parts.right)));
    return {{best, num_children() - 1}, true};
  }

  ChildModel make_child(SplitSide side) const {
    ChildModel child;
    child.inputs = std::move(side.inputs);
    child.targets = std::move(side.targets);
    child.center = std::move(side.center);
    reseed_oja(child);
    return child;
  }

  void reseed_oja(ChildModel& child) const {
    child.oja = OjaEstimator{};
    if (mode_ != DirectionMode::kOjaStreaming) return;
    for (Index r = 0; r < child.size(); ++r) {
      const Vector centered = child.inputs.row(r).transpose() - child.center;
      child.oja.observe(centered);
    }
  }

  void rebuild(const std::vector<Index>& which) {
    for (const Index i : which) {
      auto& c = children_[static_cast<std::size_t>(i)];
      c.posterior = GpPosterior(spec(), c.inputs, c.targets);
    }
  }

  /// All-or-nothing: on failure the old caches stay in place.
  void rebuild_all() {
    std::vector<GpPosterior> fresh;
    fresh.reserve(children_.size());
    for (const auto& c : children_) fresh.emplace_back(spec(), c.inputs, c.targets);
    for (std::size_t i = 0; i < children_.size(); ++i) children_[i].posterior = std::move(fresh[i]);
  }

  template <typename A>
  PredictionSummary predict_impl(const Eigen::MatrixBase<A>& x, bool with_variance) const {
    if (children_.empty()) throw ModelEmpty("predict: splitting model has no children");
    detail::require(x.size() == dims(), "predict: input dimension does not match kernel");
    PredictionSummary out;
    out.weights = detail::center_weights(children_, x, spec(), out.normalizer, out.uniform_fallback);
    double var = 0.0;
    for (std::size_t i = 0; i < children_.size(); ++i) {
      const double w = out.weights[static_cast<Index>(i)];
      out.mean += w * posterior_mean(children_[i].posterior, x, spec());
      if (with_variance) var += w * w * posterior_variance(children_[i].posterior, x, spec());
    }
    if (with_variance) out.variance = var;
    return out;
  }

  std::vector<ChildModel> children_;
  Trainer trainer_;
  Index split_limit_ = 2;
  DirectionMode mode_ = DirectionMode::kBatchSvd;
};

}  // namespace splitgp
