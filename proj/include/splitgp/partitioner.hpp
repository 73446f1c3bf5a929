#pragma once

// Principal-direction bisection of one child's data. The hyperplane passes
// through the child's center and is orthogonal to the first principal
// component of its inputs; rows with a strictly positive projection go left.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "splitgp/errors.hpp"
#include "splitgp/kernel.hpp"

namespace splitgp {

enum class DirectionMode { kBatchSvd, kOjaStreaming };

/// Oja's rule for the leading eigenvector of a stream of mean-centered
/// observations, with learning rate 1/(100 + t).
class OjaEstimator {
 public:
  static double learning_rate(std::size_t t) { return 1.0 / (100.0 + static_cast<double>(t)); }

  template <typename A>
  void observe(const Eigen::MatrixBase<A>& observation) {
    const Vector centered = observation;
    if (!initialized_) {
      const double norm = centered.norm();
      if (norm == 0.0 || !std::isfinite(norm)) return;
      w_ = centered / norm;
      initialized_ = true;
      steps_ = 1;
      return;
    }
    const double eta = learning_rate(steps_);
    const double y = w_.dot(centered);
    w_ += eta * y * (centered - y * w_);
    const double norm = w_.norm();
    if (norm > 0.0 && std::isfinite(norm)) w_ /= norm;
    ++steps_;
  }

  bool ready() const { return initialized_; }
  std::size_t steps() const { return steps_; }
  const Vector& raw_direction() const { return w_; }

 private:
  Vector w_;
  std::size_t steps_ = 0;
  bool initialized_ = false;
};

struct PrincipalDirectionEstimator {
  DirectionMode mode = DirectionMode::kBatchSvd;
  /// Streaming state; only consulted in kOjaStreaming mode.
  OjaEstimator oja;
};

namespace detail {

/// First non-negligible component made positive.
inline Vector canonical_sign(Vector v) {
  const double tol = 1e-12 * v.lpNorm<Eigen::Infinity>();
  for (Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > tol) {
      if (v[i] < 0.0) v = -v;
      break;
    }
  }
  return v;
}

inline Matrix centered_rows(const Matrix& X) {
  const Eigen::RowVectorXd mean = X.colwise().mean();
  return X.rowwise() - mean;
}

inline bool all_rows_identical(const Matrix& X) {
  for (Index i = 1; i < X.rows(); ++i) {
    if (X.row(i) != X.row(0)) return false;
  }
  return true;
}

}  // namespace detail

inline Vector centroid(const Matrix& X) {
  detail::require(X.rows() >= 1, "centroid: needs at least one row");
  return X.colwise().mean().transpose();
}

/// Unit vector along the direction of largest spread of the mean-centered
/// rows. Sign: first nonzero component positive. A tied leading singular
/// value is resolved toward the lowest-index coordinate axis.
inline Vector principal_direction(const Matrix& X, const PrincipalDirectionEstimator& est = {}) {
  detail::require(X.rows() >= 2, "principal_direction: needs at least two rows");
  if (detail::all_rows_identical(X)) {
    throw DegenerateData("principal_direction: all rows are identical");
  }
  const Matrix centered = detail::centered_rows(X);

  if (est.mode == DirectionMode::kOjaStreaming) {
    Vector w;
    if (est.oja.ready()) {
      w = est.oja.raw_direction();
    } else {
      OjaEstimator local;
      for (Index i = 0; i < centered.rows(); ++i) local.observe(centered.row(i));
      w = local.raw_direction();
    }
    return detail::canonical_sign(w.normalized());
  }

  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const Matrix& V = svd.matrixV();
  const double tie_tol = 1e-10 * sv[0];
  Index tied = 1;
  while (tied < sv.size() && sv[0] - sv[tied] <= tie_tol) ++tied;
  if (tied == 1) return detail::canonical_sign(V.col(0));

  // Project coordinate axes onto the tied subspace, lowest index first.
  const Matrix basis = V.leftCols(tied);
  for (Index axis = 0; axis < X.cols(); ++axis) {
    const Vector proj = basis * basis.row(axis).transpose();
    if (proj.norm() > 1e-8) return detail::canonical_sign(proj.normalized());
  }
  return detail::canonical_sign(V.col(0));
}

struct SplitSide {
  Matrix inputs;
  Vector targets;
  Vector center;
  /// Row indices into the parent.
  std::vector<Index> rows;
};

struct SplitResult {
  SplitSide left;
  SplitSide right;
  /// The hyperplane through the center left one side empty; rows were split
  /// at the median projection instead.
  bool median_fallback = false;
};

namespace detail {

inline SplitSide gather(const Matrix& X, const Vector& Y, std::vector<Index> rows) {
  SplitSide side;
  side.inputs.resize(static_cast<Index>(rows.size()), X.cols());
  side.targets.resize(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    side.inputs.row(static_cast<Index>(k)) = X.row(rows[k]);
    side.targets[static_cast<Index>(k)] = Y[rows[k]];
  }
  if (!rows.empty()) side.center = centroid(side.inputs);
  side.rows = std::move(rows);
  return side;
}

}  // namespace detail

/// Bisect along a given direction: I_j = v^T (x_j - c) > 0 goes left, else
/// right. If either side comes out empty, rows are ranked by projection and
/// the upper half goes left.
inline SplitResult split_along(const Matrix& X, const Vector& Y, const Vector& center,
                               const Vector& direction) {
  detail::require(X.rows() == Y.size(), "split: X rows and Y length differ");
  detail::require(X.rows() >= 2, "split: needs at least two rows");
  detail::require(center.size() == X.cols() && direction.size() == X.cols(),
                  "split: center/direction dimension mismatch");
  const Index n = X.rows();
  const Vector proj = (X.rowwise() - center.transpose()) * direction;

  std::vector<Index> left, right;
  for (Index j = 0; j < n; ++j) (proj[j] > 0.0 ? left : right).push_back(j);

  SplitResult result;
  if (left.empty() || right.empty()) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return proj[a] < proj[b]; });
    const auto half = order.begin() + static_cast<std::ptrdiff_t>(n / 2);
    right.assign(order.begin(), half);
    left.assign(half, order.end());
    std::sort(left.begin(), left.end());
    std::sort(right.begin(), right.end());
    result.median_fallback = true;
  }
  result.left = detail::gather(X, Y, std::move(left));
  result.right = detail::gather(X, Y, std::move(right));
  return result;
}

/// PDDP bisection of a child (X, Y, c).
inline SplitResult split(const Matrix& X, const Vector& Y, const Vector& center,
                         const PrincipalDirectionEstimator& est = {}) {
  detail::require(X.rows() >= 2, "split: needs at least two rows");
  return split_along(X, Y, center, principal_direction(X, est));
}

/// Sum over both sides of squared distances from rows to their side's centroid.
inline double within_cluster_scatter(const SplitResult& s) {
  double total = 0.0;
  for (const SplitSide* side : {&s.left, &s.right}) {
    if (side->rows.empty()) continue;
    total += (side->inputs.rowwise() - side->center.transpose()).squaredNorm();
  }
  return total;
}

}  // namespace splitgp
