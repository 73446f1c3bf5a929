#pragma once

// Exact zero-mean GP inference on a single data set: posterior mean and
// variance, log marginal likelihood with its gradient, and a gradient-ascent
// hyperparameter fit that shares one KernelSpec across several shards.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "splitgp/errors.hpp"
#include "splitgp/kernel.hpp"

namespace splitgp {

/// Diagonal floor used when the noise variance alone does not make the
/// kernel matrix factorizable.
inline constexpr double kJitterFloor = 1e-8;

namespace detail {

struct Factorization {
  Matrix lower;     // L with L L^T = K + (sn2 + extra) I
  double jitter = 0.0;  // extra diagonal added beyond sn2
};

inline bool factor_ok(const Eigen::LLT<Matrix>& llt) {
  if (llt.info() != Eigen::Success) return false;
  const auto diag = llt.matrixLLT().diagonal();
  return diag.allFinite() && (diag.array() > 0.0).all();
}

/// Cholesky of gram+noise. Only if that fails and sn2 is below the floor is
/// the diagonal raised to kJitterFloor.
inline Factorization factorize(const Matrix& X, const KernelSpec& spec) {
  Matrix K = gram(X, spec, true);
  Eigen::LLT<Matrix> llt(K);
  if (factor_ok(llt)) return {llt.matrixL(), 0.0};
  if (spec.noise_variance() < kJitterFloor) {
    const double extra = kJitterFloor - spec.noise_variance();
    K.diagonal().array() += extra;
    llt.compute(K);
    if (factor_ok(llt)) return {llt.matrixL(), extra};
  }
  throw NumericalFailure("kernel matrix of size " + std::to_string(X.rows()) +
                         " is not positive definite");
}

}  // namespace detail

/// Training data for one GP together with its cached factorization. Built
/// once; immutable afterwards.
class GpPosterior {
 public:
  GpPosterior() = default;

  GpPosterior(const KernelSpec& spec, Matrix X, Vector Y)
      : spec_(spec), X_(std::move(X)), Y_(std::move(Y)) {
    detail::require(X_.rows() == Y_.size(), "GpPosterior: X rows and Y length differ");
    detail::require(X_.rows() == 0 || X_.cols() == spec_.dims(),
                    "GpPosterior: X columns do not match kernel dimension");
    if (!X_.allFinite() || !Y_.allFinite()) throw ContractViolation("GpPosterior: non-finite data");
    if (X_.rows() == 0) return;
    auto f = detail::factorize(X_, spec_);
    L_ = std::move(f.lower);
    jitter_ = f.jitter;
    alpha_ = L_.triangularView<Eigen::Lower>().solve(Y_);
    L_.triangularView<Eigen::Lower>().transpose().solveInPlace(alpha_);
  }

  explicit GpPosterior(const KernelSpec& spec) : spec_(spec) {}

  Index size() const { return Y_.size(); }
  const KernelSpec& spec() const { return spec_; }
  const Matrix& inputs() const { return X_; }
  const Vector& targets() const { return Y_; }
  const Matrix& cholesky_factor() const { return L_; }
  const Vector& alpha() const { return alpha_; }
  /// Diagonal added on top of the noise variance (0 unless the floor kicked in).
  double jitter() const { return jitter_; }

  void check_spec(const KernelSpec& spec) const {
    if (!(spec == spec_)) {
      throw ContractViolation("GpPosterior: cache was built for a different kernel spec");
    }
  }

 private:
  KernelSpec spec_;
  Matrix X_;
  Vector Y_;
  Matrix L_;
  Vector alpha_;
  double jitter_ = 0.0;
};

template <typename A>
double posterior_mean(const GpPosterior& post, const Eigen::MatrixBase<A>& x_star,
                      const KernelSpec& spec) {
  post.check_spec(spec);
  if (post.size() == 0) return 0.0;
  return cross_kernel(post.inputs(), x_star, spec).dot(post.alpha());
}

/// Latent (noise-free) posterior variance.
template <typename A>
double posterior_variance(const GpPosterior& post, const Eigen::MatrixBase<A>& x_star,
                          const KernelSpec& spec) {
  post.check_spec(spec);
  const double prior = spec.signal_variance();
  if (post.size() == 0) return prior;
  Vector v = cross_kernel(post.inputs(), x_star, spec);
  post.cholesky_factor().triangularView<Eigen::Lower>().solveInPlace(v);
  const double var = prior - v.squaredNorm();
  if (var < 0.0) {
    if (var < -1e-10) {
      throw NumericalFailure("posterior variance " + std::to_string(var) + " is negative");
    }
    return 0.0;
  }
  return var;
}

inline double log_marginal_likelihood(const GpPosterior& post, const KernelSpec& spec) {
  post.check_spec(spec);
  detail::require(post.size() >= 1, "log_marginal_likelihood: needs at least one observation");
  const double n = static_cast<double>(post.size());
  const double log_det = 2.0 * post.cholesky_factor().diagonal().array().log().sum();
  return -0.5 * post.targets().dot(post.alpha()) - 0.5 * log_det -
         0.5 * n * std::log(2.0 * std::numbers::pi);
}

namespace detail {

/// Lower triangle of K^-1 = L^-T L^-1, in blocks so that the zero upper
/// triangles are never touched (about 2n^3/3 flops).
inline Matrix inverse_from_cholesky(const Matrix& L) {
  const Index n = L.rows();
  constexpr Index kBlock = 64;
  // Linv is lower triangular; column block j only has rows >= j.
  Matrix Linv = Matrix::Zero(n, n);
  for (Index j = 0; j < n; j += kBlock) {
    const Index b = std::min(kBlock, n - j);
    auto panel = Linv.block(j, j, n - j, b);
    panel.topRows(b).setIdentity();
    L.bottomRightCorner(n - j, n - j).triangularView<Eigen::Lower>().solveInPlace(panel);
  }
  // (L^-T L^-1)(i, k) = sum over r >= max(i, k) of Linv(r, i) Linv(r, k).
  Matrix Kinv(n, n);
  for (Index k = 0; k < n; k += kBlock) {
    const Index b = std::min(kBlock, n - k);
    Kinv.block(k, k, n - k, b).noalias() =
        Linv.bottomRightCorner(n - k, n - k).transpose().triangularView<Eigen::Upper>() *
        Linv.block(k, k, n - k, b);
  }
  return Kinv;
}

/// 0.5 * tr((a a^T - Kinv) dK/dtheta_j) for every log-domain parameter,
/// without materializing the per-parameter matrices.
inline Vector lml_gradient_impl(const Matrix& X, const KernelSpec& spec, const Matrix& L,
                                const Vector& alpha) {
  const Index n = X.rows();
  const Index m = spec.dims();
  // Lower triangle of W = alpha alpha^T - K^-1.
  Matrix W = inverse_from_cholesky(L);
  W *= -1.0;
  W.selfadjointView<Eigen::Lower>().rankUpdate(alpha, 1.0);

  const Matrix K = gram(X, spec, false);
  Vector g = Vector::Zero(m + 2);
  // Lower triangle only; off-diagonal terms count twice.
  for (Index j = 0; j < n; ++j) {
    for (Index i = j; i < n; ++i) {
      const double scale = (i == j ? 0.5 : 1.0) * W(i, j) * K(i, j);
      g[m] += scale;
      if (i == j) continue;
      for (Index d = 0; d < m; ++d) {
        const double diff = X(i, d) - X(j, d);
        g[d] += scale * diff * diff;
      }
    }
  }
  for (Index d = 0; d < m; ++d) {
    const double l = spec.lengthscales()[d];
    g[d] /= l * l;
  }
  g[m + 1] = 0.5 * spec.noise_variance() * W.diagonal().sum();
  return g;
}

}  // namespace detail

/// Gradient of the LML with respect to to_log() coordinates.
inline Vector lml_gradient(const GpPosterior& post, const KernelSpec& spec) {
  post.check_spec(spec);
  detail::require(post.size() >= 1, "lml_gradient: needs at least one observation");
  return detail::lml_gradient_impl(post.inputs(), spec, post.cholesky_factor(), post.alpha());
}

// ---- hyperparameter fitting -----------------------------------------------

struct Shard {
  const Matrix* inputs = nullptr;
  const Vector* targets = nullptr;
};

struct FitSettings {
  int max_iterations = 50;
  double gradient_tolerance = 1e-5;
  /// Stop once an accepted step improves the objective by less than this
  /// fraction of |objective|.
  double relative_tolerance = 1e-10;
  /// Largest move of any log-domain coordinate on the first trial step.
  double initial_step = 0.5;
  int max_backtracks = 30;
  double time_budget_seconds = std::numeric_limits<double>::infinity();
  double log_lower_bound = std::log(1e-6);
  double log_upper_bound = std::log(1e6);
};

struct FitResult {
  KernelSpec spec;
  double objective = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  /// An inner factorization failed; spec is the last feasible one.
  bool numerical_warning = false;
};

struct LmlValue {
  double value = 0.0;
  Vector gradient;
};

namespace detail {

/// Per-shard posteriors at one spec plus their summed LML.
struct ShardEvaluation {
  std::vector<GpPosterior> posteriors;
  double value = 0.0;
};

inline ShardEvaluation evaluate_shards(std::span<const Shard> shards, const KernelSpec& spec) {
  ShardEvaluation out;
  for (const auto& shard : shards) {
    if (shard.targets->size() == 0) continue;
    out.posteriors.emplace_back(spec, *shard.inputs, *shard.targets);
    out.value += log_marginal_likelihood(out.posteriors.back(), spec);
  }
  return out;
}

inline Vector shard_gradient(const ShardEvaluation& eval, const KernelSpec& spec) {
  Vector g = Vector::Zero(spec.num_params());
  for (const auto& post : eval.posteriors) g += lml_gradient(post, spec);
  return g;
}

}  // namespace detail

/// Sum over shards of LML and its log-domain gradient. Shards share the
/// kernel spec; cross-shard covariance is ignored.
inline LmlValue summed_lml(std::span<const Shard> shards, const KernelSpec& spec,
                           bool with_gradient = true) {
  const auto eval = detail::evaluate_shards(shards, spec);
  return {eval.value, with_gradient ? detail::shard_gradient(eval, spec)
                                    : Vector::Zero(spec.num_params()).eval()};
}

/// Gradient ascent on the summed LML in the log domain with Barzilai-Borwein
/// trial steps and Armijo backtracking. Only improving steps are accepted.
inline FitResult fit(std::span<const Shard> shards, const KernelSpec& init,
                     const FitSettings& settings = {}) {
  bool any = false;
  for (const auto& s : shards) {
    detail::require(s.inputs && s.targets && s.inputs->rows() == s.targets->size(),
                    "fit: malformed shard");
    any = any || s.targets->size() > 0;
  }
  detail::require(any, "fit: needs at least one non-empty shard");

  FitResult result{init};
  if (settings.max_iterations <= 0) return result;

  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  const Index p = init.num_params();
  // Zero noise stays zero: its log is -inf.
  Vector free_mask = Vector::Ones(p);
  if (init.noise_variance() == 0.0) free_mask[p - 1] = 0.0;

  Vector theta = init.to_log();
  if (free_mask[p - 1] == 0.0) theta[p - 1] = 0.0;
  const auto to_spec = [&](const Vector& t) {
    Vector full = t;
    KernelSpec s = KernelSpec::from_log(full, init.family());
    if (free_mask[p - 1] == 0.0) {
      Hyperparameters h = s.params();
      h.noise_variance = 0.0;
      s = KernelSpec(std::move(h), init.family());
    }
    return s;
  };

  LmlValue current;
  try {
    current = summed_lml(shards, init);
  } catch (const NumericalFailure&) {
    result.numerical_warning = true;
    return result;
  }
  current.gradient.array() *= free_mask.array();
  result.objective = current.value;

  double step = settings.initial_step / std::max(current.gradient.lpNorm<Eigen::Infinity>(), 1e-300);
  for (int iter = 0; iter < settings.max_iterations; ++iter) {
    if (current.gradient.lpNorm<Eigen::Infinity>() < settings.gradient_tolerance) {
      result.converged = true;
      break;
    }
    if (elapsed() > settings.time_budget_seconds) break;

    bool accepted = false;
    Vector candidate;
    LmlValue next;
    for (int bt = 0; bt < settings.max_backtracks; ++bt) {
      candidate = (theta + step * current.gradient)
                      .cwiseMax(settings.log_lower_bound)
                      .cwiseMin(settings.log_upper_bound);
      if (free_mask[p - 1] == 0.0) candidate[p - 1] = 0.0;
      const Vector move = candidate - theta;
      if (move.lpNorm<Eigen::Infinity>() == 0.0) break;
      try {
        // Gradient only for accepted points.
        const KernelSpec trial = to_spec(candidate);
        auto eval = detail::evaluate_shards(shards, trial);
        if (std::isfinite(eval.value) &&
            eval.value >= current.value + 1e-4 * current.gradient.dot(move)) {
          next = {eval.value, detail::shard_gradient(eval, trial)};
          accepted = true;
          break;
        }
      } catch (const NumericalFailure&) {
        result.numerical_warning = true;
        return result;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    next.gradient.array() *= free_mask.array();
    const Vector s = candidate - theta;
    const Vector y = next.gradient - current.gradient;
    const double improvement = next.value - current.value;

    theta = candidate;
    current = std::move(next);
    result.spec = to_spec(theta);
    result.objective = current.value;
    result.iterations = iter + 1;

    if (improvement <= settings.relative_tolerance * std::abs(current.value)) {
      result.converged = current.gradient.lpNorm<Eigen::Infinity>() < settings.gradient_tolerance;
      break;
    }
    // BB1 step for minimizing -f.
    const double curvature = -s.dot(y);
    const double max_step =
        4.0 * settings.initial_step / std::max(current.gradient.lpNorm<Eigen::Infinity>(), 1e-300);
    step = curvature > 0.0 ? std::min(s.squaredNorm() / curvature, max_step) : 2.0 * step;
  }
  if (!result.converged && current.gradient.lpNorm<Eigen::Infinity>() < settings.gradient_tolerance) {
    result.converged = true;
  }
  return result;
}

/// Initial hyperparameters from data: unit lengthscales, signal variance
/// from the sample variance of Y, noise a tenth of that. Falls back to
/// `fallback` when fewer than two distinct responses are available.
inline KernelSpec default_spec(const Vector& Y, Index dims, const KernelSpec& fallback) {
  Hyperparameters p = Hyperparameters::isotropic(dims);
  if (Y.size() >= 2) {
    const double mean = Y.mean();
    const double var = (Y.array() - mean).square().sum() / static_cast<double>(Y.size() - 1);
    if (var > 0.0 && std::isfinite(var)) {
      p.signal_variance = var;
      p.noise_variance = 0.1 * var;
      return KernelSpec(std::move(p), fallback.family());
    }
  }
  return fallback;
}

}  // namespace splitgp
