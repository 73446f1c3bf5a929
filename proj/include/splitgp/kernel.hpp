#pragma once

// Squared-exponential kernel with one lengthscale per input dimension:
//
//   k(x, x') = sf2 * exp(-0.5 * sum_d (x_d - x'_d)^2 / l_d^2)
//
// The noise variance is carried alongside but only ever enters on the
// diagonal of a training kernel matrix.

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "splitgp/errors.hpp"
#include "splitgp/kv.hpp"

namespace splitgp {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Hyperparameters {
  Vector lengthscales;
  double signal_variance = 1.0;
  double noise_variance = 0.1;

  static Hyperparameters isotropic(Index dims, double lengthscale = 1.0,
                                   double signal_variance = 1.0, double noise_variance = 0.1) {
    return {Vector::Constant(dims, lengthscale), signal_variance, noise_variance};
  }

  Index dims() const { return lengthscales.size(); }

  void validate() const {
    detail::require(lengthscales.size() >= 1, "hyperparameters: at least one lengthscale required");
    for (Index d = 0; d < lengthscales.size(); ++d) {
      detail::require(std::isfinite(lengthscales[d]) && lengthscales[d] > 0.0,
                      "hyperparameters: lengthscales must be positive and finite");
    }
    detail::require(std::isfinite(signal_variance) && signal_variance > 0.0,
                    "hyperparameters: signal_variance must be positive");
    detail::require(std::isfinite(noise_variance) && noise_variance >= 0.0,
                    "hyperparameters: noise_variance must be non-negative");
  }

  friend bool operator==(const Hyperparameters& a, const Hyperparameters& b) {
    return a.lengthscales.size() == b.lengthscales.size() && a.lengthscales == b.lengthscales &&
           a.signal_variance == b.signal_variance && a.noise_variance == b.noise_variance;
  }
};

enum class KernelFamily { kRbfArd };

/// Kernel family plus its hyperparameters. The optimizer works on the
/// log-domain vector [log l_1 .. log l_M, log sf2, log sn2].
class KernelSpec {
 public:
  KernelSpec() : KernelSpec(Hyperparameters::isotropic(1)) {}
  explicit KernelSpec(Hyperparameters params, KernelFamily family = KernelFamily::kRbfArd)
      : params_(std::move(params)), family_(family) {
    params_.validate();
  }

  KernelFamily family() const { return family_; }
  const Hyperparameters& params() const { return params_; }
  Index dims() const { return params_.dims(); }
  Index num_params() const { return params_.dims() + 2; }

  double signal_variance() const { return params_.signal_variance; }
  double noise_variance() const { return params_.noise_variance; }
  const Vector& lengthscales() const { return params_.lengthscales; }

  /// Zero noise maps to -infinity; callers optimizing in the log domain
  /// must hold such a coordinate fixed.
  Vector to_log() const {
    Vector theta(num_params());
    const Index m = dims();
    theta.head(m) = params_.lengthscales.array().log();
    theta[m] = std::log(params_.signal_variance);
    theta[m + 1] = std::log(params_.noise_variance);
    return theta;
  }

  static KernelSpec from_log(const Vector& theta, KernelFamily family = KernelFamily::kRbfArd) {
    detail::require(theta.size() >= 3, "kernel: log-parameter vector too short");
    const Index m = theta.size() - 2;
    Hyperparameters p;
    p.lengthscales = theta.head(m).array().exp();
    p.signal_variance = std::exp(theta[m]);
    p.noise_variance = std::exp(theta[m + 1]);
    return KernelSpec(std::move(p), family);
  }

  friend bool operator==(const KernelSpec& a, const KernelSpec& b) {
    return a.family_ == b.family_ && a.params_ == b.params_;
  }

 private:
  Hyperparameters params_;
  KernelFamily family_ = KernelFamily::kRbfArd;
};

namespace detail {

template <typename A, typename B>
double scaled_sq_distance(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& xp,
                          const Vector& lengthscales) {
  double acc = 0.0;
  for (Index d = 0; d < lengthscales.size(); ++d) {
    const double diff = (x(d) - xp(d)) / lengthscales[d];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace detail

template <typename A, typename B>
double eval(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& xp, const KernelSpec& spec) {
  if (x.size() != spec.dims() || xp.size() != spec.dims()) {
    throw ContractViolation("kernel eval: input dimension " + std::to_string(x.size()) + "/" +
                            std::to_string(xp.size()) + " does not match " +
                            std::to_string(spec.dims()) + " lengthscales");
  }
  return spec.signal_variance() *
         std::exp(-0.5 * detail::scaled_sq_distance(x, xp, spec.lengthscales()));
}

/// Kernel matrix over the rows of X; noise on the diagonal if requested.
inline Matrix gram(const Matrix& X, const KernelSpec& spec, bool add_noise) {
  detail::require(X.cols() == spec.dims(), "gram: column count does not match kernel dimension");
  const Index n = X.rows();
  Matrix K(n, n);
  const Vector inv_ls = spec.lengthscales().cwiseInverse();
  const Matrix Z = X * inv_ls.asDiagonal();
  const double sf2 = spec.signal_variance();
  for (Index j = 0; j < n; ++j) {
    K(j, j) = sf2;
    for (Index i = j + 1; i < n; ++i) {
      const double v = sf2 * std::exp(-0.5 * (Z.row(i) - Z.row(j)).squaredNorm());
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  if (add_noise) K.diagonal().array() += spec.noise_variance();
  return K;
}

/// k(X_i, x) for every row i.
template <typename A>
Vector cross_kernel(const Matrix& X, const Eigen::MatrixBase<A>& x, const KernelSpec& spec) {
  detail::require(X.cols() == spec.dims() && x.size() == spec.dims(),
                  "cross_kernel: dimension mismatch");
  Vector k(X.rows());
  for (Index i = 0; i < X.rows(); ++i) k[i] = eval(X.row(i), x, spec);
  return k;
}

/// dK/dtheta_j for each log-domain parameter, in to_log() order. The noise
/// entry is d(K + sn2 I)/d log sn2 = sn2 I.
inline std::vector<Matrix> gram_gradients(const Matrix& X, const KernelSpec& spec) {
  const Index n = X.rows();
  const Index m = spec.dims();
  const Matrix K = gram(X, spec, false);
  std::vector<Matrix> grads;
  grads.reserve(static_cast<std::size_t>(m + 2));
  for (Index d = 0; d < m; ++d) {
    const double inv_l2 = 1.0 / (spec.lengthscales()[d] * spec.lengthscales()[d]);
    Matrix G(n, n);
    for (Index j = 0; j < n; ++j) {
      for (Index i = 0; i < n; ++i) {
        const double diff = X(i, d) - X(j, d);
        G(i, j) = K(i, j) * diff * diff * inv_l2;
      }
    }
    grads.push_back(std::move(G));
  }
  grads.push_back(K);
  grads.push_back(spec.noise_variance() * Matrix::Identity(n, n));
  return grads;
}

// ---- key=value serialization -------------------------------------------

inline std::string to_kv(const Hyperparameters& p) {
  std::ostringstream out;
  out << "lengthscales=";
  for (Index d = 0; d < p.lengthscales.size(); ++d) {
    if (d) out << ',';
    out << kv::format_double(p.lengthscales[d]);
  }
  out << "\nsignal_variance=" << kv::format_double(p.signal_variance)
      << "\nnoise_variance=" << kv::format_double(p.noise_variance) << '\n';
  return out.str();
}

inline Hyperparameters hyperparameters_from_kv(const kv::Map& map) {
  const auto need = [&](std::string_view key) -> const std::string& {
    const auto it = map.find(key);
    if (it == map.end()) throw DataError("hyperparameters: missing key '" + std::string(key) + "'");
    return it->second;
  };
  const auto parts = kv::split_list(need("lengthscales"));
  Hyperparameters p;
  p.lengthscales.resize(static_cast<Index>(parts.size()));
  for (std::size_t d = 0; d < parts.size(); ++d) {
    p.lengthscales[static_cast<Index>(d)] = kv::to_double(parts[d], "lengthscales");
  }
  p.signal_variance = kv::to_double(need("signal_variance"), "signal_variance");
  p.noise_variance = kv::to_double(need("noise_variance"), "noise_variance");
  try {
    p.validate();
  } catch (const ContractViolation& e) {
    throw DataError(e.what());
  }
  return p;
}

inline Hyperparameters hyperparameters_from_kv(std::string_view text) {
  return hyperparameters_from_kv(kv::parse(text));
}

}  // namespace splitgp
