#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "isvi/rng.hpp"

namespace isvi {

enum class CoordinateTransform { kIdentity, kSoftplus, kStickBreaking };

struct EpsilonVector {
  Eigen::VectorXd values;
};

struct LatentVector {
  Eigen::VectorXd values;
};

// Gradient with respect to approximation parameters, split into the location
// block (d/dmu) and the unconstrained-scale block (d/drho, sigma = exp(rho)).
struct GradientVector {
  Eigen::VectorXd location;
  Eigen::VectorXd unconstrained_scale;

  static GradientVector zero(Eigen::Index dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim)};
  }
  Eigen::Index dim() const { return location.size(); }
  GradientVector& operator+=(const GradientVector& o) {
    location += o.location;
    unconstrained_scale += o.unconstrained_scale;
    return *this;
  }
  GradientVector& operator-=(const GradientVector& o) {
    location -= o.location;
    unconstrained_scale -= o.unconstrained_scale;
    return *this;
  }
  GradientVector& operator*=(double a) {
    location *= a;
    unconstrained_scale *= a;
    return *this;
  }
  bool all_finite() const {
    return location.allFinite() && unconstrained_scale.allFinite();
  }
};

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  // log(1 + e^x), stable on both tails
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

inline double softplus_inverse(double z) {
  // log(e^z - 1); caller guarantees z > 0
  if (z > 30.0) return z;
  return std::log(std::expm1(z));
}

}  // namespace detail

// log of the standard normal pdf
inline double log_standard_normal(double u) { return -0.5 * u * u - 0.5 * kLogTwoPi; }

// Diagonal location-scale family with optional per-coordinate constraint
// transforms: z_i = T_i(mu_i + sigma_i * eps_i), sigma = exp(rho). Stick
// breaking applies blockwise to contiguous runs of tagged coordinates (a run
// of length K-1 maps to the first K-1 weights of a K-simplex). The factor
// partition groups coordinates that share one importance weight.
struct FactorizedApproxParams {
  Eigen::VectorXd location;             // mu
  Eigen::VectorXd unconstrained_scale;  // rho
  std::vector<std::vector<int>> factor_partition;
  std::vector<CoordinateTransform> transforms;

  Eigen::Index dim() const { return location.size(); }
  double sigma(Eigen::Index i) const { return std::exp(unconstrained_scale[i]); }
  Eigen::Index num_factors() const {
    return static_cast<Eigen::Index>(factor_partition.size());
  }

  // contiguous stick-breaking runs as (start, length)
  std::vector<std::pair<int, int>> stick_blocks() const {
    std::vector<std::pair<int, int>> blocks;
    const int d = static_cast<int>(dim());
    int i = 0;
    while (i < d) {
      if (transforms[static_cast<std::size_t>(i)] == CoordinateTransform::kStickBreaking) {
        int j = i;
        while (j < d && transforms[static_cast<std::size_t>(j)] == CoordinateTransform::kStickBreaking) ++j;
        blocks.emplace_back(i, j - i);
        i = j;
      } else {
        ++i;
      }
    }
    return blocks;
  }

  void validate() const {
    const Eigen::Index d = dim();
    if (unconstrained_scale.size() != d)
      throw std::invalid_argument("approximation: location/scale dimension mismatch");
    if (static_cast<Eigen::Index>(transforms.size()) != d)
      throw std::invalid_argument("approximation: transform tags must cover every coordinate");
    std::vector<int> seen(static_cast<std::size_t>(d), 0);
    for (const auto& factor : factor_partition) {
      for (int i : factor) {
        if (i < 0 || i >= d) throw std::invalid_argument("approximation: factor index out of range");
        if (seen[static_cast<std::size_t>(i)]++)
          throw std::invalid_argument("approximation: factor partition not disjoint");
      }
    }
    for (Eigen::Index i = 0; i < d; ++i)
      if (!seen[static_cast<std::size_t>(i)])
        throw std::invalid_argument("approximation: factor partition must cover all coordinates");
  }
};

// partition {0..dim-1} into consecutive groups of factor_size (ragged tail)
inline std::vector<std::vector<int>> make_factor_partition(int dim, int factor_size) {
  if (dim < 1) throw std::invalid_argument("make_factor_partition: dim must be >= 1");
  if (factor_size < 1) throw std::invalid_argument("make_factor_partition: factor_size must be >= 1");
  std::vector<std::vector<int>> partition;
  for (int start = 0; start < dim; start += factor_size) {
    std::vector<int> group;
    for (int i = start; i < std::min(dim, start + factor_size); ++i) group.push_back(i);
    partition.push_back(std::move(group));
  }
  return partition;
}

inline FactorizedApproxParams make_approx_params(
    const std::vector<CoordinateTransform>& transforms, int factor_size,
    double init_location = 0.0, double init_unconstrained_scale = std::log(0.1)) {
  const int d = static_cast<int>(transforms.size());
  FactorizedApproxParams p;
  p.location = Eigen::VectorXd::Constant(d, init_location);
  p.unconstrained_scale = Eigen::VectorXd::Constant(d, init_unconstrained_scale);
  p.transforms = transforms;
  p.factor_partition = make_factor_partition(d, factor_size);
  p.validate();
  return p;
}

inline EpsilonVector sample_epsilon(RngStream& rng, int dim) {
  if (dim < 1) throw std::invalid_argument("sample_epsilon: dim must be >= 1");
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  return {std::move(v)};
}

// z = T(mu + sigma * eps)
inline LatentVector forward(const FactorizedApproxParams& params, const EpsilonVector& eps) {
  const Eigen::Index d = params.dim();
  if (eps.values.size() != d) throw std::invalid_argument("forward: dimension mismatch");
  Eigen::VectorXd z(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double y = params.location[i] + params.sigma(i) * eps.values[i];
    switch (params.transforms[static_cast<std::size_t>(i)]) {
      case CoordinateTransform::kIdentity:
        z[i] = y;
        break;
      case CoordinateTransform::kSoftplus:
        z[i] = detail::softplus(y);
        break;
      case CoordinateTransform::kStickBreaking:
        z[i] = y;  // affine part now, block transform below
        break;
    }
  }
  for (const auto& [start, len] : params.stick_blocks()) {
    double stick = 1.0;
    for (int k = 0; k < len; ++k) {
      const double s = detail::sigmoid(z[start + k] - std::log(static_cast<double>(len - k)));
      const double w = stick * s;
      z[start + k] = w;
      stick -= w;
    }
  }
  return {std::move(z)};
}

namespace detail {

struct InverseFailure {
  bool failed = false;
  int coordinate = -1;
};

// shared by the throwing and weight-on-degenerate paths
inline InverseFailure inverse_into(const FactorizedApproxParams& params, const LatentVector& z,
                                   Eigen::VectorXd& eps_out) {
  const Eigen::Index d = params.dim();
  eps_out.resize(d);
  // unconstrain to y first
  for (Eigen::Index i = 0; i < d; ++i) {
    const double zi = z.values[i];
    switch (params.transforms[static_cast<std::size_t>(i)]) {
      case CoordinateTransform::kIdentity:
        eps_out[i] = zi;
        break;
      case CoordinateTransform::kSoftplus:
        if (!(zi > 0.0)) return {true, static_cast<int>(i)};
        eps_out[i] = softplus_inverse(zi);
        break;
      case CoordinateTransform::kStickBreaking:
        eps_out[i] = zi;  // handled blockwise below
        break;
    }
  }
  for (const auto& [start, len] : params.stick_blocks()) {
    double stick = 1.0;
    for (int k = 0; k < len; ++k) {
      const double zk = z.values[start + k];
      if (!(zk > 0.0) || !(zk < stick)) return {true, start + k};
      const double ratio = zk / stick;
      eps_out[start + k] = std::log(ratio / (1.0 - ratio)) + std::log(static_cast<double>(len - k));
      stick -= zk;
    }
  }
  // y -> eps
  for (Eigen::Index i = 0; i < d; ++i)
    eps_out[i] = (eps_out[i] - params.location[i]) / params.sigma(i);
  return {};
}

}  // namespace detail

// eps = f^{-1}(z, lambda); throws on out-of-range coordinates
inline EpsilonVector inverse(const FactorizedApproxParams& params, const LatentVector& z) {
  if (z.values.size() != params.dim()) throw std::invalid_argument("inverse: dimension mismatch");
  Eigen::VectorXd eps;
  const auto fail = detail::inverse_into(params, z, eps);
  if (fail.failed) {
    std::ostringstream msg;
    msg << "inverse: coordinate " << fail.coordinate << " outside the transform range";
    throw std::domain_error(msg.str());
  }
  return {std::move(eps)};
}

// Per factor S: sum_{i in S} log phi(eps_i).
inline Eigen::VectorXd base_log_density_per_factor(const FactorizedApproxParams& params,
                                                   const EpsilonVector& eps) {
  if (eps.values.size() != params.dim())
    throw std::invalid_argument("base_log_density_per_factor: dimension mismatch");
  Eigen::VectorXd out(params.num_factors());
  for (Eigen::Index s = 0; s < params.num_factors(); ++s) {
    double acc = 0.0;
    for (int i : params.factor_partition[static_cast<std::size_t>(s)])
      acc += log_standard_normal(eps.values[i]);
    out[s] = acc;
  }
  return out;
}

namespace detail {

// d/dy of [log p(x, T(y)) + log|det J_T(y)|] given g = grad_z log p; the
// affine log|det| part (sum log sigma) is handled by the caller.
inline Eigen::VectorXd transform_chain(const FactorizedApproxParams& params,
                                       const Eigen::VectorXd& y, const Eigen::VectorXd& grad_z) {
  const Eigen::Index d = params.dim();
  Eigen::VectorXd chain(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    switch (params.transforms[static_cast<std::size_t>(i)]) {
      case CoordinateTransform::kIdentity:
        chain[i] = grad_z[i];
        break;
      case CoordinateTransform::kSoftplus: {
        const double s = sigmoid(y[i]);
        chain[i] = grad_z[i] * s + (1.0 - s);  // d log T'/dy = 1 - sigmoid(y)
        break;
      }
      case CoordinateTransform::kStickBreaking:
        chain[i] = 0.0;  // blockwise below
        break;
    }
  }
  for (const auto& [start, len] : params.stick_blocks()) {
    // recompute the forward pass for the block
    std::vector<double> s(static_cast<std::size_t>(len)), z(static_cast<std::size_t>(len));
    double stick = 1.0;
    for (int k = 0; k < len; ++k) {
      s[static_cast<std::size_t>(k)] = sigmoid(y[start + k] - std::log(static_cast<double>(len - k)));
      z[static_cast<std::size_t>(k)] = stick * s[static_cast<std::size_t>(k)];
      stick -= z[static_cast<std::size_t>(k)];
    }
    // dz_k/dy_j = z_k (1 - s_k) for j == k, -z_k s_j for j < k
    double suffix = 0.0;  // sum_{k > j} g_k z_k, built back to front
    for (int j = len - 1; j >= 0; --j) {
      const double gj = grad_z[start + j];
      const double zj = z[static_cast<std::size_t>(j)];
      const double sj = s[static_cast<std::size_t>(j)];
      const double model_part = gj * zj * (1.0 - sj) - sj * suffix;
      const double logdet_part = 1.0 - (static_cast<double>(len - j) + 1.0) * sj;
      chain[start + j] = model_part + logdet_part;
      suffix += gj * zj;
    }
  }
  return chain;
}

}  // namespace detail

// Single-sample lambda-gradient of log p(x, f(eps, lambda)) + log|det J_f|:
// location block = chain, scale block = chain * sigma * eps + 1 (the +1 is
// d log sigma / d rho).
inline GradientVector reparam_pullback(const FactorizedApproxParams& params,
                                       const EpsilonVector& eps, const Eigen::VectorXd& grad_z) {
  const Eigen::Index d = params.dim();
  if (eps.values.size() != d || grad_z.size() != d)
    throw std::invalid_argument("reparam_pullback: dimension mismatch");
  Eigen::VectorXd y(d);
  for (Eigen::Index i = 0; i < d; ++i) y[i] = params.location[i] + params.sigma(i) * eps.values[i];
  const Eigen::VectorXd chain = detail::transform_chain(params, y, grad_z);
  GradientVector g = GradientVector::zero(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    g.location[i] = chain[i];
    g.unconstrained_scale[i] = chain[i] * params.sigma(i) * eps.values[i] + 1.0;
  }
  return g;
}

// log|det J_f(eps, lambda)| = sum_i log sigma_i + transform terms
inline double log_det_jacobian(const FactorizedApproxParams& params, const EpsilonVector& eps) {
  const Eigen::Index d = params.dim();
  if (eps.values.size() != d) throw std::invalid_argument("log_det_jacobian: dimension mismatch");
  double acc = params.unconstrained_scale.sum();
  Eigen::VectorXd y(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    y[i] = params.location[i] + params.sigma(i) * eps.values[i];
    if (params.transforms[static_cast<std::size_t>(i)] == CoordinateTransform::kSoftplus)
      acc += std::log(detail::sigmoid(y[i]));  // T'(y) = sigmoid(y)
  }
  for (const auto& [start, len] : params.stick_blocks()) {
    double stick = 1.0;
    for (int k = 0; k < len; ++k) {
      const double s = detail::sigmoid(y[start + k] - std::log(static_cast<double>(len - k)));
      acc += std::log(stick) + std::log(s) + std::log1p(-s);
      stick -= stick * s;
    }
  }
  return acc;
}

// log q_lambda(z) evaluated through the base representation:
// log phi(eps) - log|det J_f(eps, lambda)|
inline double log_q_density(const FactorizedApproxParams& params, const EpsilonVector& eps) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < params.dim(); ++i) acc += log_standard_normal(eps.values[i]);
  return acc - log_det_jacobian(params, eps);
}

// grad_lambda log q_lambda(z) at fixed z, expressed via eps = f^{-1}(z). All
// lambda dependence flows through the affine part, so per coordinate:
// d/dmu = eps/sigma, d/drho = eps^2 - 1.
inline GradientVector score_grad_log_q(const FactorizedApproxParams& params,
                                       const EpsilonVector& eps) {
  const Eigen::Index d = params.dim();
  if (eps.values.size() != d) throw std::invalid_argument("score_grad_log_q: dimension mismatch");
  GradientVector g = GradientVector::zero(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double e = eps.values[i];
    g.location[i] = e / params.sigma(i);
    g.unconstrained_scale[i] = e * e - 1.0;
  }
  return g;
}

}  // namespace isvi
