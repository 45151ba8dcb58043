#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "isvi/approximation.hpp"
#include "isvi/dataset.hpp"
#include "isvi/models.hpp"
#include "isvi/rng.hpp"

namespace isvi {

struct EstimatorConfig {
  int num_samples = 1;          // M
  double weight_floor = 1e-3;   // mean weight below this flags dead reuse
  double weight_ceiling = 1e3;  // any single factor weight above this refuses reuse

  void validate() const {
    if (num_samples < 1) throw std::invalid_argument("estimator: num_samples must be >= 1");
    if (!(weight_floor >= 0.0 && weight_floor < 1.0 && weight_ceiling > 1.0))
      throw std::invalid_argument("estimator: need 0 <= weight_floor < 1 < weight_ceiling");
  }
};

// Everything a mini-batch gradient evaluation leaves behind: base draws,
// transformed samples, the expensive model gradients, per-factor base log
// densities, log-joint values, and the parameters they were drawn under.
struct SampleCache {
  std::vector<EpsilonVector> eps;
  std::vector<LatentVector> z;
  std::vector<Eigen::VectorXd> grad_z;  // empty for score caches
  std::vector<Eigen::VectorXd> log_phi; // per factor, one vector per sample
  std::vector<double> logp;
  int batch_id = 0;
  FactorizedApproxParams params_at_draw;

  int num_samples() const { return static_cast<int>(eps.size()); }
  bool has_model_gradients() const { return !grad_z.empty(); }
};

// Per-factor, per-sample nonnegative weights; w(s, m) == 1 exactly when
// factor s's parameters are unchanged.
struct FactorWeights {
  Eigen::MatrixXd w;  // factors x samples
  bool degenerate = false;

  double mean() const { return w.size() ? w.mean() : 1.0; }
  double max() const { return w.size() ? w.maxCoeff() : 1.0; }
};

namespace detail {

// Coordinate-wise inverse that records failed coordinates instead of
// throwing; a failing stick coordinate invalidates the rest of its block.
inline void inverse_with_mask(const FactorizedApproxParams& params, const LatentVector& z,
                              Eigen::VectorXd& eps_out, std::vector<bool>& failed) {
  const Eigen::Index d = params.dim();
  eps_out.resize(d);
  failed.assign(static_cast<std::size_t>(d), false);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double zi = z.values[i];
    switch (params.transforms[static_cast<std::size_t>(i)]) {
      case CoordinateTransform::kIdentity:
        eps_out[i] = zi;
        break;
      case CoordinateTransform::kSoftplus:
        if (!(zi > 0.0)) {
          failed[static_cast<std::size_t>(i)] = true;
          eps_out[i] = 0.0;
        } else {
          eps_out[i] = softplus_inverse(zi);
        }
        break;
      case CoordinateTransform::kStickBreaking:
        eps_out[i] = zi;
        break;
    }
  }
  for (const auto& [start, len] : params.stick_blocks()) {
    double stick = 1.0;
    for (int k = 0; k < len; ++k) {
      const double zk = z.values[start + k];
      if (!(zk > 0.0) || !(zk < stick)) {
        for (int r = k; r < len; ++r) failed[static_cast<std::size_t>(start + r)] = true;
        for (int r = k; r < len; ++r) eps_out[start + r] = 0.0;
        break;
      }
      const double ratio = zk / stick;
      eps_out[start + k] = std::log(ratio / (1.0 - ratio)) + std::log(static_cast<double>(len - k));
      stick -= zk;
    }
  }
  for (Eigen::Index i = 0; i < d; ++i)
    if (!failed[static_cast<std::size_t>(i)])
      eps_out[i] = (eps_out[i] - params.location[i]) / params.sigma(i);
}

inline bool factor_params_unchanged(const FactorizedApproxParams& a,
                                    const FactorizedApproxParams& b,
                                    const std::vector<int>& factor) {
  for (int i : factor)
    if (a.location[i] != b.location[i] || a.unconstrained_scale[i] != b.unconstrained_scale[i])
      return false;
  return true;
}

inline void require_same_shape(const SampleCache& cache, const FactorizedApproxParams& p) {
  const auto& q = cache.params_at_draw;
  if (p.dim() != q.dim() || p.factor_partition != q.factor_partition ||
      p.transforms != q.transforms)
    throw std::invalid_argument("importance reuse: new parameters must share dimension, partition and transforms");
}

}  // namespace detail

struct ImportanceWeightsResult {
  FactorWeights weights;
  std::vector<EpsilonVector> eps_new;
  std::vector<bool> sample_invertible;  // false when z_m left the new transform range
};

// Algorithm: eps'_m = f^{-1}(z_m, lambda'); per-factor log weight is
// sum_{i in S} [log phi(eps'_i) - log phi(eps_i)], exponentiated last.
// Factors whose parameters are bitwise unchanged reuse eps and get weight 1
// exactly. A sample that cannot be inverted under the new transform gets
// factor weight 0 and raises the degenerate flag.
inline ImportanceWeightsResult importance_weights(const SampleCache& cache,
                                                  const FactorizedApproxParams& new_params) {
  detail::require_same_shape(cache, new_params);
  const auto& old_params = cache.params_at_draw;
  const int m_count = cache.num_samples();
  const Eigen::Index s_count = new_params.num_factors();

  std::vector<bool> factor_unchanged(static_cast<std::size_t>(s_count));
  for (Eigen::Index s = 0; s < s_count; ++s)
    factor_unchanged[static_cast<std::size_t>(s)] = detail::factor_params_unchanged(
        old_params, new_params, new_params.factor_partition[static_cast<std::size_t>(s)]);

  ImportanceWeightsResult out;
  out.weights.w.resize(s_count, m_count);
  out.eps_new.resize(static_cast<std::size_t>(m_count));
  out.sample_invertible.assign(static_cast<std::size_t>(m_count), true);

  Eigen::VectorXd eps_new;
  std::vector<bool> failed;
  for (int m = 0; m < m_count; ++m) {
    detail::inverse_with_mask(new_params, cache.z[static_cast<std::size_t>(m)], eps_new, failed);
    // unchanged coordinates keep their cached draws exactly
    for (Eigen::Index s = 0; s < s_count; ++s)
      if (factor_unchanged[static_cast<std::size_t>(s)])
        for (int i : new_params.factor_partition[static_cast<std::size_t>(s)]) {
          eps_new[i] = cache.eps[static_cast<std::size_t>(m)].values[i];
          failed[static_cast<std::size_t>(i)] = false;
        }
    for (Eigen::Index s = 0; s < s_count; ++s) {
      if (factor_unchanged[static_cast<std::size_t>(s)]) {
        out.weights.w(s, m) = 1.0;
        continue;
      }
      bool dead = false;
      double log_w = -cache.log_phi[static_cast<std::size_t>(m)][s];
      for (int i : new_params.factor_partition[static_cast<std::size_t>(s)]) {
        if (failed[static_cast<std::size_t>(i)]) {
          dead = true;
          break;
        }
        log_w += log_standard_normal(eps_new[i]);
      }
      if (dead) {
        out.weights.w(s, m) = 0.0;
        out.weights.degenerate = true;
        out.sample_invertible[static_cast<std::size_t>(m)] = false;
      } else {
        out.weights.w(s, m) = std::exp(log_w);
      }
    }
    out.eps_new[static_cast<std::size_t>(m)] = EpsilonVector{eps_new};
  }
  return out;
}

struct FreshGradientResult {
  GradientVector grad;
  SampleCache cache;
  double elbo = 0.0;
};

// Monte Carlo reparameterization gradient: draws eps_m, transforms, evaluates
// the model gradient once per sample (the only grad_log_joint calls), and
// averages the pullbacks. Also reports the sample-average ELBO log p - log q.
inline FreshGradientResult reparam_gradient(const FactorizedApproxParams& params,
                                            const Model& model, const Dataset& data,
                                            const MiniBatch& batch, const EstimatorConfig& cfg,
                                            RngStream& rng) {
  cfg.validate();
  const int dim = static_cast<int>(params.dim());
  FreshGradientResult out;
  out.grad = GradientVector::zero(dim);
  out.cache.batch_id = batch.batch_id;
  out.cache.params_at_draw = params;

  Eigen::VectorXd grad_z;
  for (int m = 0; m < cfg.num_samples; ++m) {
    EpsilonVector eps = sample_epsilon(rng, dim);
    LatentVector z = forward(params, eps);
    const double logp = model.grad_log_joint(data, batch, z, grad_z);
    const double logq = log_q_density(params, eps);
    out.elbo += logp - logq;
    out.grad += reparam_pullback(params, eps, grad_z);
    out.cache.log_phi.push_back(base_log_density_per_factor(params, eps));
    out.cache.eps.push_back(std::move(eps));
    out.cache.z.push_back(std::move(z));
    out.cache.grad_z.push_back(grad_z);
    out.cache.logp.push_back(logp);
  }
  const double inv_m = 1.0 / static_cast<double>(cfg.num_samples);
  out.grad *= inv_m;
  out.elbo *= inv_m;
  return out;
}

struct ImportanceGradientResult {
  GradientVector grad;
  double mean_weight = 1.0;
  bool refused = false;      // some factor weight exceeded the ceiling
  bool below_floor = false;  // mean weight under the floor: reuse is dead
  bool degenerate = false;   // some sample fell outside the new transform range
};

// Importance-sampled reparameterization gradient: reuses the cached model
// gradients, re-transporting them through the pullback at the new parameters
// and weighting each factor block by its base-density ratio. Never touches
// the model.
inline ImportanceGradientResult importance_gradient(const SampleCache& cache,
                                                    const FactorizedApproxParams& new_params,
                                                    const EstimatorConfig& cfg) {
  cfg.validate();
  if (!cache.has_model_gradients())
    throw std::invalid_argument("importance_gradient: cache lacks model gradients");
  auto iw = importance_weights(cache, new_params);

  ImportanceGradientResult out;
  out.mean_weight = iw.weights.mean();
  out.degenerate = iw.weights.degenerate;
  if (iw.weights.max() > cfg.weight_ceiling) {
    out.refused = true;
    return out;
  }
  out.below_floor = out.mean_weight < cfg.weight_floor;

  const int dim = static_cast<int>(new_params.dim());
  const int m_count = cache.num_samples();
  out.grad = GradientVector::zero(dim);
  for (int m = 0; m < m_count; ++m) {
    GradientVector g = reparam_pullback(new_params, iw.eps_new[static_cast<std::size_t>(m)],
                                        cache.grad_z[static_cast<std::size_t>(m)]);
    for (Eigen::Index s = 0; s < new_params.num_factors(); ++s) {
      const double w = iw.weights.w(s, m);
      for (int i : new_params.factor_partition[static_cast<std::size_t>(s)]) {
        g.location[i] *= w;
        g.unconstrained_scale[i] *= w;
      }
    }
    out.grad += g;
  }
  out.grad *= 1.0 / static_cast<double>(m_count);
  return out;
}

// Score-function gradient (no model gradients): averages
// (log p - log q) * grad_lambda log q over fresh draws.
inline FreshGradientResult score_gradient(const FactorizedApproxParams& params, const Model& model,
                                          const Dataset& data, const MiniBatch& batch,
                                          const EstimatorConfig& cfg, RngStream& rng) {
  cfg.validate();
  const int dim = static_cast<int>(params.dim());
  FreshGradientResult out;
  out.grad = GradientVector::zero(dim);
  out.cache.batch_id = batch.batch_id;
  out.cache.params_at_draw = params;

  for (int m = 0; m < cfg.num_samples; ++m) {
    EpsilonVector eps = sample_epsilon(rng, dim);
    LatentVector z = forward(params, eps);
    const double logp = model.log_joint(data, batch, z);
    const double logq = log_q_density(params, eps);
    GradientVector g = score_grad_log_q(params, eps);
    g *= logp - logq;
    out.grad += g;
    out.elbo += logp - logq;
    out.cache.log_phi.push_back(base_log_density_per_factor(params, eps));
    out.cache.eps.push_back(std::move(eps));
    out.cache.z.push_back(std::move(z));
    out.cache.logp.push_back(logp);
  }
  const double inv_m = 1.0 / static_cast<double>(cfg.num_samples);
  out.grad *= inv_m;
  out.elbo *= inv_m;
  return out;
}

// Importance-sampled score gradient: reuses the cached log p values only;
// weights are per-factor approximation-density ratios q(z|new)/q(z|old): the
// transform Jacobian terms depend on z alone and cancel, leaving the
// base-density difference minus the log-sigma difference. log q and its
// lambda-gradient are recomputed at the new parameters.
inline ImportanceGradientResult importance_score_gradient(const SampleCache& cache,
                                                          const FactorizedApproxParams& new_params,
                                                          const EstimatorConfig& cfg) {
  cfg.validate();
  detail::require_same_shape(cache, new_params);
  if (cache.logp.size() != static_cast<std::size_t>(cache.num_samples()))
    throw std::invalid_argument("importance_score_gradient: cache lacks log-joint values");

  const auto& old_params = cache.params_at_draw;
  const int m_count = cache.num_samples();
  const Eigen::Index s_count = new_params.num_factors();
  const int dim = static_cast<int>(new_params.dim());

  std::vector<bool> factor_unchanged(static_cast<std::size_t>(s_count));
  for (Eigen::Index s = 0; s < s_count; ++s)
    factor_unchanged[static_cast<std::size_t>(s)] = detail::factor_params_unchanged(
        old_params, new_params, new_params.factor_partition[static_cast<std::size_t>(s)]);

  // recover eps' under the new parameters, with the exact-reuse shortcut
  std::vector<EpsilonVector> eps_new(static_cast<std::size_t>(m_count));
  std::vector<std::vector<bool>> failed(static_cast<std::size_t>(m_count));
  Eigen::VectorXd eps_tmp;
  for (int m = 0; m < m_count; ++m) {
    detail::inverse_with_mask(new_params, cache.z[static_cast<std::size_t>(m)], eps_tmp,
                              failed[static_cast<std::size_t>(m)]);
    for (Eigen::Index s = 0; s < s_count; ++s)
      if (factor_unchanged[static_cast<std::size_t>(s)])
        for (int i : new_params.factor_partition[static_cast<std::size_t>(s)]) {
          eps_tmp[i] = cache.eps[static_cast<std::size_t>(m)].values[i];
          failed[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)] = false;
        }
    eps_new[static_cast<std::size_t>(m)] = EpsilonVector{eps_tmp};
  }

  ImportanceGradientResult out;
  out.grad = GradientVector::zero(dim);

  // weights, ceiling check first
  Eigen::MatrixXd w(s_count, m_count);
  double sum_w = 0.0;
  for (int m = 0; m < m_count; ++m) {
    for (Eigen::Index s = 0; s < s_count; ++s) {
      if (factor_unchanged[static_cast<std::size_t>(s)]) {
        w(s, m) = 1.0;
        sum_w += 1.0;
        continue;
      }
      bool dead = false;
      double log_w = -cache.log_phi[static_cast<std::size_t>(m)][s];
      for (int i : new_params.factor_partition[static_cast<std::size_t>(s)]) {
        if (failed[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)]) {
          dead = true;
          break;
        }
        log_w += log_standard_normal(eps_new[static_cast<std::size_t>(m)].values[i]);
        log_w += old_params.unconstrained_scale[i] - new_params.unconstrained_scale[i];
      }
      if (dead) {
        w(s, m) = 0.0;
        out.degenerate = true;
      } else {
        w(s, m) = std::exp(log_w);
      }
      sum_w += w(s, m);
    }
  }
  out.mean_weight = sum_w / static_cast<double>(w.size());
  if (w.maxCoeff() > cfg.weight_ceiling) {
    out.refused = true;
    out.grad = GradientVector::zero(dim);
    return out;
  }
  out.below_floor = out.mean_weight < cfg.weight_floor;

  for (int m = 0; m < m_count; ++m) {
    // a failed coordinate denies a finite log q for the whole sample
    bool any_coord_failed = false;
    for (bool f : failed[static_cast<std::size_t>(m)]) any_coord_failed |= f;
    if (any_coord_failed) continue;
    const double logq_new = log_q_density(new_params, eps_new[static_cast<std::size_t>(m)]);
    const double integrand = cache.logp[static_cast<std::size_t>(m)] - logq_new;
    GradientVector g = score_grad_log_q(new_params, eps_new[static_cast<std::size_t>(m)]);
    for (Eigen::Index s = 0; s < s_count; ++s) {
      const double ws = w(s, m) * integrand;
      for (int i : new_params.factor_partition[static_cast<std::size_t>(s)]) {
        g.location[i] *= ws;
        g.unconstrained_scale[i] *= ws;
      }
    }
    out.grad += g;
  }
  out.grad *= 1.0 / static_cast<double>(m_count);
  return out;
}

// ELBO readout for a reuse step: the cached log p values with log q
// re-evaluated at the new parameters. A whole-sample importance weight would
// be the product over every factor, which underflows for any sizeable
// dimension (the weight-decay effect), so the telemetry keeps the samples at
// weight one; for the small per-step drift of a reuse chain the staleness is
// negligible, and at unchanged parameters this reproduces the fresh ELBO
// exactly.
inline double importance_elbo(const SampleCache& cache, const FactorizedApproxParams& new_params) {
  auto iw = importance_weights(cache, new_params);
  const int m_count = cache.num_samples();
  double acc = 0.0;
  int live = 0;
  for (int m = 0; m < m_count; ++m) {
    if (!iw.sample_invertible[static_cast<std::size_t>(m)]) continue;
    const double logq = log_q_density(new_params, iw.eps_new[static_cast<std::size_t>(m)]);
    acc += cache.logp[static_cast<std::size_t>(m)] - logq;
    ++live;
  }
  return live ? acc / static_cast<double>(live) : -std::numeric_limits<double>::infinity();
}

}  // namespace isvi
