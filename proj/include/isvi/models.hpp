#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "isvi/approximation.hpp"
#include "isvi/dataset.hpp"
#include "isvi/rng.hpp"

namespace isvi {

enum class ModelKind {
  kDiagGaussianConjugate,
  kBayesLinearRegression,
  kPoissonGamma,
  kGmm,
  kConjugateNormalKnownVariance,
};

inline std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kDiagGaussianConjugate: return "diag-gaussian-conjugate";
    case ModelKind::kBayesLinearRegression: return "bayes-linear-regression";
    case ModelKind::kPoissonGamma: return "poisson-gamma";
    case ModelKind::kGmm: return "gmm";
    case ModelKind::kConjugateNormalKnownVariance: return "conjugate-normal-known-variance";
  }
  return "?";
}

struct ModelHyperparams {
  double prior_mean = 0.0;      // conjugate-normal prior location
  double prior_scale = 1.0;     // std of normal priors on means / weights
  double noise_scale = 1.0;     // known observation noise (conjugate-normal, gmm components)
  double gamma_shape = 1.0;     // Gamma prior on precisions / rates
  double gamma_rate = 1.0;
  double dirichlet_alpha = 1.0; // gmm mixture-weight prior
};

struct ModelSpec {
  ModelKind kind = ModelKind::kConjugateNormalKnownVariance;
  int data_dim = 1;           // feature dimension D
  int mixture_components = 0; // K, gmm only
  ModelHyperparams hyper;

  int latent_dim() const {
    switch (kind) {
      case ModelKind::kDiagGaussianConjugate: return 2 * data_dim;
      case ModelKind::kBayesLinearRegression: return data_dim + 1;
      case ModelKind::kPoissonGamma: return 1;
      case ModelKind::kGmm: return mixture_components * data_dim + (mixture_components - 1);
      case ModelKind::kConjugateNormalKnownVariance: return data_dim;
    }
    return 0;
  }

  void validate() const {
    if (data_dim < 1) throw std::invalid_argument("model: data_dim must be >= 1");
    if (kind == ModelKind::kGmm && mixture_components < 2)
      throw std::invalid_argument("model: gmm needs mixture_components >= 2");
    if (hyper.prior_scale <= 0 || hyper.noise_scale <= 0 || hyper.gamma_shape <= 0 ||
        hyper.gamma_rate <= 0 || hyper.dirichlet_alpha <= 0)
      throw std::invalid_argument("model: hyperparameters must be positive");
  }
};

struct EvalCounters {
  std::uint64_t grad_evals = 0;
  std::uint64_t logp_evals = 0;
};

namespace detail {

[[noreturn]] inline void throw_domain(int coordinate, const char* what) {
  std::ostringstream msg;
  msg << "model: latent coordinate " << coordinate << " " << what;
  throw std::domain_error(msg.str());
}

inline double log_gamma_pdf(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

inline double log_normal_pdf(double x, double mean, double variance) {
  const double r = x - mean;
  return -0.5 * (kLogTwoPi + std::log(variance)) - 0.5 * r * r / variance;
}

}  // namespace detail

// Differentiable target: mini-batch-scaled log-joint value and gradient in z.
// The non-virtual entry points keep the evaluation counters that the
// optimizers report; an empty batch drops the likelihood term (prior only).
class Model {
 public:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
  virtual ~Model() = default;

  const ModelSpec& spec() const { return spec_; }
  int latent_dim() const { return spec_.latent_dim(); }
  virtual std::vector<CoordinateTransform> transforms() const = 0;

  double log_joint(const Dataset& data, const MiniBatch& batch, const LatentVector& z) const {
    ++counters_.logp_evals;
    check(data, batch, z);
    return log_joint_impl(data, batch, z, batch_scale(data, batch));
  }

  // returns the log-joint value, fills grad; one call == one gradient evaluation
  double grad_log_joint(const Dataset& data, const MiniBatch& batch, const LatentVector& z,
                        Eigen::VectorXd& grad) const {
    ++counters_.grad_evals;
    check(data, batch, z);
    grad.setZero(latent_dim());
    return grad_impl(data, batch, z, batch_scale(data, batch), grad);
  }

  EvalCounters& counters() const { return counters_; }
  void reset_counters() const { counters_ = EvalCounters{}; }

 protected:
  virtual double log_joint_impl(const Dataset&, const MiniBatch&, const LatentVector&,
                                double scale) const = 0;
  virtual double grad_impl(const Dataset&, const MiniBatch&, const LatentVector&, double scale,
                           Eigen::VectorXd& grad) const = 0;
  virtual void validate_latent(const LatentVector&) const {}

  static double batch_scale(const Dataset& data, const MiniBatch& batch) {
    if (batch.empty()) return 0.0;
    return static_cast<double>(data.n()) / static_cast<double>(batch.size());
  }

 private:
  void check(const Dataset& data, const MiniBatch& batch, const LatentVector& z) const {
    if (z.values.size() != latent_dim())
      throw std::invalid_argument("model: latent dimension mismatch");
    for (int i : batch.row_indices)
      if (i < 0 || i >= data.n()) throw std::invalid_argument("model: batch row out of range");
    validate_latent(z);
  }

  ModelSpec spec_;
  mutable EvalCounters counters_;
};

// x_i ~ N(z, noise^2 I) with prior z ~ N(prior_mean, prior_scale^2 I); the one
// model in the set with a closed-form posterior and evidence.
class ConjugateNormalModel final : public Model {
 public:
  using Model::Model;

  std::vector<CoordinateTransform> transforms() const override {
    return std::vector<CoordinateTransform>(static_cast<std::size_t>(latent_dim()),
                                            CoordinateTransform::kIdentity);
  }

 protected:
  double log_joint_impl(const Dataset& data, const MiniBatch& batch, const LatentVector& z,
                        double scale) const override {
    const auto& h = spec().hyper;
    const double nv = h.noise_scale * h.noise_scale;
    const double pv = h.prior_scale * h.prior_scale;
    double lik = 0.0;
    for (int i : batch.row_indices)
      for (Eigen::Index d = 0; d < data.d(); ++d)
        lik += detail::log_normal_pdf(data.features(i, d), z.values[d], nv);
    double prior = 0.0;
    for (Eigen::Index d = 0; d < data.d(); ++d)
      prior += detail::log_normal_pdf(z.values[d], h.prior_mean, pv);
    return scale * lik + prior;
  }

  double grad_impl(const Dataset& data, const MiniBatch& batch, const LatentVector& z,
                   double scale, Eigen::VectorXd& grad) const override {
    const auto& h = spec().hyper;
    const double nv = h.noise_scale * h.noise_scale;
    const double pv = h.prior_scale * h.prior_scale;
    double value = 0.0;
    for (int i : batch.row_indices)
      for (Eigen::Index d = 0; d < data.d(); ++d) {
        const double r = data.features(i, d) - z.values[d];
        value += -0.5 * (kLogTwoPi + std::log(nv)) - 0.5 * r * r / nv;
        grad[d] += scale * r / nv;
      }
    value *= scale;
    for (Eigen::Index d = 0; d < data.d(); ++d) {
      const double r = z.values[d] - h.prior_mean;
      value += -0.5 * (kLogTwoPi + std::log(pv)) - 0.5 * r * r / pv;
      grad[d] -= r / pv;
    }
    return value;
  }
};

// Observations x_i ~ N(mean, diag(1/precision)); standard normal prior on the
// mean, Gamma prior on the precisions. Latents: [mean (D), precision (D)].
class DiagGaussianConjugateModel final : public Model {
 public:
  using Model::Model;

  std::vector<CoordinateTransform> transforms() const override {
    const int d = spec().data_dim;
    std::vector<CoordinateTransform> t(static_cast<std::size_t>(2 * d), CoordinateTransform::kIdentity);
    for (int i = d; i < 2 * d; ++i) t[static_cast<std::size_t>(i)] = CoordinateTransform::kSoftplus;
    return t;
  }

 protected:
  void validate_latent(const LatentVector& z) const override {
    const int d = spec().data_dim;
    for (int i = d; i < 2 * d; ++i)
      if (!(z.values[i] > 0.0)) detail::throw_domain(i, "must be a positive precision");
  }

  double log_joint_impl(const Dataset& data, const MiniBatch& batch, const LatentVector& z,
                        double scale) const override {
    const auto& h = spec().hyper;
    const int d = spec().data_dim;
    double lik = 0.0;
    for (int i : batch.row_indices)
      for (int j = 0; j < d; ++j) {
        const double tau = z.values[d + j];
        const double r = data.features(i, j) - z.values[j];
        lik += 0.5 * (std::log(tau) - kLogTwoPi) - 0.5 * tau * r * r;
      }
    double prior = 0.0;
    for (int j = 0; j < d; ++j) {
      prior += detail::log_normal_pdf(z.values[j], 0.0, h.prior_scale * h.prior_scale);
      prior += detail::log_gamma_pdf(z.values[d + j], h.gamma_shape, h.gamma_rate);
    }
    return scale * lik + prior;
  }

  double grad_impl(const Dataset& data, const MiniBatch& batch, const LatentVector& z,
                   double scale, Eigen::VectorXd& grad) const override {
    const auto& h = spec().hyper;
    const int d = spec().data_dim;
    const double pv = h.prior_scale * h.prior_scale;
    double lik = 0.0;
    for (int i : batch.row_indices)
      for (int j = 0; j < d; ++j) {
        const double tau = z.values[d + j];
        const double r = data.features(i, j) - z.values[j];
        lik += 0.5 * (std::log(tau) - kLogTwoPi) - 0.5 * tau * r * r;
        grad[j] += scale * tau * r;
        grad[d + j] += scale * (0.5 / tau - 0.5 * r * r);
      }
    double value = scale * lik;
    for (int j = 0; j < d; ++j) {
      const double tau = z.values[d + j];
      value += detail::log_normal_pdf(z.values[j], 0.0, pv);
      value += detail::log_gamma_pdf(tau, h.gamma_shape, h.gamma_rate);
      grad[j] -= z.values[j] / pv;
      grad[d + j] += (h.gamma_shape - 1.0) / tau - h.gamma_rate;
    }
    return value;
  }
};

// y_i ~ N(w . x_i, 1/tau); standard normal prior on w, Gamma prior on tau.
// Latents: [w (D), tau (1)].
class BayesLinearRegressionModel final : public Model {
 public:
  using Model::Model;

  std::vector<CoordinateTransform> transforms() const override {
    std::vector<CoordinateTransform> t(static_cast<std::size_t>(latent_dim()),
                                       CoordinateTransform::kIdentity);
    t.back() = CoordinateTransform::kSoftplus;
    return t;
  }

 protected:
  void validate_latent(const LatentVector& z) const override {
    const int i = spec().data_dim;
    if (!(z.values[i] > 0.0)) detail::throw_domain(i, "must be a positive precision");
  }

  double log_joint_impl(const Dataset& data, const MiniBatch& batch, const LatentVector& z,
                        double scale) const override {
    const auto& h = spec().hyper;
    const int d = spec().data_dim;
    const double tau = z.values[d];
    double lik = 0.0;
    for (int i : batch.row_indices) {
      const double r = data.targets[i] - data.features.row(i).dot(z.values.head(d));
      lik += 0.5 * (std::log(tau) - kLogTwoPi) - 0.5 * tau * r * r;
    }
    double prior = detail::log_gamma_pdf(tau, h.gamma_shape, h.gamma_rate);
    for (int j = 0; j < d; ++j)
      prior += detail::log_normal_pdf(z.values[j], 0.0, h.prior_scale * h.prior_scale);
    return scale * lik + prior;
  }

  double grad_impl(const Dataset& data, const MiniBatch& batch, const LatentVector& z,
                   double scale, Eigen::VectorXd& grad) const override {
    const auto& h = spec().hyper;
    const int d = spec().data_dim;
    const double tau = z.values[d];
    const double pv = h.prior_scale * h.prior_scale;
    double lik = 0.0;
    for (int i : batch.row_indices) {
      const double r = data.targets[i] - data.features.row(i).dot(z.values.head(d));
      lik += 0.5 * (std::log(tau) - kLogTwoPi) - 0.5 * tau * r * r;
      grad.head(d) += scale * tau * r * data.features.row(i).transpose();
      grad[d] += scale * (0.5 / tau - 0.5 * r * r);
    }
    double value = scale * lik + detail::log_gamma_pdf(tau, h.gamma_shape, h.gamma_rate);
    grad[d] += (h.gamma_shape - 1.0) / tau - h.gamma_rate;
    for (int j = 0; j < d; ++j) {
      value += detail::log_normal_pdf(z.values[j], 0.0, pv);
      grad[j] -= z.values[j] / pv;
    }
    return value;
  }
};

// Counts x_i ~ Poisson(rate) with a Gamma prior on the rate. Latent: [rate].
class PoissonGammaModel final : public Model {
 public:
  using Model::Model;

  std::vector<CoordinateTransform> transforms() const override {
    return {CoordinateTransform::kSoftplus};
  }

 protected:
  void validate_latent(const LatentVector& z) const override {
    if (!(z.values[0] > 0.0)) detail::throw_domain(0, "must be a positive rate");
  }

  double log_joint_impl(const Dataset& data, const MiniBatch& batch, const LatentVector& z,
                        double scale) const override {
    const auto& h = spec().hyper;
    const double rate = z.values[0];
    double lik = 0.0;
    for (int i : batch.row_indices) {
      const double x = data.targets[i];
      lik += x * std::log(rate) - rate - std::lgamma(x + 1.0);
    }
    return scale * lik + detail::log_gamma_pdf(rate, h.gamma_shape, h.gamma_rate);
  }

  double grad_impl(const Dataset& data, const MiniBatch& batch, const LatentVector& z,
                   double scale, Eigen::VectorXd& grad) const override {
    const auto& h = spec().hyper;
    const double rate = z.values[0];
    double lik = 0.0;
    for (int i : batch.row_indices) {
      const double x = data.targets[i];
      lik += x * std::log(rate) - rate - std::lgamma(x + 1.0);
      grad[0] += scale * (x / rate - 1.0);
    }
    grad[0] += (h.gamma_shape - 1.0) / rate - h.gamma_rate;
    return scale * lik + detail::log_gamma_pdf(rate, h.gamma_shape, h.gamma_rate);
  }
};

// Mixture of K isotropic Gaussians with fixed component scale; normal priors
// on the means, Dirichlet prior on the weights. Latents: [means k-major
// (K*D), first K-1 mixture weights]. The K-th weight is implied.
class GmmModel final : public Model {
 public:
  using Model::Model;

  std::vector<CoordinateTransform> transforms() const override {
    const int k = spec().mixture_components;
    const int d = spec().data_dim;
    std::vector<CoordinateTransform> t(static_cast<std::size_t>(k * d), CoordinateTransform::kIdentity);
    t.insert(t.end(), static_cast<std::size_t>(k - 1), CoordinateTransform::kStickBreaking);
    return t;
  }

 protected:
  void validate_latent(const LatentVector& z) const override {
    const int k = spec().mixture_components;
    const int base = k * spec().data_dim;
    double total = 0.0;
    for (int j = 0; j < k - 1; ++j) {
      const double w = z.values[base + j];
      if (!(w > 0.0)) detail::throw_domain(base + j, "must be a positive mixture weight");
      total += w;
      if (!(total < 1.0)) detail::throw_domain(base + j, "breaks the simplex constraint");
    }
  }

  double log_joint_impl(const Dataset& data, const MiniBatch& batch, const LatentVector& z,
                        double scale) const override {
    return eval(data, batch, z, scale, nullptr);
  }

  double grad_impl(const Dataset& data, const MiniBatch& batch, const LatentVector& z,
                   double scale, Eigen::VectorXd& grad) const override {
    return eval(data, batch, z, scale, &grad);
  }

 private:
  double eval(const Dataset& data, const MiniBatch& batch, const LatentVector& z, double scale,
              Eigen::VectorXd* grad) const {
    const auto& h = spec().hyper;
    const int k = spec().mixture_components;
    const int d = spec().data_dim;
    const int base = k * d;
    const double cv = h.noise_scale * h.noise_scale;
    const double pv = h.prior_scale * h.prior_scale;

    Eigen::VectorXd log_pi(k);
    double tail = 1.0;
    for (int j = 0; j < k - 1; ++j) {
      log_pi[j] = std::log(z.values[base + j]);
      tail -= z.values[base + j];
    }
    log_pi[k - 1] = std::log(tail);

    double lik = 0.0;
    Eigen::VectorXd comp(k);
    for (int i : batch.row_indices) {
      for (int c = 0; c < k; ++c) {
        double sq = 0.0;
        for (int j = 0; j < d; ++j) {
          const double r = data.features(i, j) - z.values[c * d + j];
          sq += r * r;
        }
        comp[c] = log_pi[c] - 0.5 * d * (kLogTwoPi + std::log(cv)) - 0.5 * sq / cv;
      }
      const double m = comp.maxCoeff();
      const double lse = m + std::log((comp.array() - m).exp().sum());
      lik += lse;
      if (grad) {
        for (int c = 0; c < k; ++c) {
          const double resp = std::exp(comp[c] - lse);
          for (int j = 0; j < d; ++j)
            (*grad)[c * d + j] += scale * resp * (data.features(i, j) - z.values[c * d + j]) / cv;
          if (c < k - 1) {
            // d lse / d pi_c, with the implied last weight folded in
            const double resp_last = std::exp(comp[k - 1] - lse);
            (*grad)[base + c] += scale * (resp / z.values[base + c] - resp_last / tail);
          }
        }
      }
    }

    double prior = 0.0;
    for (int c = 0; c < k; ++c)
      for (int j = 0; j < d; ++j) {
        prior += detail::log_normal_pdf(z.values[c * d + j], 0.0, pv);
        if (grad) (*grad)[c * d + j] -= z.values[c * d + j] / pv;
      }
    prior += std::lgamma(k * h.dirichlet_alpha) - k * std::lgamma(h.dirichlet_alpha);
    for (int c = 0; c < k; ++c) prior += (h.dirichlet_alpha - 1.0) * log_pi[c];
    if (grad)
      for (int j = 0; j < k - 1; ++j)
        (*grad)[base + j] += (h.dirichlet_alpha - 1.0) * (1.0 / z.values[base + j] - 1.0 / tail);

    return scale * lik + prior;
  }
};

inline std::unique_ptr<Model> make_model(const ModelSpec& spec) {
  switch (spec.kind) {
    case ModelKind::kDiagGaussianConjugate: return std::make_unique<DiagGaussianConjugateModel>(spec);
    case ModelKind::kBayesLinearRegression: return std::make_unique<BayesLinearRegressionModel>(spec);
    case ModelKind::kPoissonGamma: return std::make_unique<PoissonGammaModel>(spec);
    case ModelKind::kGmm: return std::make_unique<GmmModel>(spec);
    case ModelKind::kConjugateNormalKnownVariance: return std::make_unique<ConjugateNormalModel>(spec);
  }
  throw std::invalid_argument("make_model: unknown kind");
}

// Marsaglia-Tsang
inline double sample_gamma(RngStream& rng, double shape, double rate) {
  if (shape < 1.0) {
    const double u = std::max(rng.uniform(), 1e-300);
    return sample_gamma(rng, shape + 1.0, rate) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = rng.normal();
    const double t = 1.0 + c * x;
    if (t <= 0.0) continue;
    const double v = t * t * t;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
  }
}

inline double sample_poisson(RngStream& rng, double mean) {
  if (mean < 30.0) {
    const double limit = std::exp(-mean);
    double p = 1.0;
    double k = -1.0;
    do {
      p *= std::max(rng.uniform(), 1e-300);
      k += 1.0;
    } while (p > limit);
    return k;
  }
  return std::max(0.0, std::round(mean + std::sqrt(mean) * rng.normal()));
}

// Draw ground-truth latents from the prior, then data from the likelihood.
// D is the feature dimension (ignored by poisson-gamma, whose observations
// are bare counts).
inline Dataset make_synthetic(const ModelSpec& spec, RngStream& rng, int n, int d) {
  if (n < 1 || d < 1) throw std::invalid_argument("make_synthetic: N and D must be >= 1");
  spec.validate();
  const auto& h = spec.hyper;
  Dataset data;
  switch (spec.kind) {
    case ModelKind::kConjugateNormalKnownVariance: {
      Eigen::VectorXd truth(d);
      for (int j = 0; j < d; ++j) truth[j] = h.prior_mean + h.prior_scale * rng.normal();
      data.features.resize(n, d);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) data.features(i, j) = truth[j] + h.noise_scale * rng.normal();
      data.ground_truth = truth;
      break;
    }
    case ModelKind::kDiagGaussianConjugate: {
      Eigen::VectorXd truth(2 * d);
      for (int j = 0; j < d; ++j) truth[j] = h.prior_scale * rng.normal();
      for (int j = 0; j < d; ++j) truth[d + j] = sample_gamma(rng, h.gamma_shape, h.gamma_rate);
      data.features.resize(n, d);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          data.features(i, j) = truth[j] + rng.normal() / std::sqrt(truth[d + j]);
      data.ground_truth = truth;
      break;
    }
    case ModelKind::kBayesLinearRegression: {
      Eigen::VectorXd truth(d + 1);
      for (int j = 0; j < d; ++j) truth[j] = h.prior_scale * rng.normal();
      truth[d] = sample_gamma(rng, h.gamma_shape, h.gamma_rate);
      const double noise = 1.0 / std::sqrt(truth[d]);
      data.features.resize(n, d);
      data.targets.resize(n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) data.features(i, j) = rng.normal();
        data.targets[i] = data.features.row(i).dot(truth.head(d)) + noise * rng.normal();
      }
      data.ground_truth = truth;
      break;
    }
    case ModelKind::kPoissonGamma: {
      Eigen::VectorXd truth(1);
      truth[0] = sample_gamma(rng, h.gamma_shape, h.gamma_rate);
      data.features.resize(n, 0);
      data.targets.resize(n);
      for (int i = 0; i < n; ++i) data.targets[i] = sample_poisson(rng, truth[0]);
      data.ground_truth = truth;
      break;
    }
    case ModelKind::kGmm: {
      const int k = spec.mixture_components;
      Eigen::VectorXd truth(k * d + (k - 1));
      for (int j = 0; j < k * d; ++j) truth[j] = h.prior_scale * rng.normal();
      Eigen::VectorXd pi(k);
      double total = 0.0;
      for (int c = 0; c < k; ++c) total += pi[c] = sample_gamma(rng, h.dirichlet_alpha, 1.0);
      pi /= total;
      for (int c = 0; c < k - 1; ++c) truth[k * d + c] = pi[c];
      data.features.resize(n, d);
      for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        int c = 0;
        while (c < k - 1 && u >= pi[c]) u -= pi[c], ++c;
        for (int j = 0; j < d; ++j)
          data.features(i, j) = truth[c * d + j] + h.noise_scale * rng.normal();
      }
      data.ground_truth = truth;
      break;
    }
  }
  data.validate();
  return data;
}

struct ConjugateNormalPosterior {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  double log_evidence = 0.0;
};

// Closed-form posterior and evidence for the conjugate-normal model; the
// acceptance oracle for posterior recovery and the ELBO upper bound.
inline ConjugateNormalPosterior conjugate_normal_posterior(const ModelSpec& spec,
                                                           const Dataset& data) {
  if (spec.kind != ModelKind::kConjugateNormalKnownVariance)
    throw std::invalid_argument("conjugate_normal_posterior: wrong model kind");
  const auto& h = spec.hyper;
  const double nv = h.noise_scale * h.noise_scale;
  const double pv = h.prior_scale * h.prior_scale;
  const auto n = static_cast<double>(data.n());
  ConjugateNormalPosterior post;
  post.mean.resize(data.d());
  post.variance.resize(data.d());
  const double precision = 1.0 / pv + n / nv;
  double log_ev = 0.0;
  for (Eigen::Index j = 0; j < data.d(); ++j) {
    const double sum = data.features.col(j).sum();
    post.variance[j] = 1.0 / precision;
    post.mean[j] = (h.prior_mean / pv + sum / nv) / precision;
    // x_col ~ N(m0 1, nv I + pv J); Sherman-Morrison for the quadratic form
    const Eigen::ArrayXd r = data.features.col(j).array() - h.prior_mean;
    const double rsum = r.sum();
    const double quad = (r.square().sum() - pv / (nv + n * pv) * rsum * rsum) / nv;
    const double logdet = n * std::log(nv) + std::log1p(n * pv / nv);
    log_ev += -0.5 * (n * kLogTwoPi + logdet + quad);
  }
  post.log_evidence = log_ev;
  return post;
}

}  // namespace isvi
