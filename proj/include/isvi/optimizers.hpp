#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "isvi/estimators.hpp"
#include "isvi/trace.hpp"

namespace isvi {

struct AdamConfig {
  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon_stabilizer = 1e-8;

  void validate() const {
    if (learning_rate < 0 || beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 ||
        epsilon_stabilizer <= 0)
      throw std::invalid_argument("adam: invalid configuration");
  }
};

// Moments are stored flat as [location block; unconstrained-scale block].
struct AdamState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  long step_count = 0;
  AdamConfig config;

  static AdamState init(Eigen::Index dim, AdamConfig cfg = {}) {
    cfg.validate();
    return {Eigen::VectorXd::Zero(2 * dim), Eigen::VectorXd::Zero(2 * dim), 0, cfg};
  }
};

// One ascent step (the ELBO is maximized): bias-corrected moments, then
// params += lr * m_hat / (sqrt(v_hat) + eps).
inline std::pair<AdamState, FactorizedApproxParams> adam_step(AdamState state,
                                                              FactorizedApproxParams params,
                                                              const GradientVector& grad) {
  const Eigen::Index d = params.dim();
  if (grad.dim() != d || state.first_moment.size() != 2 * d)
    throw std::invalid_argument("adam_step: dimension mismatch");
  const auto& cfg = state.config;
  state.step_count += 1;
  Eigen::VectorXd g(2 * d);
  g << grad.location, grad.unconstrained_scale;
  state.first_moment = cfg.beta1 * state.first_moment + (1.0 - cfg.beta1) * g;
  state.second_moment =
      cfg.beta2 * state.second_moment + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
  const Eigen::ArrayXd m_hat = state.first_moment.array() / c1;
  const Eigen::ArrayXd v_hat = state.second_moment.array() / c2;
  const Eigen::ArrayXd delta = cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon_stabilizer);
  params.location += delta.head(d).matrix();
  params.unconstrained_scale += delta.tail(d).matrix();
  return {std::move(state), std::move(params)};
}

enum class EstimatorKind { kReparam, kScore };

struct ISgdConfig {
  double reuse_probability = 0.9;  // t of the reuse heuristic
  int max_reuse_steps = 50;

  void validate() const {
    if (!(reuse_probability >= 0.0 && reuse_probability < 1.0))
      throw std::invalid_argument("isgd: reuse_probability must lie in [0, 1)");
    if (max_reuse_steps < 1) throw std::invalid_argument("isgd: max_reuse_steps must be >= 1");
  }
};

struct ISagConfig {
  int latest_k = 0;  // 0 keeps every batch
  bool average_over_batches = true;

  void validate() const {
    if (latest_k < 0) throw std::invalid_argument("isag: latest_k must be >= 0");
  }
};

struct SraConfig {
  double decay = 0.9;  // alpha

  void validate() const {
    if (!(decay > 0.0 && decay < 1.0))
      throw std::invalid_argument("sra: decay must lie in (0, 1)");
  }
};

struct StopRule {
  int max_epochs = 10;
  bool plateau = false;             // stop early once the smoothed ELBO flattens
  double plateau_rel_tol = 1e-4;
  int plateau_epochs = 5;
  int smoothing_window = 100;

  void validate() const {
    if (max_epochs < 0) throw std::invalid_argument("stop: max_epochs must be >= 0");
    if (plateau && (plateau_epochs < 1 || smoothing_window < 1 || plateau_rel_tol < 0))
      throw std::invalid_argument("stop: invalid plateau rule");
  }
};

struct OptimizerInputs {
  const Model* model = nullptr;
  const Dataset* data = nullptr;
  FactorizedApproxParams init;
  EstimatorKind estimator = EstimatorKind::kReparam;
  EstimatorConfig estimator_config;
  AdamConfig adam;
  int batch_size = 0;
  StopRule stop;
  std::uint64_t seed = 0;
  std::vector<GradientVector>* step_gradients_out = nullptr;  // test instrumentation

  void validate() const {
    if (!model || !data) throw std::invalid_argument("optimizer: model and data are required");
    if (batch_size < 1) throw std::invalid_argument("optimizer: batch_size must be >= 1");
    estimator_config.validate();
    adam.validate();
    stop.validate();
    if (init.dim() != model->latent_dim())
      throw std::invalid_argument("optimizer: approximation dimension must match the model");
  }
};

struct RunResult {
  FactorizedApproxParams params;
  std::vector<TraceRecord> trace;
  EvalCounters counters;
};

namespace detail {

class RunContext {
 public:
  explicit RunContext(const OptimizerInputs& in)
      : in_(in),
        batches_(make_batches(in.data->n(), in.batch_size)),
        model_rng_(RngStream::substream(in.seed, 0)),
        decision_rng_(RngStream::substream(in.seed, 1)),
        start_(std::chrono::steady_clock::now()) {
    in.validate();
    in.model->reset_counters();
  }

  const std::vector<MiniBatch>& batches() const { return batches_; }
  RngStream& decision_rng() { return decision_rng_; }

  FreshGradientResult fresh(const FactorizedApproxParams& params, const MiniBatch& batch) {
    if (in_.estimator == EstimatorKind::kReparam)
      return reparam_gradient(params, *in_.model, *in_.data, batch, in_.estimator_config,
                              model_rng_);
    return score_gradient(params, *in_.model, *in_.data, batch, in_.estimator_config, model_rng_);
  }

  ImportanceGradientResult reuse(const SampleCache& cache, const FactorizedApproxParams& params) {
    if (in_.estimator == EstimatorKind::kReparam)
      return importance_gradient(cache, params, in_.estimator_config);
    return importance_score_gradient(cache, params, in_.estimator_config);
  }

  void record(StepKind kind, double elbo, double mean_weight, const GradientVector& used) {
    TraceRecord r;
    r.step = static_cast<long>(trace_.size()) + 1;
    r.step_kind = kind;
    r.model_grad_evals = in_.model->counters().grad_evals;
    r.logp_evals = in_.model->counters().logp_evals;
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
                    .count();
    r.elbo = elbo;
    r.mean_weight = mean_weight;
    trace_.push_back(r);
    if (in_.step_gradients_out) in_.step_gradients_out->push_back(used);
    if (!std::isfinite(elbo)) throw std::runtime_error("optimizer: non-finite ELBO estimate");
  }

  // epoch-boundary plateau check on the smoothed ELBO
  bool should_stop_early() {
    if (!in_.stop.plateau || trace_.empty()) return false;
    epoch_smoothed_.push_back(
        smoothed_elbo(trace_, trace_.size() - 1, static_cast<std::size_t>(in_.stop.smoothing_window)));
    const int lag = in_.stop.plateau_epochs;
    if (static_cast<int>(epoch_smoothed_.size()) <= lag) return false;
    const double now = epoch_smoothed_.back();
    const double then = epoch_smoothed_[epoch_smoothed_.size() - 1 - static_cast<std::size_t>(lag)];
    return (now - then) / std::max(1.0, std::abs(then)) < in_.stop.plateau_rel_tol;
  }

  RunResult finish(FactorizedApproxParams params) {
    return {std::move(params), std::move(trace_), in_.model->counters()};
  }

 private:
  const OptimizerInputs& in_;
  std::vector<MiniBatch> batches_;
  RngStream model_rng_;
  RngStream decision_rng_;
  std::chrono::steady_clock::time_point start_;
  std::vector<TraceRecord> trace_;
  std::vector<double> epoch_smoothed_;
};

}  // namespace detail

// Plain stochastic gradient ascent: one fresh estimate and one Adam step per
// mini-batch.
inline RunResult sgd_run(const OptimizerInputs& in) {
  detail::RunContext ctx(in);
  FactorizedApproxParams params = in.init;
  AdamState state = AdamState::init(params.dim(), in.adam);
  for (int epoch = 0; epoch < in.stop.max_epochs; ++epoch) {
    for (const auto& batch : ctx.batches()) {
      auto fresh = ctx.fresh(params, batch);
      std::tie(state, params) = adam_step(std::move(state), std::move(params), fresh.grad);
      ctx.record(StepKind::kFresh, fresh.elbo, 1.0, fresh.grad);
    }
    if (ctx.should_stop_early()) break;
  }
  return ctx.finish(std::move(params));
}

// Importance-sampled SGD: with probability t the stored cache is re-weighted
// into a gradient at the current parameters (no model calls); otherwise the
// next mini-batch gets a fresh estimate which replaces the cache. A refused
// reuse (oversized weight) falls through to the fresh branch. The reuse coin
// comes from a dedicated stream so t = 0 replays the exact SGD trajectory.
inline RunResult isgd_run(const OptimizerInputs& in, const ISgdConfig& cfg) {
  cfg.validate();
  detail::RunContext ctx(in);
  FactorizedApproxParams params = in.init;
  AdamState state = AdamState::init(params.dim(), in.adam);
  std::optional<SampleCache> cache;
  int reuse_streak = 0;
  std::size_t cursor = 0;
  int epochs_done = 0;
  while (epochs_done < in.stop.max_epochs) {
    bool took_reuse = false;
    if (cache && reuse_streak < cfg.max_reuse_steps &&
        ctx.decision_rng().uniform() < cfg.reuse_probability) {
      auto res = ctx.reuse(*cache, params);
      if (!res.refused) {
        const double elbo = importance_elbo(*cache, params);
        std::tie(state, params) = adam_step(std::move(state), std::move(params), res.grad);
        ctx.record(StepKind::kReuse, elbo, res.mean_weight, res.grad);
        ++reuse_streak;
        took_reuse = true;
      }
    }
    if (!took_reuse) {
      const MiniBatch& batch = ctx.batches()[cursor];
      auto fresh = ctx.fresh(params, batch);
      cache = std::move(fresh.cache);
      std::tie(state, params) = adam_step(std::move(state), std::move(params), fresh.grad);
      ctx.record(StepKind::kFresh, fresh.elbo, 1.0, fresh.grad);
      reuse_streak = 0;
      if (++cursor == ctx.batches().size()) {
        cursor = 0;
        ++epochs_done;
        if (ctx.should_stop_early()) break;
      }
    }
  }
  return ctx.finish(std::move(params));
}

namespace detail {

// per-batch gradient table shared by the averaged-gradient optimizers
struct GradientTable {
  std::vector<std::optional<GradientVector>> slots;

  explicit GradientTable(std::size_t n) : slots(n) {}

  GradientVector combined(Eigen::Index dim, bool average) const {
    GradientVector sum = GradientVector::zero(dim);
    int count = 0;
    for (const auto& slot : slots)
      if (slot) {
        sum += *slot;
        ++count;
      }
    if (average && count > 0) sum *= 1.0 / static_cast<double>(count);
    return sum;
  }
};

}  // namespace detail

// Stochastic average gradients over mini-batches: refreshing the visited
// batch's stored gradient, stepping along the combination of all stored ones
// (stale entries used as-is). The table is populated by one initial fresh
// sweep that also takes plain gradient steps.
inline RunResult sag_run(const OptimizerInputs& in, const ISagConfig& cfg) {
  cfg.validate();
  detail::RunContext ctx(in);
  FactorizedApproxParams params = in.init;
  AdamState state = AdamState::init(params.dim(), in.adam);
  detail::GradientTable table(ctx.batches().size());

  for (std::size_t b = 0; b < ctx.batches().size() && in.stop.max_epochs > 0; ++b) {
    auto fresh = ctx.fresh(params, ctx.batches()[b]);
    table.slots[b] = fresh.grad;
    std::tie(state, params) = adam_step(std::move(state), std::move(params), fresh.grad);
    ctx.record(StepKind::kFresh, fresh.elbo, 1.0, fresh.grad);
  }
  for (int epoch = 1; epoch < in.stop.max_epochs; ++epoch) {
    for (std::size_t b = 0; b < ctx.batches().size(); ++b) {
      auto fresh = ctx.fresh(params, ctx.batches()[b]);
      table.slots[b] = fresh.grad;
      GradientVector g = table.combined(params.dim(), cfg.average_over_batches);
      std::tie(state, params) = adam_step(std::move(state), std::move(params), g);
      ctx.record(StepKind::kFresh, fresh.elbo, 1.0, g);
    }
    if (ctx.should_stop_early()) break;
  }
  return ctx.finish(std::move(params));
}

// Importance-sampled SAG: the visited batch gets a fresh gradient and cache;
// every other retained batch contributes an importance-reweighted gradient
// recomputed at the current parameters from its stored cache (no model
// calls). Batches whose weights blow past the ceiling sit out the step.
inline RunResult isag_run(const OptimizerInputs& in, const ISagConfig& cfg) {
  cfg.validate();
  detail::RunContext ctx(in);
  FactorizedApproxParams params = in.init;
  AdamState state = AdamState::init(params.dim(), in.adam);
  const std::size_t n_batches = ctx.batches().size();

  std::vector<std::optional<SampleCache>> caches(n_batches);
  std::vector<long> last_visit(n_batches, -1);
  long visit_counter = 0;

  const auto evict_beyond_k = [&]() {
    if (cfg.latest_k <= 0) return;
    for (;;) {
      int live = 0;
      std::size_t oldest = 0;
      long oldest_visit = std::numeric_limits<long>::max();
      for (std::size_t c = 0; c < n_batches; ++c)
        if (caches[c]) {
          ++live;
          if (last_visit[c] < oldest_visit) {
            oldest_visit = last_visit[c];
            oldest = c;
          }
        }
      if (live <= cfg.latest_k) break;
      caches[oldest].reset();
    }
  };

  const auto step_with_history = [&](std::size_t current) {
    auto fresh = ctx.fresh(params, ctx.batches()[current]);
    caches[current] = std::move(fresh.cache);
    last_visit[current] = visit_counter++;
    evict_beyond_k();
    GradientVector total = fresh.grad;
    int contributing = 1;
    for (std::size_t c = 0; c < n_batches; ++c) {
      if (c == current || !caches[c]) continue;
      auto res = ctx.reuse(*caches[c], params);
      if (res.refused) continue;
      total += res.grad;
      ++contributing;
    }
    if (cfg.average_over_batches) total *= 1.0 / static_cast<double>(contributing);
    std::tie(state, params) = adam_step(std::move(state), std::move(params), total);
    ctx.record(StepKind::kFresh, fresh.elbo, 1.0, total);
  };

  // initial sweep: plain fresh steps that fill the cache table
  for (std::size_t b = 0; b < n_batches && in.stop.max_epochs > 0; ++b) {
    auto fresh = ctx.fresh(params, ctx.batches()[b]);
    caches[b] = std::move(fresh.cache);
    last_visit[b] = visit_counter++;
    evict_beyond_k();
    std::tie(state, params) = adam_step(std::move(state), std::move(params), fresh.grad);
    ctx.record(StepKind::kFresh, fresh.elbo, 1.0, fresh.grad);
  }
  for (int epoch = 1; epoch < in.stop.max_epochs; ++epoch) {
    for (std::size_t b = 0; b < n_batches; ++b) step_with_history(b);
    if (ctx.should_stop_early()) break;
  }
  return ctx.finish(std::move(params));
}

// Stochastic running average: exponential decay of past mini-batch gradients.
inline RunResult sra_run(const OptimizerInputs& in, const SraConfig& cfg) {
  cfg.validate();
  detail::RunContext ctx(in);
  FactorizedApproxParams params = in.init;
  AdamState state = AdamState::init(params.dim(), in.adam);
  GradientVector avg = GradientVector::zero(params.dim());
  for (int epoch = 0; epoch < in.stop.max_epochs; ++epoch) {
    for (const auto& batch : ctx.batches()) {
      auto fresh = ctx.fresh(params, batch);
      avg *= cfg.decay;
      GradientVector scaled = fresh.grad;
      scaled *= 1.0 - cfg.decay;
      avg += scaled;
      std::tie(state, params) = adam_step(std::move(state), std::move(params), avg);
      ctx.record(StepKind::kFresh, fresh.elbo, 1.0, avg);
    }
    if (ctx.should_stop_early()) break;
  }
  return ctx.finish(std::move(params));
}

}  // namespace isvi
