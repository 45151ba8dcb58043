#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "isvi/config.hpp"
#include "isvi/estimators.hpp"
#include "isvi/models.hpp"
#include "isvi/optimizers.hpp"
#include "isvi/trace.hpp"

namespace isvi {

// sub-stream tags deriving all run randomness from one user seed
namespace seed_stream {
inline constexpr std::uint64_t kModel = 0;     // used inside optimizer runs
inline constexpr std::uint64_t kDecision = 1;  // used inside optimizer runs
inline constexpr std::uint64_t kData = 2;
inline constexpr std::uint64_t kEval = 3;
}  // namespace seed_stream

inline RunResult dispatch_optimizer(const OptimizerChoice& choice, const OptimizerInputs& inputs) {
  switch (choice.kind) {
    case OptimizerKind::kSgd: return sgd_run(inputs);
    case OptimizerKind::kIsgd: return isgd_run(inputs, choice.isgd);
    case OptimizerKind::kSag: return sag_run(inputs, choice.isag);
    case OptimizerKind::kIsag: return isag_run(inputs, choice.isag);
    case OptimizerKind::kSra: return sra_run(inputs, choice.sra);
  }
  throw std::invalid_argument("dispatch_optimizer: unknown kind");
}

struct FitReport {
  FactorizedApproxParams params;
  std::vector<TraceRecord> trace;
  EvalCounters counters;
  Dataset data;
  double final_elbo = 0.0;
  double final_elbo_se = 0.0;
  Eigen::VectorXd posterior_mean;
  long threshold_crossing_step = 0;  // first step within one nat of the run's smoothed peak
};

namespace detail {

// full-data ELBO estimate at fixed parameters plus the posterior-mean readout
inline void evaluate_final(const Model& model, const Dataset& data,
                           const FactorizedApproxParams& params, std::uint64_t seed,
                           int num_samples, FitReport& report) {
  RngStream rng = RngStream::substream(seed, seed_stream::kEval);
  const MiniBatch batch = full_batch(data.n());
  double acc = 0.0, acc_sq = 0.0;
  Eigen::VectorXd z_mean = Eigen::VectorXd::Zero(params.dim());
  for (int m = 0; m < num_samples; ++m) {
    const EpsilonVector eps = sample_epsilon(rng, static_cast<int>(params.dim()));
    const LatentVector z = forward(params, eps);
    const double value = model.log_joint(data, batch, z) - log_q_density(params, eps);
    acc += value;
    acc_sq += value * value;
    z_mean += z.values;
  }
  report.final_elbo = acc / num_samples;
  const double var = acc_sq / num_samples - report.final_elbo * report.final_elbo;
  report.final_elbo_se = std::sqrt(std::max(0.0, var) / num_samples);
  z_mean /= static_cast<double>(num_samples);
  report.posterior_mean = z_mean;
  // identity coordinates have an exact mean
  for (Eigen::Index i = 0; i < params.dim(); ++i)
    if (params.transforms[static_cast<std::size_t>(i)] == CoordinateTransform::kIdentity)
      report.posterior_mean[i] = params.location[i];
}

inline long crossing_step(const std::vector<TraceRecord>& trace, double threshold, int window) {
  for (std::size_t i = 0; i < trace.size(); ++i)
    if (smoothed_elbo(trace, i, static_cast<std::size_t>(window)) >= threshold)
      return trace[i].step;
  return -1;
}

inline double smoothed_peak(const std::vector<TraceRecord>& trace, int window) {
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trace.size(); ++i)
    peak = std::max(peak, smoothed_elbo(trace, i, static_cast<std::size_t>(window)));
  return peak;
}

}  // namespace detail

inline FitReport run_fit(const FitConfig& cfg) {
  RngStream data_rng = RngStream::substream(cfg.run.seed, seed_stream::kData);
  FitReport report;
  report.data = make_synthetic(cfg.model, data_rng, cfg.data.n, cfg.data.d);
  auto model = make_model(cfg.model);

  OptimizerInputs inputs;
  inputs.model = model.get();
  inputs.data = &report.data;
  inputs.init = make_approx_params(model->transforms(), cfg.approx.factor_size,
                                   cfg.approx.init_location, cfg.approx.init_unconstrained_scale);
  inputs.estimator = cfg.estimator;
  inputs.estimator_config = cfg.estimator_config;
  inputs.adam = cfg.adam;
  inputs.batch_size = cfg.run.batch_size;
  inputs.stop.max_epochs = cfg.run.epochs;
  inputs.stop.plateau = cfg.run.plateau;
  inputs.stop.plateau_rel_tol = cfg.run.plateau_rel_tol;
  inputs.stop.plateau_epochs = cfg.run.plateau_epochs;
  inputs.stop.smoothing_window = cfg.run.smoothing_window;
  inputs.seed = cfg.run.seed;

  RunResult result = dispatch_optimizer(cfg.optimizer, inputs);
  report.params = std::move(result.params);
  report.trace = std::move(result.trace);
  report.counters = result.counters;
  detail::evaluate_final(*model, report.data, report.params, cfg.run.seed, 1000, report);
  if (!report.trace.empty()) {
    const double peak = detail::smoothed_peak(report.trace, cfg.run.smoothing_window);
    report.threshold_crossing_step =
        detail::crossing_step(report.trace, peak - 1.0, cfg.run.smoothing_window);
  }
  return report;
}

inline void write_fit_outputs(const FitReport& report, const FitConfig& cfg,
                              const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  write_trace_csv(report.trace, out_dir + "/trace.csv");
  write_dataset_csv(report.data, out_dir + "/data.csv");

  nlohmann::json summary;
  summary["model"] = to_string(cfg.model.kind);
  summary["optimizer"] = to_string(cfg.optimizer.kind);
  summary["seed"] = cfg.run.seed;
  summary["steps"] = report.trace.size();
  summary["model_grad_evals"] = report.counters.grad_evals;
  summary["logp_evals"] = report.counters.logp_evals;
  summary["final_elbo"] = report.final_elbo;
  summary["final_elbo_se"] = report.final_elbo_se;
  summary["threshold_crossing_step"] = report.threshold_crossing_step;
  summary["final_location"] = std::vector<double>(report.params.location.begin(),
                                                  report.params.location.end());
  summary["final_unconstrained_scale"] =
      std::vector<double>(report.params.unconstrained_scale.begin(),
                          report.params.unconstrained_scale.end());
  summary["posterior_mean"] =
      std::vector<double>(report.posterior_mean.begin(), report.posterior_mean.end());
  std::ofstream out(out_dir + "/summary.json");
  if (!out) throw std::runtime_error("cannot open " + out_dir + "/summary.json");
  out << summary.dump(2) << '\n';
}

struct WeightDecayReport {
  std::vector<int> factor_sizes;
  int reuse_steps = 0;
  Eigen::MatrixXd mean_weight;  // factor sizes x reuse steps
};

// Weight-decay study: repeated reuse of one cache on a diagonal Gaussian
// target, tracking how fast the factor weights decay as the parameters drift.
inline WeightDecayReport run_weight_decay(const WeightDecayConfig& cfg) {
  ModelSpec spec;
  spec.kind = ModelKind::kConjugateNormalKnownVariance;
  spec.data_dim = cfg.dimension;
  spec.hyper.prior_mean = cfg.target_mean;
  spec.hyper.prior_scale = cfg.target_scale;
  auto model = make_model(spec);
  Dataset data;
  data.features = Eigen::MatrixXd::Zero(1, cfg.dimension);
  const MiniBatch batch = MiniBatch::prior_only();

  EstimatorConfig est;
  est.num_samples = cfg.num_samples;
  est.weight_ceiling = 1e300;  // the study observes decay, never refuses
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;

  WeightDecayReport report;
  report.factor_sizes = cfg.factor_sizes;
  report.reuse_steps = cfg.reuse_steps;
  report.mean_weight =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cfg.factor_sizes.size()), cfg.reuse_steps);

  for (std::size_t f = 0; f < cfg.factor_sizes.size(); ++f) {
    const int factor_size = cfg.factor_sizes[f];
    for (int rep = 0; rep < cfg.replicates; ++rep) {
      RngStream rng = RngStream::substream(
          cfg.seed, (static_cast<std::uint64_t>(f) << 32) + static_cast<std::uint64_t>(rep));
      auto params = make_approx_params(
          std::vector<CoordinateTransform>(static_cast<std::size_t>(cfg.dimension),
                                           CoordinateTransform::kIdentity),
          factor_size, cfg.init_location, cfg.init_unconstrained_scale);
      AdamState state = AdamState::init(params.dim(), adam);
      auto fresh = reparam_gradient(params, *model, data, batch, est, rng);
      std::tie(state, params) = adam_step(std::move(state), std::move(params), fresh.grad);
      for (int k = 0; k < cfg.reuse_steps; ++k) {
        auto iw = importance_weights(fresh.cache, params);
        report.mean_weight(static_cast<Eigen::Index>(f), k) += iw.weights.mean();
        auto reuse = importance_gradient(fresh.cache, params, est);
        std::tie(state, params) = adam_step(std::move(state), std::move(params), reuse.grad);
      }
    }
  }
  report.mean_weight /= static_cast<double>(cfg.replicates);
  return report;
}

inline void write_weight_decay_outputs(const WeightDecayReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  for (std::size_t f = 0; f < report.factor_sizes.size(); ++f) {
    std::ostringstream name;
    name << out_dir << "/factor_" << std::setw(3) << std::setfill('0') << report.factor_sizes[f]
         << ".csv";
    std::ofstream out(name.str());
    if (!out) throw std::runtime_error("cannot open " + name.str());
    out << "reuse_step,mean_weight\n" << std::setprecision(17);
    for (int k = 0; k < report.reuse_steps; ++k)
      out << (k + 1) << ',' << report.mean_weight(static_cast<Eigen::Index>(f), k) << '\n';
  }
  std::ofstream combined(out_dir + "/summary.csv");
  if (!combined) throw std::runtime_error("cannot open " + out_dir + "/summary.csv");
  combined << "factor_size,reuse_step,mean_weight\n" << std::setprecision(17);
  for (std::size_t f = 0; f < report.factor_sizes.size(); ++f)
    for (int k = 0; k < report.reuse_steps; ++k)
      combined << report.factor_sizes[f] << ',' << (k + 1) << ','
               << report.mean_weight(static_cast<Eigen::Index>(f), k) << '\n';
}

struct BenchRow {
  std::string name;
  bool reached = false;
  long steps_to_threshold = -1;
  std::uint64_t grad_evals_to_threshold = 0;
  std::uint64_t logp_evals_to_threshold = 0;
  double wall_ms_to_threshold = 0.0;
  double final_smoothed_elbo = 0.0;
};

struct BenchReport {
  double threshold = 0.0;
  std::vector<BenchRow> rows;
  std::vector<std::pair<std::string, RunResult>> runs;
};

// Shared-settings comparison: every variant sees the same dataset,
// initialization and seed; only the optimizer (and any explicit per-variant
// batch/estimator override) differs.
inline BenchReport run_bench(const BenchConfig& cfg) {
  RngStream data_rng = RngStream::substream(cfg.run.seed, seed_stream::kData);
  const Dataset data = make_synthetic(cfg.model, data_rng, cfg.data.n, cfg.data.d);

  const auto run_variant = [&](const BenchVariant& variant) {
    auto model = make_model(cfg.model);
    OptimizerInputs inputs;
    inputs.model = model.get();
    inputs.data = &data;
    inputs.init = make_approx_params(model->transforms(), cfg.approx.factor_size,
                                     cfg.approx.init_location, cfg.approx.init_unconstrained_scale);
    inputs.estimator = variant.estimator.value_or(cfg.estimator);
    inputs.estimator_config = cfg.estimator_config;
    inputs.adam = cfg.adam;
    inputs.batch_size = variant.batch_size.value_or(cfg.run.batch_size);
    inputs.stop.max_epochs = cfg.run.epochs;
    inputs.stop.plateau = cfg.run.plateau;
    inputs.stop.plateau_rel_tol = cfg.run.plateau_rel_tol;
    inputs.stop.plateau_epochs = cfg.run.plateau_epochs;
    inputs.stop.smoothing_window = cfg.run.smoothing_window;
    inputs.seed = cfg.run.seed;
    return dispatch_optimizer(variant.optimizer, inputs);
  };

  BenchReport report;
  for (const auto& variant : cfg.variants)
    report.runs.emplace_back(variant.name, run_variant(variant));

  // threshold from the sgd baseline's own converged trace
  if (cfg.threshold.mode == ThresholdSpec::Mode::kFixed) {
    report.threshold = cfg.threshold.value;
  } else {
    const std::vector<TraceRecord>* baseline = nullptr;
    for (std::size_t i = 0; i < cfg.variants.size(); ++i)
      if (cfg.variants[i].optimizer.kind == OptimizerKind::kSgd && !baseline)
        baseline = &report.runs[i].second.trace;
    if (!baseline) {
      BenchVariant implicit;
      implicit.name = "sgd-baseline";
      implicit.optimizer.kind = OptimizerKind::kSgd;
      report.runs.emplace_back(implicit.name, run_variant(implicit));
      baseline = &report.runs.back().second.trace;
    }
    report.threshold =
        detail::smoothed_peak(*baseline, cfg.run.smoothing_window) - cfg.threshold.nats;
  }

  for (const auto& [name, run] : report.runs) {
    BenchRow row;
    row.name = name;
    row.final_smoothed_elbo = run.trace.empty()
                                  ? -std::numeric_limits<double>::infinity()
                                  : smoothed_elbo(run.trace, run.trace.size() - 1,
                                                  static_cast<std::size_t>(cfg.run.smoothing_window));
    const long step = detail::crossing_step(run.trace, report.threshold, cfg.run.smoothing_window);
    if (step > 0) {
      const auto& rec = run.trace[static_cast<std::size_t>(step - 1)];
      row.reached = true;
      row.steps_to_threshold = step;
      row.grad_evals_to_threshold = rec.model_grad_evals;
      row.logp_evals_to_threshold = rec.logp_evals;
      row.wall_ms_to_threshold = rec.wall_ms;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline void write_bench_outputs(const BenchReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  for (const auto& [name, run] : report.runs)
    write_trace_csv(run.trace, out_dir + "/trace_" + name + ".csv");
  std::ofstream out(out_dir + "/comparison.csv");
  if (!out) throw std::runtime_error("cannot open " + out_dir + "/comparison.csv");
  out << "variant,reached,steps_to_threshold,model_grad_evals_to_threshold,"
         "logp_evals_to_threshold,wall_ms_to_threshold,final_smoothed_elbo,threshold\n"
      << std::setprecision(17);
  for (const auto& row : report.rows)
    out << row.name << ',' << (row.reached ? 1 : 0) << ',' << row.steps_to_threshold << ','
        << row.grad_evals_to_threshold << ',' << row.logp_evals_to_threshold << ','
        << row.wall_ms_to_threshold << ',' << row.final_smoothed_elbo << ',' << report.threshold
        << '\n';
}

// ---- CLI entry points; exit codes: 0 ok, 1 config, 2 runtime, 3 threshold ----

inline int cmd_fit(const std::string& config_path, std::optional<std::uint64_t> seed_override,
                   std::optional<std::string> out_override) {
  try {
    FitConfig cfg = parse_fit_config(load_json_file(config_path));
    if (seed_override) cfg.run.seed = *seed_override;
    if (out_override) cfg.run.out = *out_override;
    FitReport report = run_fit(cfg);
    write_fit_outputs(report, cfg, cfg.run.out);
    std::cout << "fit: " << report.trace.size() << " steps, final ELBO " << report.final_elbo
              << " (se " << report.final_elbo_se << "), outputs in " << cfg.run.out << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

inline int cmd_weight_decay(const std::string& config_path,
                            std::optional<std::uint64_t> seed_override,
                            std::optional<std::string> out_override) {
  try {
    WeightDecayConfig cfg = parse_weight_decay_config(load_json_file(config_path));
    if (seed_override) cfg.seed = *seed_override;
    if (out_override) cfg.out = *out_override;
    WeightDecayReport report = run_weight_decay(cfg);
    write_weight_decay_outputs(report, cfg.out);
    std::cout << "weight-decay: " << cfg.factor_sizes.size() << " factor sizes x "
              << cfg.reuse_steps << " reuse steps, outputs in " << cfg.out << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

inline int cmd_bench(const std::string& config_path, std::optional<std::uint64_t> seed_override,
                     std::optional<std::string> out_override) {
  try {
    BenchConfig cfg = parse_bench_config(load_json_file(config_path));
    if (seed_override) cfg.run.seed = *seed_override;
    if (out_override) cfg.run.out = *out_override;
    BenchReport report = run_bench(cfg);
    write_bench_outputs(report, cfg.run.out);
    bool all_reached = true;
    for (const auto& row : report.rows) {
      std::cout << row.name << ": "
                << (row.reached ? "reached threshold at step " + std::to_string(row.steps_to_threshold) +
                                      " (" + std::to_string(row.grad_evals_to_threshold) +
                                      " grad evals, " + std::to_string(row.logp_evals_to_threshold) +
                                      " logp evals)"
                                : "did not reach the threshold")
                << "\n";
      all_reached = all_reached && row.reached;
    }
    std::cout << "threshold " << report.threshold << ", outputs in " << cfg.run.out << "\n";
    return all_reached ? 0 : 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace isvi
