#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "isvi/models.hpp"
#include "isvi/optimizers.hpp"

namespace isvi {

// configuration problems exit with code 1; runtime failures with code 2
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cfg_detail {

using nlohmann::json;

inline void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + " must be an object");
}

// unknown keys are configuration errors, named fully
inline void check_keys(const json& obj, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ConfigError("unknown key " + (path.empty() ? key : path + "." + key));
  }
}

inline const json* find(const json& obj, const std::string& key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline double get_number(const json& obj, const std::string& path, const std::string& key,
                         double fallback) {
  const json* j = find(obj, key);
  if (!j) return fallback;
  if (!j->is_number()) throw ConfigError(path + "." + key + " must be a number");
  return j->get<double>();
}

inline int get_int(const json& obj, const std::string& path, const std::string& key,
                   int fallback) {
  const json* j = find(obj, key);
  if (!j) return fallback;
  if (!j->is_number_integer()) throw ConfigError(path + "." + key + " must be an integer");
  return j->get<int>();
}

inline std::uint64_t get_u64(const json& obj, const std::string& path, const std::string& key) {
  const json* j = find(obj, key);
  if (!j) throw ConfigError(path + "." + key + " is required");
  if (!j->is_number_unsigned() && !j->is_number_integer())
    throw ConfigError(path + "." + key + " must be a non-negative integer");
  return j->get<std::uint64_t>();
}

inline bool get_bool(const json& obj, const std::string& path, const std::string& key,
                     bool fallback) {
  const json* j = find(obj, key);
  if (!j) return fallback;
  if (!j->is_boolean()) throw ConfigError(path + "." + key + " must be a boolean");
  return j->get<bool>();
}

inline std::string get_string(const json& obj, const std::string& path, const std::string& key,
                              const std::string& fallback) {
  const json* j = find(obj, key);
  if (!j) return fallback;
  if (!j->is_string()) throw ConfigError(path + "." + key + " must be a string");
  return j->get<std::string>();
}

}  // namespace cfg_detail

enum class OptimizerKind { kSgd, kIsgd, kSag, kIsag, kSra };

inline std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kIsgd: return "isgd";
    case OptimizerKind::kSag: return "sag";
    case OptimizerKind::kIsag: return "isag";
    case OptimizerKind::kSra: return "sra";
  }
  return "?";
}

struct OptimizerChoice {
  OptimizerKind kind = OptimizerKind::kSgd;
  ISgdConfig isgd;
  ISagConfig isag;  // shared by sag (average flag) and isag
  SraConfig sra;
};

struct ApproxInit {
  int factor_size = 1;
  double init_location = 0.0;
  double init_unconstrained_scale = std::log(0.1);
};

struct RunSettings {
  int batch_size = 100;
  int epochs = 10;
  std::uint64_t seed = 0;
  bool plateau = false;
  double plateau_rel_tol = 1e-4;
  int plateau_epochs = 5;
  int smoothing_window = 100;
  std::string out = "runs/out";
};

struct DataSettings {
  int n = 1000;
  int d = 10;
};

struct FitConfig {
  ModelSpec model;
  DataSettings data;
  ApproxInit approx;
  EstimatorKind estimator = EstimatorKind::kReparam;
  EstimatorConfig estimator_config;
  AdamConfig adam;
  OptimizerChoice optimizer;
  RunSettings run;
};

struct ThresholdSpec {
  enum class Mode { kSgdMinusNats, kFixed };
  Mode mode = Mode::kSgdMinusNats;
  double nats = 1.0;
  double value = 0.0;
};

struct BenchVariant {
  std::string name;
  OptimizerChoice optimizer;
  std::optional<int> batch_size;          // per-variant override
  std::optional<EstimatorKind> estimator;
};

struct BenchConfig {
  ModelSpec model;
  DataSettings data;
  ApproxInit approx;
  EstimatorKind estimator = EstimatorKind::kReparam;
  EstimatorConfig estimator_config;
  AdamConfig adam;  // shared across variants
  RunSettings run;
  ThresholdSpec threshold;
  std::vector<BenchVariant> variants;
};

struct WeightDecayConfig {
  int dimension = 100;
  std::vector<int> factor_sizes = {1, 5, 10, 25, 50, 100};
  int replicates = 100;
  int reuse_steps = 6;
  int num_samples = 1;
  double learning_rate = 0.3;
  double target_mean = 0.0;
  double target_scale = 1.0;
  // the weight study starts at the target so the drift is optimizer noise
  double init_location = 0.0;
  double init_unconstrained_scale = 0.0;
  std::uint64_t seed = 0;
  std::string out = "runs/weight-decay";
};

namespace cfg_detail {

inline ModelKind parse_model_kind(const std::string& s, const std::string& path) {
  if (s == "diag-gaussian-conjugate") return ModelKind::kDiagGaussianConjugate;
  if (s == "bayes-linear-regression") return ModelKind::kBayesLinearRegression;
  if (s == "poisson-gamma") return ModelKind::kPoissonGamma;
  if (s == "gmm") return ModelKind::kGmm;
  if (s == "conjugate-normal-known-variance") return ModelKind::kConjugateNormalKnownVariance;
  throw ConfigError(path + ".kind: unknown model kind '" + s + "'");
}

inline std::pair<ModelSpec, DataSettings> parse_model(const json& j, const std::string& path) {
  require_object(j, path);
  check_keys(j, path, {"kind", "n", "d", "mixture_components", "hyper"});
  ModelSpec spec;
  DataSettings data;
  spec.kind = parse_model_kind(get_string(j, path, "kind", ""), path);
  data.n = get_int(j, path, "n", data.n);
  data.d = get_int(j, path, "d", data.d);
  spec.data_dim = data.d;
  if (spec.kind == ModelKind::kPoissonGamma) spec.data_dim = 1;
  const json* mc = find(j, "mixture_components");
  if (mc && spec.kind != ModelKind::kGmm)
    throw ConfigError(path + ".mixture_components is only valid for the gmm model");
  spec.mixture_components = get_int(j, path, "mixture_components", 0);
  if (const json* h = find(j, "hyper")) {
    require_object(*h, path + ".hyper");
    check_keys(*h, path + ".hyper",
               {"prior_mean", "prior_scale", "noise_scale", "gamma_shape", "gamma_rate",
                "dirichlet_alpha"});
    spec.hyper.prior_mean = get_number(*h, path + ".hyper", "prior_mean", spec.hyper.prior_mean);
    spec.hyper.prior_scale = get_number(*h, path + ".hyper", "prior_scale", spec.hyper.prior_scale);
    spec.hyper.noise_scale = get_number(*h, path + ".hyper", "noise_scale", spec.hyper.noise_scale);
    spec.hyper.gamma_shape = get_number(*h, path + ".hyper", "gamma_shape", spec.hyper.gamma_shape);
    spec.hyper.gamma_rate = get_number(*h, path + ".hyper", "gamma_rate", spec.hyper.gamma_rate);
    spec.hyper.dirichlet_alpha =
        get_number(*h, path + ".hyper", "dirichlet_alpha", spec.hyper.dirichlet_alpha);
  }
  if (data.n < 1) throw ConfigError(path + ".n must be >= 1");
  if (data.d < 1) throw ConfigError(path + ".d must be >= 1");
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return {spec, data};
}

inline ApproxInit parse_approx(const json* j, const std::string& path) {
  ApproxInit a;
  if (!j) return a;
  require_object(*j, path);
  check_keys(*j, path, {"factor_size", "init_location", "init_unconstrained_scale"});
  a.factor_size = get_int(*j, path, "factor_size", a.factor_size);
  a.init_location = get_number(*j, path, "init_location", a.init_location);
  a.init_unconstrained_scale =
      get_number(*j, path, "init_unconstrained_scale", a.init_unconstrained_scale);
  if (a.factor_size < 1) throw ConfigError(path + ".factor_size must be >= 1");
  return a;
}

inline std::pair<EstimatorKind, EstimatorConfig> parse_estimator(const json* j,
                                                                 const std::string& path) {
  EstimatorKind kind = EstimatorKind::kReparam;
  EstimatorConfig cfg;
  if (!j) return {kind, cfg};
  require_object(*j, path);
  check_keys(*j, path, {"kind", "num_samples", "weight_floor", "weight_ceiling"});
  const std::string s = get_string(*j, path, "kind", "reparam");
  if (s == "reparam") kind = EstimatorKind::kReparam;
  else if (s == "score") kind = EstimatorKind::kScore;
  else throw ConfigError(path + ".kind: unknown estimator '" + s + "'");
  cfg.num_samples = get_int(*j, path, "num_samples", cfg.num_samples);
  cfg.weight_floor = get_number(*j, path, "weight_floor", cfg.weight_floor);
  cfg.weight_ceiling = get_number(*j, path, "weight_ceiling", cfg.weight_ceiling);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return {kind, cfg};
}

inline AdamConfig parse_adam(const json* j, const std::string& path) {
  AdamConfig cfg;
  if (!j) return cfg;
  require_object(*j, path);
  check_keys(*j, path, {"learning_rate", "beta1", "beta2", "epsilon_stabilizer"});
  cfg.learning_rate = get_number(*j, path, "learning_rate", cfg.learning_rate);
  cfg.beta1 = get_number(*j, path, "beta1", cfg.beta1);
  cfg.beta2 = get_number(*j, path, "beta2", cfg.beta2);
  cfg.epsilon_stabilizer = get_number(*j, path, "epsilon_stabilizer", cfg.epsilon_stabilizer);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return cfg;
}

// the optimizer block only admits keys for its own kind
inline OptimizerChoice parse_optimizer(const json& j, const std::string& path) {
  require_object(j, path);
  OptimizerChoice opt;
  const std::string s = get_string(j, path, "kind", "");
  if (s == "sgd") {
    opt.kind = OptimizerKind::kSgd;
    check_keys(j, path, {"kind"});
  } else if (s == "isgd") {
    opt.kind = OptimizerKind::kIsgd;
    check_keys(j, path, {"kind", "reuse_probability", "max_reuse_steps"});
    opt.isgd.reuse_probability =
        get_number(j, path, "reuse_probability", opt.isgd.reuse_probability);
    opt.isgd.max_reuse_steps = get_int(j, path, "max_reuse_steps", opt.isgd.max_reuse_steps);
    if (!(opt.isgd.reuse_probability >= 0.0 && opt.isgd.reuse_probability < 1.0))
      throw ConfigError(path + ".reuse_probability must lie in [0, 1)");
    if (opt.isgd.max_reuse_steps < 1) throw ConfigError(path + ".max_reuse_steps must be >= 1");
  } else if (s == "sag") {
    opt.kind = OptimizerKind::kSag;
    check_keys(j, path, {"kind", "average_over_batches"});
    opt.isag.average_over_batches =
        get_bool(j, path, "average_over_batches", opt.isag.average_over_batches);
  } else if (s == "isag") {
    opt.kind = OptimizerKind::kIsag;
    check_keys(j, path, {"kind", "latest_k", "average_over_batches"});
    opt.isag.latest_k = get_int(j, path, "latest_k", opt.isag.latest_k);
    opt.isag.average_over_batches =
        get_bool(j, path, "average_over_batches", opt.isag.average_over_batches);
    if (opt.isag.latest_k < 0) throw ConfigError(path + ".latest_k must be >= 0");
  } else if (s == "sra") {
    opt.kind = OptimizerKind::kSra;
    check_keys(j, path, {"kind", "decay"});
    opt.sra.decay = get_number(j, path, "decay", opt.sra.decay);
    if (!(opt.sra.decay > 0.0 && opt.sra.decay < 1.0))
      throw ConfigError(path + ".decay must lie in (0, 1)");
  } else {
    throw ConfigError(path + ".kind: unknown optimizer '" + s + "'");
  }
  return opt;
}

inline RunSettings parse_run(const json& j, const std::string& path, bool require_seed = true) {
  require_object(j, path);
  check_keys(j, path,
             {"batch_size", "epochs", "seed", "plateau", "plateau_rel_tol", "plateau_epochs",
              "smoothing_window", "out"});
  RunSettings run;
  run.batch_size = get_int(j, path, "batch_size", run.batch_size);
  run.epochs = get_int(j, path, "epochs", run.epochs);
  if (require_seed) run.seed = get_u64(j, path, "seed");
  else run.seed = static_cast<std::uint64_t>(get_int(j, path, "seed", 0));
  run.plateau = get_bool(j, path, "plateau", run.plateau);
  run.plateau_rel_tol = get_number(j, path, "plateau_rel_tol", run.plateau_rel_tol);
  run.plateau_epochs = get_int(j, path, "plateau_epochs", run.plateau_epochs);
  run.smoothing_window = get_int(j, path, "smoothing_window", run.smoothing_window);
  run.out = get_string(j, path, "out", run.out);
  if (run.batch_size < 1) throw ConfigError(path + ".batch_size must be >= 1");
  if (run.epochs < 0) throw ConfigError(path + ".epochs must be >= 0");
  if (run.smoothing_window < 1) throw ConfigError(path + ".smoothing_window must be >= 1");
  return run;
}

}  // namespace cfg_detail

inline FitConfig parse_fit_config(const nlohmann::json& root) {
  using namespace cfg_detail;
  require_object(root, "");
  check_keys(root, "", {"model", "approximation", "estimator", "optimizer", "run"});
  const json* model = find(root, "model");
  if (!model) throw ConfigError("model is required");
  const json* optimizer = find(root, "optimizer");
  if (!optimizer) throw ConfigError("optimizer is required");
  const json* run = find(root, "run");
  if (!run) throw ConfigError("run is required");

  FitConfig cfg;
  std::tie(cfg.model, cfg.data) = parse_model(*model, "model");
  cfg.approx = parse_approx(find(root, "approximation"), "approximation");
  std::tie(cfg.estimator, cfg.estimator_config) = parse_estimator(find(root, "estimator"), "estimator");
  require_object(*optimizer, "optimizer");
  cfg.adam = parse_adam(find(*optimizer, "adam"), "optimizer.adam");
  {
    json opt_body = *optimizer;
    opt_body.erase("adam");
    cfg.optimizer = parse_optimizer(opt_body, "optimizer");
  }
  cfg.run = parse_run(*run, "run");
  return cfg;
}

inline WeightDecayConfig parse_weight_decay_config(const nlohmann::json& root) {
  using namespace cfg_detail;
  require_object(root, "");
  check_keys(root, "",
             {"dimension", "factor_sizes", "replicates", "reuse_steps", "num_samples",
              "learning_rate", "target_mean", "target_scale", "init_location",
              "init_unconstrained_scale", "seed", "out"});
  WeightDecayConfig cfg;
  cfg.dimension = get_int(root, "", "dimension", cfg.dimension);
  if (const json* fs = find(root, "factor_sizes")) {
    if (!fs->is_array() || fs->empty()) throw ConfigError("factor_sizes must be a non-empty array");
    cfg.factor_sizes.clear();
    for (const auto& v : *fs) {
      if (!v.is_number_integer()) throw ConfigError("factor_sizes entries must be integers");
      cfg.factor_sizes.push_back(v.get<int>());
    }
  }
  cfg.replicates = get_int(root, "", "replicates", cfg.replicates);
  cfg.reuse_steps = get_int(root, "", "reuse_steps", cfg.reuse_steps);
  cfg.num_samples = get_int(root, "", "num_samples", cfg.num_samples);
  cfg.learning_rate = get_number(root, "", "learning_rate", cfg.learning_rate);
  cfg.target_mean = get_number(root, "", "target_mean", cfg.target_mean);
  cfg.target_scale = get_number(root, "", "target_scale", cfg.target_scale);
  cfg.init_location = get_number(root, "", "init_location", cfg.init_location);
  cfg.init_unconstrained_scale =
      get_number(root, "", "init_unconstrained_scale", cfg.init_unconstrained_scale);
  cfg.seed = get_u64(root, "", "seed");
  cfg.out = get_string(root, "", "out", cfg.out);
  if (cfg.dimension < 1) throw ConfigError("dimension must be >= 1");
  for (int f : cfg.factor_sizes)
    if (f < 1 || f > cfg.dimension)
      throw ConfigError("factor_sizes entries must lie in [1, dimension]");
  if (cfg.replicates < 1) throw ConfigError("replicates must be >= 1");
  if (cfg.reuse_steps < 1) throw ConfigError("reuse_steps must be >= 1");
  if (cfg.target_scale <= 0) throw ConfigError("target_scale must be positive");
  return cfg;
}

inline BenchConfig parse_bench_config(const nlohmann::json& root) {
  using namespace cfg_detail;
  require_object(root, "");
  check_keys(root, "",
             {"model", "approximation", "estimator", "adam", "run", "threshold", "variants"});
  const json* model = find(root, "model");
  if (!model) throw ConfigError("model is required");
  const json* run = find(root, "run");
  if (!run) throw ConfigError("run is required");
  const json* variants = find(root, "variants");
  if (!variants) throw ConfigError("variants is required");
  if (!variants->is_array()) throw ConfigError("variants must be an array");
  if (variants->size() < 2) throw ConfigError("variants: a comparison requires >= 2 entries");

  BenchConfig cfg;
  std::tie(cfg.model, cfg.data) = parse_model(*model, "model");
  cfg.approx = parse_approx(find(root, "approximation"), "approximation");
  std::tie(cfg.estimator, cfg.estimator_config) = parse_estimator(find(root, "estimator"), "estimator");
  cfg.adam = parse_adam(find(root, "adam"), "adam");
  cfg.run = parse_run(*run, "run");
  if (const json* th = find(root, "threshold")) {
    require_object(*th, "threshold");
    check_keys(*th, "threshold", {"mode", "nats", "value"});
    const std::string mode = get_string(*th, "threshold", "mode", "sgd-minus-nats");
    if (mode == "sgd-minus-nats") cfg.threshold.mode = ThresholdSpec::Mode::kSgdMinusNats;
    else if (mode == "fixed") cfg.threshold.mode = ThresholdSpec::Mode::kFixed;
    else throw ConfigError("threshold.mode must be 'sgd-minus-nats' or 'fixed'");
    cfg.threshold.nats = get_number(*th, "threshold", "nats", cfg.threshold.nats);
    cfg.threshold.value = get_number(*th, "threshold", "value", cfg.threshold.value);
  }
  int index = 0;
  for (const auto& v : *variants) {
    const std::string path = "variants[" + std::to_string(index++) + "]";
    require_object(v, path);
    check_keys(v, path, {"name", "optimizer", "batch_size", "estimator"});
    BenchVariant variant;
    variant.name = get_string(v, path, "name", "");
    if (variant.name.empty()) throw ConfigError(path + ".name is required");
    const json* opt = find(v, "optimizer");
    if (!opt) throw ConfigError(path + ".optimizer is required");
    variant.optimizer = parse_optimizer(*opt, path + ".optimizer");
    if (const json* bs = find(v, "batch_size")) {
      if (!bs->is_number_integer() || bs->get<int>() < 1)
        throw ConfigError(path + ".batch_size must be a positive integer");
      variant.batch_size = bs->get<int>();
    }
    if (find(v, "estimator")) {
      const std::string e = get_string(v, path, "estimator", "reparam");
      if (e == "reparam") variant.estimator = EstimatorKind::kReparam;
      else if (e == "score") variant.estimator = EstimatorKind::kScore;
      else throw ConfigError(path + ".estimator: unknown estimator '" + e + "'");
    }
    cfg.variants.push_back(std::move(variant));
  }
  return cfg;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return j;
}

}  // namespace isvi
