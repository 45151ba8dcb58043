#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "isvi/experiments.hpp"

using namespace isvi;
using nlohmann::json;

namespace {

json minimal_fit_config() {
  return json{
      {"model", {{"kind", "conjugate-normal-known-variance"}, {"n", 120}, {"d", 2}}},
      {"optimizer", {{"kind", "sgd"}}},
      {"run", {{"batch_size", 30}, {"epochs", 40}, {"seed", 7}, {"out", "tmp_fit"}}},
  };
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string write_config(const TempDir& dir, const json& j, const std::string& name = "cfg.json") {
  const std::string p = dir.file(name);
  std::ofstream out(p);
  out << j.dump(2);
  return p;
}

}  // namespace

TEST_CASE("fit config parses and unknown keys are named") {
  auto j = minimal_fit_config();
  REQUIRE_NOTHROW(parse_fit_config(j));

  j["run"]["batchsize"] = 10;
  REQUIRE_THROWS_WITH(parse_fit_config(j), Catch::Matchers::ContainsSubstring("run.batchsize"));

  auto j2 = minimal_fit_config();
  j2["model"]["kind"] = "linear";
  REQUIRE_THROWS_WITH(parse_fit_config(j2), Catch::Matchers::ContainsSubstring("model.kind"));

  auto j3 = minimal_fit_config();
  j3["optimizer"] = {{"kind", "sgd"}, {"decay", 0.9}};
  REQUIRE_THROWS_WITH(parse_fit_config(j3), Catch::Matchers::ContainsSubstring("optimizer.decay"));
}

TEST_CASE("out-of-range reuse probability names the field") {
  auto j = minimal_fit_config();
  j["optimizer"] = {{"kind", "isgd"}, {"reuse_probability", 1.5}};
  REQUIRE_THROWS_WITH(parse_fit_config(j),
                      Catch::Matchers::ContainsSubstring("reuse_probability"));
}

TEST_CASE("cmd_fit writes trace, data and summary; exit codes follow the contract") {
  TempDir dir("isvi_fit_test");
  auto j = minimal_fit_config();
  j["run"]["out"] = dir.file("run");
  const std::string cfg = write_config(dir, j);
  REQUIRE(cmd_fit(cfg, std::nullopt, std::nullopt) == 0);
  REQUIRE(std::filesystem::exists(dir.file("run") + "/trace.csv"));
  REQUIRE(std::filesystem::exists(dir.file("run") + "/data.csv"));
  REQUIRE(std::filesystem::exists(dir.file("run") + "/summary.json"));

  auto trace = read_trace_csv(dir.file("run") + "/trace.csv");
  REQUIRE(trace.size() == 40 * 4);

  // invalid config exits 1
  auto bad = minimal_fit_config();
  bad["optimizer"] = {{"kind", "isgd"}, {"reuse_probability", 1.5}};
  REQUIRE(cmd_fit(write_config(dir, bad, "bad.json"), std::nullopt, std::nullopt) == 1);
  REQUIRE(cmd_fit(dir.file("missing.json"), std::nullopt, std::nullopt) == 1);
}

TEST_CASE("identical config and seed give identical outputs except wall time") {
  TempDir dir("isvi_fit_repro");
  auto j = minimal_fit_config();
  j["optimizer"] = {{"kind", "isgd"}, {"reuse_probability", 0.8}};
  j["run"]["out"] = dir.file("a");
  const std::string cfg_a = write_config(dir, j, "a.json");
  j["run"]["out"] = dir.file("b");
  const std::string cfg_b = write_config(dir, j, "b.json");
  REQUIRE(cmd_fit(cfg_a, std::nullopt, std::nullopt) == 0);
  REQUIRE(cmd_fit(cfg_b, std::nullopt, std::nullopt) == 0);
  auto ta = read_trace_csv(dir.file("a") + "/trace.csv");
  auto tb = read_trace_csv(dir.file("b") + "/trace.csv");
  REQUIRE(ta.size() == tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    REQUIRE(ta[i].step == tb[i].step);
    REQUIRE(ta[i].step_kind == tb[i].step_kind);
    REQUIRE(ta[i].model_grad_evals == tb[i].model_grad_evals);
    REQUIRE(ta[i].elbo == tb[i].elbo);
    REQUIRE(ta[i].mean_weight == tb[i].mean_weight);
  }
  // byte-identical datasets
  std::ifstream fa(dir.file("a") + "/data.csv"), fb(dir.file("b") + "/data.csv");
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  REQUIRE(sa.str() == sb.str());
}

TEST_CASE("fit summary recovers the analytic posterior mean") {
  TempDir dir("isvi_fit_post");
  auto j = minimal_fit_config();
  j["run"] = {{"batch_size", 30}, {"epochs", 150}, {"seed", 3}, {"out", dir.file("run")}};
  REQUIRE(cmd_fit(write_config(dir, j), std::nullopt, std::nullopt) == 0);

  std::ifstream in(dir.file("run") + "/summary.json");
  json summary;
  in >> summary;
  // rebuild the analytic answer from the persisted dataset
  Dataset data = read_dataset_csv(dir.file("run") + "/data.csv");
  ModelSpec spec;
  spec.kind = ModelKind::kConjugateNormalKnownVariance;
  spec.data_dim = 2;
  auto post = conjugate_normal_posterior(spec, data);
  for (int i = 0; i < 2; ++i)
    REQUIRE(std::abs(summary["posterior_mean"][i].get<double>() - post.mean[i]) < 0.05);
}

TEST_CASE("weight decay config validation and outputs") {
  TempDir dir("isvi_wd_test");
  json j{{"dimension", 20},
         {"factor_sizes", {1, 5, 20}},
         {"replicates", 10},
         {"reuse_steps", 4},
         {"seed", 11},
         {"out", dir.file("wd")}};
  REQUIRE(cmd_weight_decay(write_config(dir, j), std::nullopt, std::nullopt) == 0);
  REQUIRE(std::filesystem::exists(dir.file("wd") + "/factor_001.csv"));
  REQUIRE(std::filesystem::exists(dir.file("wd") + "/factor_020.csv"));
  REQUIRE(std::filesystem::exists(dir.file("wd") + "/summary.csv"));

  json bad = j;
  bad["factor_sizes"] = {1, 40};  // beyond dimension
  REQUIRE(cmd_weight_decay(write_config(dir, bad, "bad.json"), std::nullopt, std::nullopt) == 1);
}

TEST_CASE("frozen parameters keep every weight at one") {
  WeightDecayConfig cfg;
  cfg.dimension = 10;
  cfg.factor_sizes = {1, 10};
  cfg.replicates = 3;
  cfg.reuse_steps = 3;
  cfg.learning_rate = 0.0;
  cfg.seed = 2;
  auto report = run_weight_decay(cfg);
  REQUIRE(report.mean_weight.minCoeff() == 1.0);
  REQUIRE(report.mean_weight.maxCoeff() == 1.0);
}

TEST_CASE("bench rejects fewer than two variants and unknown variant keys") {
  json base{{"model", {{"kind", "conjugate-normal-known-variance"}, {"n", 60}, {"d", 2}}},
            {"run", {{"batch_size", 20}, {"epochs", 10}, {"seed", 5}, {"out", "tmp"}}},
            {"variants", json::array({json{{"name", "sgd"}, {"optimizer", {{"kind", "sgd"}}}}})}};
  REQUIRE_THROWS_WITH(parse_bench_config(base), Catch::Matchers::ContainsSubstring(">= 2"));

  base["variants"].push_back(
      json{{"name", "isgd"}, {"optimizer", {{"kind", "isgd"}}}, {"whoops", 1}});
  REQUIRE_THROWS_WITH(parse_bench_config(base),
                      Catch::Matchers::ContainsSubstring("variants[1].whoops"));
}

TEST_CASE("bench runs a comparison and writes the table") {
  TempDir dir("isvi_bench_test");
  json j{{"model", {{"kind", "conjugate-normal-known-variance"}, {"n", 200}, {"d", 3}}},
         {"run",
          {{"batch_size", 25},
           {"epochs", 60},
           {"seed", 9},
           {"smoothing_window", 50},
           {"out", dir.file("bench")}}},
         {"threshold", {{"mode", "sgd-minus-nats"}, {"nats", 1.0}}},
         {"variants",
          json::array({json{{"name", "sgd"}, {"optimizer", {{"kind", "sgd"}}}},
                       json{{"name", "isgd9"},
                            {"optimizer",
                             {{"kind", "isgd"}, {"reuse_probability", 0.9}}}}})}};
  const int code = cmd_bench(write_config(dir, j), std::nullopt, std::nullopt);
  REQUIRE(code == 0);
  REQUIRE(std::filesystem::exists(dir.file("bench") + "/comparison.csv"));
  REQUIRE(std::filesystem::exists(dir.file("bench") + "/trace_sgd.csv"));
  REQUIRE(std::filesystem::exists(dir.file("bench") + "/trace_isgd9.csv"));

  // the comparison numbers are recomputable from the persisted traces alone
  auto sgd_trace = read_trace_csv(dir.file("bench") + "/trace_sgd.csv");
  double peak = -1e300;
  for (std::size_t i = 0; i < sgd_trace.size(); ++i)
    peak = std::max(peak, smoothed_elbo(sgd_trace, i, 50));
  const double threshold = peak - 1.0;

  std::ifstream table(dir.file("bench") + "/comparison.csv");
  std::string header, line;
  std::getline(table, header);
  bool checked = false;
  while (std::getline(table, line)) {
    if (line.rfind("sgd,", 0) == 0) {
      std::stringstream ss(line);
      std::string cell;
      std::getline(ss, cell, ',');  // name
      std::getline(ss, cell, ',');  // reached
      REQUIRE(cell == "1");
      std::getline(ss, cell, ',');  // steps
      const long step = std::stol(cell);
      long expect = -1;
      for (std::size_t i = 0; i < sgd_trace.size(); ++i)
        if (smoothed_elbo(sgd_trace, i, 50) >= threshold) {
          expect = sgd_trace[i].step;
          break;
        }
      REQUIRE(step == expect);
      checked = true;
    }
  }
  REQUIRE(checked);
}

TEST_CASE("bench exits 3 when a variant misses the threshold") {
  TempDir dir("isvi_bench_miss");
  json j{{"model", {{"kind", "conjugate-normal-known-variance"}, {"n", 100}, {"d", 2}}},
         {"run",
          {{"batch_size", 20}, {"epochs", 30}, {"seed", 4}, {"smoothing_window", 30},
           {"out", dir.file("bench")}}},
         {"threshold", {{"mode", "fixed"}, {"value", 1e9}}},  // unreachable
         {"variants",
          json::array({json{{"name", "sgd"}, {"optimizer", {{"kind", "sgd"}}}},
                       json{{"name", "sra"},
                            {"optimizer", {{"kind", "sra"}, {"decay", 0.9}}}}})}};
  REQUIRE(cmd_bench(write_config(dir, j), std::nullopt, std::nullopt) == 3);
  // table still written, rows marked unreached
  std::ifstream table(dir.file("bench") + "/comparison.csv");
  std::string header, line;
  std::getline(table, header);
  int rows = 0;
  while (std::getline(table, line)) {
    if (line.empty()) continue;
    ++rows;
    REQUIRE(line.find(",0,-1,") != std::string::npos);
  }
  REQUIRE(rows == 2);
}

TEST_CASE("gmm fits end to end through the config pipeline") {
  TempDir dir("isvi_fit_gmm");
  json j{{"model",
          {{"kind", "gmm"},
           {"n", 300},
           {"d", 2},
           {"mixture_components", 3},
           {"hyper", {{"prior_scale", 3.0}, {"noise_scale", 0.5}}}}},
         {"estimator", {{"kind", "reparam"}, {"num_samples", 2}}},
         {"optimizer", {{"kind", "isgd"}, {"reuse_probability", 0.8}}},
         {"run", {{"batch_size", 100}, {"epochs", 30}, {"seed", 21}, {"out", dir.file("run")}}}};
  REQUIRE(cmd_fit(write_config(dir, j), std::nullopt, std::nullopt) == 0);
  std::ifstream in(dir.file("run") + "/summary.json");
  json summary;
  in >> summary;
  // weights live behind the stick-breaking block: a valid simplex prefix
  double total = 0.0;
  for (int i = 6; i < 8; ++i) {
    const double w = summary["posterior_mean"][i].get<double>();
    REQUIRE(w > 0.0);
    total += w;
  }
  REQUIRE(total < 1.0);

  json bad = j;
  bad["model"].erase("mixture_components");
  REQUIRE(cmd_fit(write_config(dir, bad, "bad.json"), std::nullopt, std::nullopt) == 1);
}

TEST_CASE("seed and out overrides take effect") {
  TempDir dir("isvi_override");
  auto j = minimal_fit_config();
  j["run"]["out"] = dir.file("ignored");
  const std::string cfg = write_config(dir, j);
  REQUIRE(cmd_fit(cfg, 123, dir.file("actual")) == 0);
  REQUIRE(std::filesystem::exists(dir.file("actual") + "/summary.json"));
  REQUIRE_FALSE(std::filesystem::exists(dir.file("ignored")));
  std::ifstream in(dir.file("actual") + "/summary.json");
  json summary;
  in >> summary;
  REQUIRE(summary["seed"].get<std::uint64_t>() == 123);
}
