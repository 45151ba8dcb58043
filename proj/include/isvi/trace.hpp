#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace isvi {

enum class StepKind { kFresh, kReuse };

inline std::string to_string(StepKind kind) {
  return kind == StepKind::kFresh ? "fresh" : "reuse";
}

// One optimizer step of telemetry. Counters are cumulative; wall_ms is the
// only field allowed to differ between reruns of the same (config, seed).
struct TraceRecord {
  long step = 0;
  StepKind step_kind = StepKind::kFresh;
  std::uint64_t model_grad_evals = 0;
  std::uint64_t logp_evals = 0;
  double wall_ms = 0.0;
  double elbo = 0.0;
  double mean_weight = 1.0;
};

inline constexpr const char* kTraceCsvHeader =
    "step,step_kind,model_grad_evals,logp_evals,wall_ms,elbo,mean_weight";

inline void write_trace_csv(const std::vector<TraceRecord>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trace_csv: cannot open " + path);
  out << kTraceCsvHeader << '\n' << std::setprecision(17);
  for (const auto& r : trace)
    out << r.step << ',' << to_string(r.step_kind) << ',' << r.model_grad_evals << ','
        << r.logp_evals << ',' << r.wall_ms << ',' << r.elbo << ',' << r.mean_weight << '\n';
}

inline std::vector<TraceRecord> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_trace_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kTraceCsvHeader)
    throw std::runtime_error("read_trace_csv: unexpected header in " + path);
  std::vector<TraceRecord> trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    TraceRecord r;
    std::getline(ss, cell, ',');
    r.step = std::stol(cell);
    std::getline(ss, cell, ',');
    if (cell != "fresh" && cell != "reuse")
      throw std::runtime_error("read_trace_csv: bad step_kind " + cell);
    r.step_kind = cell == "fresh" ? StepKind::kFresh : StepKind::kReuse;
    std::getline(ss, cell, ',');
    r.model_grad_evals = std::stoull(cell);
    std::getline(ss, cell, ',');
    r.logp_evals = std::stoull(cell);
    std::getline(ss, cell, ',');
    r.wall_ms = std::stod(cell);
    std::getline(ss, cell, ',');
    r.elbo = std::stod(cell);
    std::getline(ss, cell, ',');
    r.mean_weight = std::stod(cell);
    trace.push_back(r);
  }
  return trace;
}

// trailing mean of the ELBO column over at most `window` steps ending at
// index `upto` (inclusive)
inline double smoothed_elbo(const std::vector<TraceRecord>& trace, std::size_t upto,
                            std::size_t window) {
  if (trace.empty()) throw std::invalid_argument("smoothed_elbo: empty trace");
  upto = std::min(upto, trace.size() - 1);
  const std::size_t begin = (upto + 1 > window) ? upto + 1 - window : 0;
  double acc = 0.0;
  for (std::size_t i = begin; i <= upto; ++i) acc += trace[i].elbo;
  return acc / static_cast<double>(upto - begin + 1);
}

}  // namespace isvi
