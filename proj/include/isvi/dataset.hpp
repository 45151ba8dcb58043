#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace isvi {

// N records of D real features; regression targets / Poisson counts ride in
// `targets` (empty when the model has none). `ground_truth` holds the latent
// vector the data was generated from, constrained space, when synthetic.
struct Dataset {
  Eigen::MatrixXd features;  // N x D
  Eigen::VectorXd targets;   // N or empty
  Eigen::VectorXd ground_truth;

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index d() const { return features.cols(); }
  bool has_targets() const { return targets.size() > 0; }

  void validate() const {
    if (n() < 1) throw std::invalid_argument("dataset: needs at least one record");
    if (!features.allFinite()) throw std::invalid_argument("dataset: non-finite feature");
    if (has_targets() && targets.size() != n())
      throw std::invalid_argument("dataset: target column length mismatch");
    if (has_targets() && !targets.allFinite())
      throw std::invalid_argument("dataset: non-finite target");
  }
};

// Subset of rows plus an ordinal used as the cache key. An empty index list is
// the prior-only batch: the likelihood term is skipped entirely.
struct MiniBatch {
  std::vector<int> row_indices;
  int batch_id = 0;

  static MiniBatch prior_only() { return MiniBatch{{}, -1}; }
  bool empty() const { return row_indices.empty(); }
  std::size_t size() const { return row_indices.size(); }
};

// Disjoint contiguous batches covering all rows; the tail batch may be ragged.
inline std::vector<MiniBatch> make_batches(Eigen::Index n, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  std::vector<MiniBatch> batches;
  int id = 0;
  for (Eigen::Index start = 0; start < n; start += batch_size) {
    MiniBatch b;
    b.batch_id = id++;
    for (Eigen::Index i = start; i < std::min(n, start + batch_size); ++i)
      b.row_indices.push_back(static_cast<int>(i));
    batches.push_back(std::move(b));
  }
  return batches;
}

inline MiniBatch full_batch(Eigen::Index n) {
  MiniBatch b;
  b.batch_id = 0;
  for (Eigen::Index i = 0; i < n; ++i) b.row_indices.push_back(static_cast<int>(i));
  return b;
}

inline void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_dataset_csv: cannot open " + path);
  out << std::setprecision(17);
  for (Eigen::Index j = 0; j < data.d(); ++j) {
    if (j) out << ',';
    out << 'f' << j;
  }
  if (data.has_targets()) {
    if (data.d()) out << ',';
    out << "target";
  }
  out << '\n';
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    for (Eigen::Index j = 0; j < data.d(); ++j) {
      if (j) out << ',';
      out << data.features(i, j);
    }
    if (data.has_targets()) {
      if (data.d()) out << ',';
      out << data.targets[i];
    }
    out << '\n';
  }
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_dataset_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_dataset_csv: empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const bool has_target = !header.empty() && header.back() == "target";
  const Eigen::Index d = static_cast<Eigen::Index>(header.size()) - (has_target ? 1 : 0);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<Eigen::Index>(row.size()) != d + (has_target ? 1 : 0))
      throw std::runtime_error("read_dataset_csv: ragged row");
    rows.push_back(std::move(row));
  }
  Dataset data;
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  data.features.resize(n, d);
  if (has_target) data.targets.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) data.features(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    if (has_target) data.targets[i] = rows[static_cast<std::size_t>(i)].back();
  }
  data.validate();
  return data;
}

}  // namespace isvi
