// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/supervision.hpp"

#include <cmath>
#include <stdexcept>

#include "cardioclip/errors.hpp"

namespace cardioclip {

bool PathologyVector::valid(std::size_t expected_len) const {
  if (values.size() != expected_len) return false;
  for (int v : values)
    if (v != 1 && v != -1) return false;
  return true;
}

PathologyVector pathology_vector(const std::vector<bool>& flags, std::string case_id) {
  PathologyVector p;
  p.case_id = std::move(case_id);
  p.values.reserve(flags.size());
  for (bool f : flags) p.values.push_back(f ? 1 : -1);
  return p;
}

PathologyVector pathology_vector(const StructuredReport& s) { return pathology_vector(s.flags, s.case_id); }

AffinityMatrix affinity_matrix(std::span<const PathologyVector> vs) {
  if (vs.empty()) throw std::invalid_argument("affinity_matrix: empty batch");
  const std::size_t d = vs.front().values.size();
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (!vs[i].valid(d))
      throw std::invalid_argument("affinity_matrix: vector " + std::to_string(i) + " is not a +-1 vector of length " +
                                  std::to_string(d));
  }
  const std::size_t b = vs.size();
  AffinityMatrix a;
  a.entries = Matrix<double>(b, b);
  for (const auto& v : vs) a.case_ids.push_back(v.case_id);
  // Every +-1 vector has squared norm d, so the cosine is dot / d.
  for (std::size_t i = 0; i < b; ++i) {
    a.entries(i, i) = 1.0;
    for (std::size_t j = i + 1; j < b; ++j) {
      int dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += vs[i].values[k] * vs[j].values[k];
      const double c = static_cast<double>(dot) / static_cast<double>(d);
      a.entries(i, j) = c;
      a.entries(j, i) = c;
    }
  }
  return a;
}

Matrix<double> targets_from_affinity(const AffinityMatrix& a, TargetMode mode) {
  const std::size_t b = a.entries.rows();
  if (a.entries.cols() != b) throw ShapeError("targets_from_affinity: affinity matrix must be square");
  Matrix<double> t(b, b);
  if (mode == TargetMode::Raw) {
    t = a.entries;
    return t;
  }
  for (std::size_t i = 0; i < b; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      t(i, j) = (a.entries(i, j) + 1.0) / 2.0;
      sum += t(i, j);
    }
    for (std::size_t j = 0; j < b; ++j) t(i, j) /= sum;
  }
  return t;
}

}  // namespace cardioclip
