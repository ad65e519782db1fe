// SPDX-License-Identifier: Apache-2.0
//
// Pathology vectors, batch affinities and soft contrastive targets.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "cardioclip/matrix.hpp"
#include "cardioclip/reports.hpp"

namespace cardioclip {

struct PathologyVector {
  std::vector<int> values;  // each +1 or -1
  std::string case_id;

  bool valid(std::size_t expected_len) const;
};

PathologyVector pathology_vector(const StructuredReport& s);
PathologyVector pathology_vector(const std::vector<bool>& flags, std::string case_id = {});

struct AffinityMatrix {
  Matrix<double> entries;  // B x B cosine similarities
  std::vector<std::string> case_ids;
};

AffinityMatrix affinity_matrix(std::span<const PathologyVector> vs);

enum class TargetMode {
  Remapped,  // (A + 1) / 2, rows normalized to sum 1
  Raw,       // affinities used as is (ablation)
};

/// Soft targets for the contrastive loss; B x B.
Matrix<double> targets_from_affinity(const AffinityMatrix& a, TargetMode mode = TargetMode::Remapped);

}  // namespace cardioclip
