// SPDX-License-Identifier: Apache-2.0
//
// Synthetic paired volume/report corpus with planted abnormality signatures.
//
// Each abnormality owns one octant of the volume. The coronary calcification
// slot also carries an optional CAC grade 1..5: grades at or above
// kCacReportThreshold are reported as calcification, lower grades leave a
// faint sub-threshold motif that the report does not mention.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cardioclip/rng.hpp"
#include "cardioclip/volume.hpp"

namespace cardioclip {

inline constexpr int kCacGrades = 5;
inline constexpr int kCacReportThreshold = 3;
/// Grade whose motif ungraded calcification cases receive.
inline constexpr int kDefaultCacGrade = 4;

struct SynthSpec {
  std::size_t n_cases = 640;
  Dims3 dims{64, 64, 64};
  std::vector<double> prevalence = std::vector<double>(7, 0.3);
  double signal_strength = 0.4;
  double cac_fraction = 0.5;
  std::uint64_t seed = 0;

  std::vector<std::string> validate() const;
};

struct SynthCase {
  std::string case_id;
  Volume3D volume;
  std::vector<bool> flags;
  std::string free_text;
  std::optional<int> grade;
};

/// Octant origin and extent of abnormality d's region.
CropSpec signature_region(const Dims3& dims, std::size_t d);

/// Smooth background noise around 0.3, clamped to [0, 1].
Volume3D make_background(const Dims3& dims, Rng& rng);

/// Adds abnormality d's motif inside its octant and re-clamps to [0, 1].
/// `grade` scales the calcification motif and is ignored for other slots.
Volume3D plant_signature(const Volume3D& v, std::size_t d, double strength, Rng& rng,
                         int grade = kDefaultCacGrade);

/// Assigns grades to a fraction of cases given their drawn flags, keeping
/// grades uniform over 1..5 and the calcification flag equal to
/// grade >= kCacReportThreshold on graded cases.
void generate_cac_grades(std::vector<SynthCase>& cases, const SynthSpec& spec, Rng& rng);

/// Free-text report consistent with `flags`.
std::string synth_report_text(const std::vector<bool>& flags, Rng& rng);

std::vector<SynthCase> generate_corpus(const SynthSpec& spec);

/// Writes volumes/<case_id>.ccv1 (HU-scaled), reports.jsonl and grades.jsonl.
void write_corpus(const std::vector<SynthCase>& cases, const std::filesystem::path& dir, float hu_lo = -300.0f,
                  float hu_hi = 700.0f);

}  // namespace cardioclip
