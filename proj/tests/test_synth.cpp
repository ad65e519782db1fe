// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cardioclip/reports.hpp"
#include "cardioclip/synth.hpp"

using namespace cardioclip;
namespace fs = std::filesystem;

namespace {

double region_mean(const Volume3D& v, std::size_t d) {
  const CropSpec c = signature_region(v.dims, d);
  const Volume3D r = crop_region(v, c);
  double s = 0;
  for (float x : r.voxels) s += x;
  return s / double(r.voxels.size());
}

SynthSpec small_spec(std::size_t n, double prevalence) {
  SynthSpec s;
  s.n_cases = n;
  s.dims = {32, 32, 32};
  s.prevalence.assign(7, prevalence);
  s.seed = 5;
  return s;
}

}  // namespace

TEST_CASE("boundary prevalences") {
  auto spec = small_spec(20, 0.0);
  spec.cac_fraction = 0.0;
  for (const auto& c : generate_corpus(spec)) {
    CHECK(c.flags == std::vector<bool>(7, false));
    CHECK(extract_flags(c.free_text) == std::vector<bool>(7, false));
    CHECK_FALSE(c.grade.has_value());
  }
  spec = small_spec(20, 1.0);
  for (const auto& c : generate_corpus(spec)) {
    CHECK(c.flags == std::vector<bool>(7, true));
    CHECK(extract_flags(c.free_text) == c.flags);
  }
}

TEST_CASE("observed prevalence matches the binomial expectation") {
  const auto cases = generate_corpus(small_spec(1000, 0.3));
  for (std::size_t d = 0; d < 7; ++d) {
    double pos = 0;
    for (const auto& c : cases) pos += c.flags[d];
    CHECK(std::abs(pos / 1000.0 - 0.3) <= 0.04);
  }
}

TEST_CASE("generation is deterministic and reports match flags") {
  const auto a = generate_corpus(small_spec(24, 0.3));
  const auto b = generate_corpus(small_spec(24, 0.3));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].case_id == b[i].case_id);
    CHECK(a[i].volume == b[i].volume);
    CHECK(a[i].free_text == b[i].free_text);
    CHECK(a[i].grade == b[i].grade);
    CHECK(extract_flags(a[i].free_text) == a[i].flags);
    a[i].volume.validate();
  }
}

TEST_CASE("signature planting") {
  Rng bg(1);
  const Volume3D base = make_background({32, 32, 32}, bg);
  for (std::size_t d = 0; d < 7; ++d) {
    Rng r0(2);
    CHECK(plant_signature(base, d, 0.0, r0) == base);
    Rng r1(3), r2(3);
    const Volume3D a = plant_signature(base, d, 0.4, r1);
    CHECK(a == plant_signature(base, d, 0.4, r2));
    CHECK(region_mean(a, d) > region_mean(base, d));
    double prev = region_mean(base, d);
    for (double s : {0.1, 0.2, 0.4, 0.8}) {
      Rng r(4);
      const double m = region_mean(plant_signature(base, d, s, r), d);
      CHECK(m > prev);
      prev = m;
    }
  }
}

TEST_CASE("calcification motif grows with grade") {
  Rng bg(5);
  const Volume3D base = make_background({32, 32, 32}, bg);
  double prev = region_mean(base, kCoronaryCalcification);
  for (int g = 1; g <= kCacGrades; ++g) {
    Rng r(6);
    const double m = region_mean(plant_signature(base, kCoronaryCalcification, 0.4, r, g), kCoronaryCalcification);
    CHECK(m > prev);
    prev = m;
  }
}

TEST_CASE("grades: uniform histogram, flag consistency, untouched prevalence") {
  SynthSpec spec = small_spec(20000, 0.3);
  spec.cac_fraction = 0.5;
  Rng rng(7);
  std::vector<SynthCase> cases(spec.n_cases);
  std::size_t flagged = 0;
  for (auto& c : cases) {
    c.flags.assign(7, false);
    c.flags[kCoronaryCalcification] = rng.bernoulli(0.3);
    flagged += c.flags[kCoronaryCalcification];
  }
  generate_cac_grades(cases, spec, rng);
  std::vector<double> hist(kCacGrades + 1, 0.0);
  double graded = 0;
  std::size_t flagged_after = 0;
  for (const auto& c : cases) {
    flagged_after += c.flags[kCoronaryCalcification];
    if (!c.grade) continue;
    ++graded;
    hist[std::size_t(*c.grade)]++;
    CHECK(c.flags[kCoronaryCalcification] == (*c.grade >= kCacReportThreshold));
  }
  CHECK(flagged_after == flagged);
  CHECK(std::abs(graded / double(spec.n_cases) - 0.5) <= 0.02);
  for (int g = 1; g <= kCacGrades; ++g) CHECK(std::abs(hist[std::size_t(g)] / graded - 0.2) <= 0.02);
}

TEST_CASE("ungraded negative cases carry no calcification motif") {
  SynthSpec spec = small_spec(30, 0.0);
  spec.cac_fraction = 0.0;
  for (const auto& c : generate_corpus(spec)) {
    const double cc = region_mean(c.volume, kCoronaryCalcification);
    CHECK(std::abs(cc - 0.3) < 0.1);
    CHECK(*std::max_element(c.volume.voxels.begin(), c.volume.voxels.end()) < 0.6f);
  }
}

TEST_CASE("synth settings validation") {
  SynthSpec s;
  CHECK(s.validate().empty());
  s.prevalence = {0.3, 0.3};
  CHECK_FALSE(s.validate().empty());
  s = SynthSpec{};
  s.dims = {30, 32, 32};
  CHECK_FALSE(s.validate().empty());
  CHECK_THROWS(generate_corpus(s));
  s = SynthSpec{};
  s.cac_fraction = 1.5;
  CHECK_FALSE(s.validate().empty());
}

TEST_CASE("corpus files round trip through the intensity window") {
  const auto dir = fs::temp_directory_path() / "cardioclip_synth_test";
  fs::remove_all(dir);
  const auto cases = generate_corpus(small_spec(6, 0.5));
  write_corpus(cases, dir, -300.0f, 700.0f);
  const auto recs = read_report_corpus(dir / "reports.jsonl");
  REQUIRE(recs.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(recs[i].case_id == cases[i].case_id);
    CHECK(recs[i].flags == cases[i].flags);
    CHECK(recs[i].free_text == cases[i].free_text);
    const Volume3D back = normalize_intensity(load_volume(dir / "volumes" / (cases[i].case_id + ".ccv1")), -300, 700);
    for (std::size_t k = 0; k < back.voxels.size(); k += 97) CHECK(back.voxels[k] == doctest::Approx(cases[i].volume.voxels[k]).epsilon(1e-5));
  }
  std::ifstream grades(dir / "grades.jsonl");
  std::size_t n_grades = 0;
  for (std::string line; std::getline(grades, line);) ++n_grades;
  std::size_t expected = 0;
  for (const auto& c : cases) expected += c.grade.has_value();
  CHECK(n_grades == expected);
}
