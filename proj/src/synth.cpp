// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>

#include <json.hpp>

#include "cardioclip/errors.hpp"
#include "cardioclip/reports.hpp"

namespace cardioclip {

namespace {

constexpr std::size_t kGridStep = 16;

// Surface phrases per abnormality. Each contains a catalog synonym.
const std::array<std::vector<std::string>, kNumAbnormalities> kPhrases = {{
    {"coronary stenosis", "coronary artery stenosis", "coronary narrowing", "luminal narrowing of the LAD",
     "stenotic coronary segments"},
    {"coronary calcification", "coronary artery calcium", "calcified plaque", "coronary artery calcification",
     "calcified coronary plaque"},
    {"aortic calcification", "calcification of the aorta", "aortic wall calcification", "calcified aorta"},
    {"atherosclerosis", "atherosclerotic changes", "atheromatous disease"},
    {"cardiomegaly", "enlarged heart", "cardiac enlargement", "enlarged cardiac silhouette"},
    {"pericardial effusion", "pericardial fluid", "fluid in the pericardial space"},
    {"pulmonary arterial hypertension", "pulmonary hypertension", "dilated pulmonary artery",
     "pulmonary artery enlargement"},
}};

const std::vector<std::string> kPositiveTemplates = {
    "{} is present.", "There is {}.", "Findings consistent with {}.", "{} is seen.", "Evidence of {}.",
};

const std::vector<std::string> kNegativeTemplates = {
    "No {}.", "There is no {}.", "{} is absent.", "No evidence of {}.", "Study is free of {}.",
};

const std::vector<std::string> kFillers = {
    "Image quality is diagnostic.",
    "Lung bases are clear.",
    "Osseous structures are unremarkable.",
    "Heart rhythm was regular during acquisition.",
    "Contrast opacification is adequate.",
    "Visualized upper abdomen is unremarkable.",
};

std::string fill(const std::string& tmpl, const std::string& phrase) {
  const auto pos = tmpl.find("{}");
  std::string out = tmpl.substr(0, pos) + phrase + tmpl.substr(pos + 2);
  out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.index(v.size())];
}

double trilerp(const std::vector<double>& g, const Dims3& gd, double z, double y, double x) {
  const auto z0 = std::min(static_cast<std::size_t>(z), gd[0] - 2);
  const auto y0 = std::min(static_cast<std::size_t>(y), gd[1] - 2);
  const auto x0 = std::min(static_cast<std::size_t>(x), gd[2] - 2);
  const double fz = z - static_cast<double>(z0), fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  auto at = [&](std::size_t a, std::size_t b, std::size_t c) { return g[(a * gd[1] + b) * gd[2] + c]; };
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
        acc += w * at(z0 + dz, y0 + dy, x0 + dx);
      }
  return acc;
}

// Motif evaluated in octant-local coordinates scaled to a 32-voxel octant.
using Motif = std::function<double(double z, double y, double x)>;

void add_motif(Volume3D& v, const CropSpec& region, double amplitude, const Motif& m) {
  if (amplitude == 0.0) return;
  const double scale = 32.0 / static_cast<double>(region.extent[0]);
  for (std::size_t z = 0; z < region.extent[0]; ++z)
    for (std::size_t y = 0; y < region.extent[1]; ++y)
      for (std::size_t x = 0; x < region.extent[2]; ++x) {
        const double w = m((static_cast<double>(z) + 0.5) * scale, (static_cast<double>(y) + 0.5) * scale,
                           (static_cast<double>(x) + 0.5) * scale);
        if (w == 0.0) continue;
        float& dst = v.at(region.origin[0] + z, region.origin[1] + y, region.origin[2] + x);
        dst = static_cast<float>(std::clamp(static_cast<double>(dst) + amplitude * w, 0.0, 1.0));
      }
}

struct Point {
  double z, y, x;
};

double dist2(const Point& p, double z, double y, double x) {
  return (z - p.z) * (z - p.z) + (y - p.y) * (y - p.y) + (x - p.x) * (x - p.x);
}

Point jittered_center(Rng& rng) { return {16.0 + rng.uniform(-3, 3), 16.0 + rng.uniform(-3, 3), 16.0 + rng.uniform(-3, 3)}; }

Motif speckles(std::vector<Point> pts, double radius) {
  return [pts = std::move(pts), r2 = radius * radius](double z, double y, double x) {
    for (const auto& p : pts)
      if (dist2(p, z, y, x) <= r2) return 1.0;
    return 0.0;
  };
}

}  // namespace

std::vector<std::string> SynthSpec::validate() const {
  std::vector<std::string> errs;
  if (n_cases < 1) errs.push_back("SynthSpec: n_cases must be >= 1");
  if (prevalence.size() != kNumAbnormalities) errs.push_back("SynthSpec: prevalence needs 7 entries");
  for (double p : prevalence)
    if (!(p >= 0.0 && p <= 1.0)) errs.push_back("SynthSpec: prevalence entries must lie in [0, 1]");
  if (!(cac_fraction >= 0.0 && cac_fraction <= 1.0)) errs.push_back("SynthSpec: cac_fraction must lie in [0, 1]");
  if (!(signal_strength >= 0.0)) errs.push_back("SynthSpec: signal_strength must be >= 0");
  for (std::size_t a = 0; a < 3; ++a) {
    if (dims[a] < 2 * kGridStep || dims[a] % kGridStep != 0) {
      errs.push_back("SynthSpec: dims must be multiples of 16 and at least 32 on every axis");
      break;
    }
  }
  return errs;
}

CropSpec signature_region(const Dims3& dims, std::size_t d) {
  if (d >= kNumAbnormalities) throw std::invalid_argument("signature_region: abnormality index out of range");
  CropSpec c;
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t half = dims[a] / 2;
    const std::size_t bit = (d >> (2 - a)) & 1u;
    c.origin[a] = bit * half;
    c.extent[a] = half;
  }
  return c;
}

Volume3D make_background(const Dims3& dims, Rng& rng) {
  Dims3 gd;
  for (std::size_t a = 0; a < 3; ++a) gd[a] = dims[a] / kGridStep + 1;
  std::vector<double> grid(gd[0] * gd[1] * gd[2]);
  for (double& g : grid) g = 0.3 + 0.06 * rng.normal();
  Volume3D v = Volume3D::zeros(dims);
  const double step = static_cast<double>(kGridStep);
  for (std::size_t z = 0; z < dims[0]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[2]; ++x) {
        const double base = trilerp(grid, gd, static_cast<double>(z) / step, static_cast<double>(y) / step,
                                    static_cast<double>(x) / step);
        v.at(z, y, x) = static_cast<float>(std::clamp(base + 0.02 * rng.normal(), 0.0, 1.0));
      }
  return v;
}

Volume3D plant_signature(const Volume3D& v, std::size_t d, double strength, Rng& rng, int grade) {
  const CropSpec region = signature_region(v.dims, d);
  if (region.extent[0] < kGridStep) throw ShapeError("plant_signature: volume too small for octant regions");
  Volume3D out = v;
  const Point c = jittered_center(rng);
  switch (static_cast<Abnormality>(d)) {
    case kCoronaryStenosis:  // tube along x
      add_motif(out, region, strength, [c](double z, double y, double x) {
        const double r2 = (z - c.z) * (z - c.z) + (y - c.y) * (y - c.y);
        return (r2 <= 2.5 * 2.5 && x >= 4.0 && x <= 28.0) ? 1.0 : 0.0;
      });
      break;
    case kCoronaryCalcification: {
      if (grade < 1 || grade > kCacGrades) throw std::invalid_argument("plant_signature: grade must lie in 1..5");
      std::vector<Point> pts;
      for (int i = 0; i < 2 * grade + 2; ++i) pts.push_back({rng.uniform(5, 27), rng.uniform(5, 27), rng.uniform(5, 27)});
      add_motif(out, region, strength * grade / kDefaultCacGrade, speckles(std::move(pts), 1.6));
      break;
    }
    case kAorticCalcification: {
      std::vector<Point> pts;
      const double phase = rng.uniform(0, 2 * std::numbers::pi);
      for (int i = 0; i < 12; ++i) {
        const double t = phase + 2 * std::numbers::pi * i / 12.0;
        pts.push_back({c.z, c.y + 9.0 * std::sin(t), c.x + 9.0 * std::cos(t)});
      }
      add_motif(out, region, strength, speckles(std::move(pts), 1.8));
      break;
    }
    case kAtherosclerosis:  // elongated ellipsoid
      add_motif(out, region, strength, [c](double z, double y, double x) {
        const double q = (z - c.z) * (z - c.z) / 16.0 + (y - c.y) * (y - c.y) / 16.0 + (x - c.x) * (x - c.x) / 121.0;
        return q <= 1.0 ? 1.0 : 0.0;
      });
      break;
    case kCardiomegaly:  // broad smooth swelling
      add_motif(out, region, strength, [c](double z, double y, double x) {
        return std::exp(-dist2(c, z, y, x) / (2.0 * 8.0 * 8.0));
      });
      break;
    case kPericardialEffusion:  // thin spherical shell
      add_motif(out, region, strength, [c](double z, double y, double x) {
        const double r = std::sqrt(dist2(c, z, y, x));
        return std::abs(r - 10.0) <= 1.5 ? 1.0 : 0.0;
      });
      break;
    case kPulmonaryHypertension:  // large solid sphere
      add_motif(out, region, strength, [c](double z, double y, double x) {
        return dist2(c, z, y, x) <= 7.0 * 7.0 ? 1.0 : 0.0;
      });
      break;
    default:
      break;
  }
  return out;
}

void generate_cac_grades(std::vector<SynthCase>& cases, const SynthSpec& spec, Rng& rng) {
  const double pi_hi = static_cast<double>(kCacGrades - kCacReportThreshold + 1) / kCacGrades;
  const double p_cc = spec.prevalence.at(kCoronaryCalcification);
  // Grading probabilities conditioned on the flag so graded cases stay
  // uniform over grades while the flag prevalence is untouched.
  const double q_pos = p_cc > 0.0 ? std::min(1.0, spec.cac_fraction * pi_hi / p_cc) : 0.0;
  const double q_neg = p_cc < 1.0 ? std::min(1.0, spec.cac_fraction * (1.0 - pi_hi) / (1.0 - p_cc)) : 0.0;
  for (auto& c : cases) {
    const bool flag = c.flags.at(kCoronaryCalcification);
    c.grade.reset();
    if (!rng.bernoulli(flag ? q_pos : q_neg)) continue;
    if (flag) {
      c.grade = kCacReportThreshold + static_cast<int>(rng.index(kCacGrades - kCacReportThreshold + 1));
    } else {
      c.grade = 1 + static_cast<int>(rng.index(kCacReportThreshold - 1));
    }
  }
}

std::string synth_report_text(const std::vector<bool>& flags, Rng& rng) {
  std::vector<std::string> sentences;
  for (std::size_t d = 0; d < flags.size() && d < kNumAbnormalities; ++d) {
    const auto& phrase = pick(kPhrases[d], rng);
    if (flags[d]) {
      sentences.push_back(fill(pick(kPositiveTemplates, rng), phrase));
    } else if (rng.bernoulli(0.5)) {
      sentences.push_back(fill(pick(kNegativeTemplates, rng), phrase));
    }
  }
  sentences.push_back(pick(kFillers, rng));
  rng.shuffle(sentences);
  std::string text;
  for (const auto& s : sentences) {
    if (!text.empty()) text.push_back(' ');
    text += s;
  }
  return text;
}

std::vector<SynthCase> generate_corpus(const SynthSpec& spec) {
  if (auto errs = spec.validate(); !errs.empty()) {
    for (const auto& e : errs)
      if (e.find("dims") != std::string::npos) throw ShapeError(e);
    throw std::invalid_argument(errs.front());
  }
  const std::uint64_t root = substream_seed(spec.seed, "synth");
  std::vector<SynthCase> cases(spec.n_cases);
  Rng label_rng(substream_seed(root, "labels"));
  for (std::size_t i = 0; i < spec.n_cases; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "case_%05zu", i);
    cases[i].case_id = id;
    cases[i].flags.resize(kNumAbnormalities);
    for (std::size_t d = 0; d < kNumAbnormalities; ++d) cases[i].flags[d] = label_rng.bernoulli(spec.prevalence[d]);
  }
  if (spec.cac_fraction > 0.0) {
    Rng grade_rng(substream_seed(root, "cac"));
    generate_cac_grades(cases, spec, grade_rng);
  }

#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < spec.n_cases; ++i) {
    auto& c = cases[i];
    const std::uint64_t case_seed = mix64(root ^ mix64(i + 1));
    Rng bg(substream_seed(case_seed, "background"));
    c.volume = make_background(spec.dims, bg);
    for (std::size_t d = 0; d < kNumAbnormalities; ++d) {
      Rng motif(substream_seed(case_seed, "motif") + d);
      if (d == kCoronaryCalcification && c.grade) {
        c.volume = plant_signature(c.volume, d, spec.signal_strength, motif, *c.grade);
      } else if (c.flags[d]) {
        c.volume = plant_signature(c.volume, d, spec.signal_strength, motif);
      }
    }
    Rng text(substream_seed(case_seed, "text"));
    c.free_text = synth_report_text(c.flags, text);
  }
  return cases;
}

void write_corpus(const std::vector<SynthCase>& cases, const std::filesystem::path& dir, float hu_lo, float hu_hi) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "volumes", ec);
  if (ec) throw IoError("cannot create " + (dir / "volumes").string() + ": " + ec.message());
  std::vector<ReportRecord> records;
  std::ofstream grades(dir / "grades.jsonl", std::ios::binary);
  if (!grades) throw IoError("cannot write " + (dir / "grades.jsonl").string());
  for (const auto& c : cases) {
    Volume3D hu = c.volume;
    for (float& x : hu.voxels) x = hu_lo + x * (hu_hi - hu_lo);
    save_volume(hu, dir / "volumes" / (c.case_id + ".ccv1"));
    const StructuredReport s = structured_from_flags(c.case_id, c.flags);
    records.push_back({c.case_id, c.free_text, s.statements, c.flags});
    if (c.grade) grades << nlohmann::json{{"case_id", c.case_id}, {"grade", *c.grade}}.dump() << '\n';
  }
  write_report_corpus(records, dir / "reports.jsonl");
}

}  // namespace cardioclip
