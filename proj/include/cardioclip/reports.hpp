// SPDX-License-Identifier: Apache-2.0
//
// Rule-based structuring of free-text reports into fixed statements, and
// prompt generation for zero-shot use.
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cardioclip {

/// Index order of the default catalog.
enum Abnormality : std::size_t {
  kCoronaryStenosis = 0,
  kCoronaryCalcification,
  kAorticCalcification,
  kAtherosclerosis,
  kCardiomegaly,
  kPericardialEffusion,
  kPulmonaryHypertension,
  kNumAbnormalities
};

struct AbnormalityCatalog {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> synonyms;  // parallel to names
  std::vector<std::string> negation_cues;

  std::size_t size() const { return names.size(); }
  std::vector<std::string> validate() const;
  /// Index of a catalog name or synonym, case-insensitive.
  std::optional<std::size_t> find(std::string_view phrase) const;

  static AbnormalityCatalog from_json(std::string_view json_text);
  static AbnormalityCatalog load(const std::filesystem::path& path);
  std::string to_json() const;
};

/// The catalog bundled with the library (data/catalog.json).
const AbnormalityCatalog& default_catalog();

struct FreeTextReport {
  std::string case_id;
  std::string text;
};

struct StructuredReport {
  std::string case_id;
  std::vector<std::string> statements;
  std::vector<bool> flags;
};

/// "There is {name}." or "There is no {name}."
std::string statement_for(const std::string& name, bool present);

StructuredReport structure_report(const FreeTextReport& r, const AbnormalityCatalog& cat = default_catalog());
/// Flags from negation-aware synonym matching, without building statements.
std::vector<bool> extract_flags(std::string_view text, const AbnormalityCatalog& cat = default_catalog());

StructuredReport structured_from_flags(std::string case_id, const std::vector<bool>& flags,
                                       const AbnormalityCatalog& cat = default_catalog());

/// ("There is {name}", "There is no {name}"); `name` keeps its spelling.
std::pair<std::string, std::string> make_prompt_pair(std::string_view name,
                                                     const AbnormalityCatalog& cat = default_catalog());

bool validate_structured(const StructuredReport& s, const AbnormalityCatalog& cat = default_catalog());

/// All statements joined by single spaces.
std::string structured_text(const StructuredReport& s);

/// One line of the report corpus.
struct ReportRecord {
  std::string case_id;
  std::string free_text;
  std::vector<std::string> structured;
  std::vector<bool> flags;
};

std::vector<ReportRecord> read_report_corpus(const std::filesystem::path& path);
void write_report_corpus(const std::vector<ReportRecord>& records, const std::filesystem::path& path);

}  // namespace cardioclip
