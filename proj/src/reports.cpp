// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/reports.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "cardioclip/errors.hpp"
#include "catalog_data.hpp"

namespace cardioclip {

using nlohmann::json;

namespace {

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '-' || c == '\'';
}

// Hyphenated forms stay one token, so "non-calcified" never matches "calcified".
std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (is_word_char(c)) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string_view> clauses_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ',' || text[i] == ';' || text[i] == '.' || text[i] == '\n') {
      if (i > start) out.push_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

bool contains_phrase(const std::vector<std::string>& words, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > words.size()) return false;
  return std::search(words.begin(), words.end(), phrase.begin(), phrase.end()) != words.end();
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string collapse_spaces(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(c);
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace

// ---------------------------------------------------------------- catalog

std::vector<std::string> AbnormalityCatalog::validate() const {
  std::vector<std::string> errs;
  if (names.empty()) errs.push_back("AbnormalityCatalog: no names");
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) errs.push_back("AbnormalityCatalog: empty name");
    if (!seen.insert(lower(n)).second) errs.push_back("AbnormalityCatalog: duplicate name '" + n + "'");
  }
  if (synonyms.size() != names.size()) errs.push_back("AbnormalityCatalog: synonyms must parallel names");
  for (std::size_t d = 0; d < synonyms.size(); ++d)
    for (const auto& s : synonyms[d])
      if (words_of(s).empty()) errs.push_back("AbnormalityCatalog: empty synonym for '" + names[d] + "'");
  for (const auto& c : negation_cues)
    if (words_of(c).empty()) errs.push_back("AbnormalityCatalog: empty negation cue");
  return errs;
}

std::optional<std::size_t> AbnormalityCatalog::find(std::string_view phrase) const {
  const auto key = words_of(phrase);
  if (key.empty()) return std::nullopt;
  for (std::size_t d = 0; d < names.size(); ++d) {
    if (words_of(names[d]) == key) return d;
  }
  for (std::size_t d = 0; d < synonyms.size(); ++d) {
    for (const auto& s : synonyms[d])
      if (words_of(s) == key) return d;
  }
  return std::nullopt;
}

AbnormalityCatalog AbnormalityCatalog::from_json(std::string_view json_text) {
  AbnormalityCatalog cat;
  try {
    const json j = json::parse(json_text);
    cat.names = j.at("names").get<std::vector<std::string>>();
    const auto& syn = j.at("synonyms");
    for (const auto& n : cat.names) {
      std::vector<std::string> list;
      if (syn.contains(n)) list = syn.at(n).get<std::vector<std::string>>();
      if (std::find(list.begin(), list.end(), n) == list.end()) list.insert(list.begin(), n);
      cat.synonyms.push_back(std::move(list));
    }
    cat.negation_cues = j.at("negation_cues").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("catalog: ") + e.what());
  }
  if (auto errs = cat.validate(); !errs.empty()) throw FormatError(errs.front());
  return cat;
}

AbnormalityCatalog AbnormalityCatalog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

std::string AbnormalityCatalog::to_json() const {
  json syn = json::object();
  for (std::size_t d = 0; d < names.size(); ++d) syn[names[d]] = synonyms[d];
  return json{{"names", names}, {"synonyms", syn}, {"negation_cues", negation_cues}}.dump(2);
}

const AbnormalityCatalog& default_catalog() {
  static const AbnormalityCatalog cat = AbnormalityCatalog::from_json(detail::kCatalogJson);
  return cat;
}

// ------------------------------------------------------------- structuring

std::string statement_for(const std::string& name, bool present) {
  return present ? "There is " + name + "." : "There is no " + name + ".";
}

std::vector<bool> extract_flags(std::string_view text, const AbnormalityCatalog& cat) {
  std::vector<std::vector<std::vector<std::string>>> phrases(cat.size());
  for (std::size_t d = 0; d < cat.size(); ++d)
    for (const auto& s : cat.synonyms[d]) phrases[d].push_back(words_of(s));
  std::vector<std::vector<std::string>> cues;
  for (const auto& c : cat.negation_cues) cues.push_back(words_of(c));

  std::vector<bool> flags(cat.size(), false);
  for (std::string_view clause : clauses_of(text)) {
    const auto words = words_of(clause);
    if (words.empty()) continue;
    const bool negated =
        std::any_of(cues.begin(), cues.end(), [&](const auto& c) { return contains_phrase(words, c); });
    if (negated) continue;
    for (std::size_t d = 0; d < cat.size(); ++d) {
      if (flags[d]) continue;
      for (const auto& p : phrases[d]) {
        if (contains_phrase(words, p)) {
          flags[d] = true;
          break;
        }
      }
    }
  }
  return flags;
}

StructuredReport structured_from_flags(std::string case_id, const std::vector<bool>& flags,
                                       const AbnormalityCatalog& cat) {
  if (flags.size() != cat.size())
    throw std::invalid_argument("structured_from_flags: expected " + std::to_string(cat.size()) + " flags");
  StructuredReport s;
  s.case_id = std::move(case_id);
  s.flags = flags;
  for (std::size_t d = 0; d < cat.size(); ++d) s.statements.push_back(statement_for(cat.names[d], flags[d]));
  return s;
}

StructuredReport structure_report(const FreeTextReport& r, const AbnormalityCatalog& cat) {
  return structured_from_flags(r.case_id, extract_flags(r.text, cat), cat);
}

std::pair<std::string, std::string> make_prompt_pair(std::string_view name, const AbnormalityCatalog& cat) {
  if (!cat.find(name)) throw std::invalid_argument("unknown abnormality '" + std::string(name) + "'");
  const std::string surface = collapse_spaces(name);
  return {"There is " + surface, "There is no " + surface};
}

bool validate_structured(const StructuredReport& s, const AbnormalityCatalog& cat) {
  if (s.case_id.empty()) return false;
  if (s.statements.size() != cat.size() || s.flags.size() != cat.size()) return false;
  for (std::size_t d = 0; d < cat.size(); ++d)
    if (s.statements[d] != statement_for(cat.names[d], s.flags[d])) return false;
  return true;
}

std::string structured_text(const StructuredReport& s) {
  std::string out;
  for (const auto& st : s.statements) {
    if (!out.empty()) out.push_back(' ');
    out += st;
  }
  return out;
}

// ------------------------------------------------------------------ corpus

std::vector<ReportRecord> read_report_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report corpus " + path.string());
  std::vector<ReportRecord> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ReportRecord r;
      r.case_id = j.at("case_id").get<std::string>();
      r.free_text = j.at("free_text").get<std::string>();
      if (j.contains("structured")) r.structured = j.at("structured").get<std::vector<std::string>>();
      if (j.contains("flags")) r.flags = j.at("flags").get<std::vector<bool>>();
      if (r.case_id.empty()) throw FormatError("empty case_id");
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_report_corpus(const std::vector<ReportRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report corpus " + path.string());
  for (const auto& r : records) {
    out << json{{"case_id", r.case_id}, {"free_text", r.free_text}, {"structured", r.structured},
                {"flags", r.flags}}
               .dump()
        << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace cardioclip
