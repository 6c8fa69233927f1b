#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "util/dates.hpp"

// Parsers that turn raw clinical strings (lab result values, radiology
// narratives, medication rows, admission fields) into typed records. All
// functions here are pure; lexicons are immutable lookup tables.

namespace codex {

struct Lexicons {
  std::map<std::string, std::string> lab_categories;  // surface form -> canonical token
  std::set<std::string> units;
  std::set<std::string> stopwords;
  std::set<std::string> cancel_statuses;
  std::set<std::string> locations;  // body sites seen in radiology text
  std::set<std::string> positions;  // exam views / patient positions

  static Lexicons defaults();
  // Reads categories.tsv, units.txt, stopwords.txt, cancel_status.txt,
  // locations.txt, positions.txt from `dir`; '#' starts a comment line.
  static Lexicons load_dir(const std::string& dir);
};

enum class LabValueMode { Numeric, Categorical, Mixture };

std::string_view lab_mode_name(LabValueMode mode);

struct ParsedLabValue {
  LabValueMode mode = LabValueMode::Numeric;
  std::optional<double> numeric_value;  // unit-stripped
  std::optional<std::string> unit;
  std::optional<std::string> category;
  std::optional<std::pair<double, double>> range;  // low <= high

  bool operator==(const ParsedLabValue&) const = default;
};

// Classifies a raw lab value string into exactly one mode. Cleanup first:
// trim, lowercase, control characters to spaces, runs of one punctuation
// character collapsed, whitespace collapsed. Then, in order: pure number;
// canonical category; range ("2-4", "range 2-4", "2 to 4"); plus-grade
// ("1+"); number followed by a known unit ("716.3 iu/ml").
// Throws EmptyValue when nothing is left after cleanup, Unparseable when no
// mode matches.
ParsedLabValue parse_lab_value(std::string_view raw, const Lexicons& lex);

// Canonical rendering; parse_lab_value(canonical_lab_string(v)) == v for
// every v produced by parse_lab_value.
std::string canonical_lab_string(const ParsedLabValue& v);

inline constexpr int kSentenceSlots = 5;

struct CleanedReport {
  std::vector<std::vector<std::string>> sentences;  // exactly kSentenceSlots entries
  std::set<std::string> location_tags;
  std::set<std::string> position_tags;

  bool empty() const;
};

// Lowercases, splits on [.!?;], strips everything outside [a-z0-9 ], drops
// stopwords. Segments holding at least one non-space character occupy a
// sentence slot; the first kSentenceSlots slots are kept and padded with
// empty token lists. Tags are kept-sentence tokens found in the location /
// position lexicons.
CleanedReport clean_radiology_text(std::string_view raw, const Lexicons& lex);

struct AdmissionFields {
  int gender = 0;  // 0 = female, 1 = male
  int age_bin = 0;
  int length_of_stay_days = 0;  // 0 for outpatients
  int admit_day = 1;
  int admit_month = 1;
  int admit_year = 1970;

  bool operator==(const AdmissionFields&) const = default;
};

// Gender tokens starting with 'm' map to 1, everything else to 0. Age is
// computed at admission and binned by `bin_edges` (bin = number of edges <=
// age, so n_bins = edges + 1). Missing discharge means an outpatient visit
// with length_of_stay_days = 0. Throws InvalidDates when admission precedes
// birth or discharge precedes admission.
AdmissionFields parse_admission(std::string_view gender_raw, const Date& birth_date,
                                const Date& admit_date,
                                const std::optional<Date>& discharge_date,
                                const std::vector<int>& bin_edges);

// Uppercased, trimmed drug code; nullopt exactly when the status (trimmed,
// lowercased) is a cancellation token.
std::optional<std::string> normalize_medication(std::string_view drug_code,
                                                std::string_view status, const Lexicons& lex);

}  // namespace codex
