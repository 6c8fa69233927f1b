#include "clinical_parsers.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>

#include "util/errors.hpp"
#include "util/text.hpp"

namespace codex {
namespace {

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// trim -> lowercase -> control chars to spaces -> collapse runs of one
// punctuation character -> collapse whitespace.
std::string clean_lab_text(std::string_view raw) {
  std::string s = to_lower(trim(raw));
  for (char& c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x20 || u == 0x7f) c = ' ';
  }
  std::string collapsed;
  collapsed.reserve(s.size());
  for (char c : s) {
    if (!collapsed.empty() && is_punct(c) && collapsed.back() == c) continue;
    collapsed.push_back(c);
  }
  std::string out;
  out.reserve(collapsed.size());
  for (char c : collapsed) {
    if (is_space(c)) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(c);
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

bool parse_full_number(std::string_view s, double& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

// Longest numeric prefix; returns chars consumed, 0 on failure.
std::size_t scan_number(std::string_view s, double& out) {
  if (s.empty()) return 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || !std::isfinite(out)) return 0;
  return static_cast<std::size_t>(ptr - s.data());
}

std::string_view skip_spaces(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

// "<num> SEP <num>" with optional leading "range"; SEP is '-', '|', an
// en dash, or the word "to".
bool parse_range(std::string_view s, double& low, double& high) {
  if (s.substr(0, 5) == "range") s = skip_spaces(s.substr(5));
  double a = 0.0;
  const std::size_t n1 = scan_number(s, a);
  if (n1 == 0) return false;
  s = skip_spaces(s.substr(n1));
  if (!s.empty() && (s[0] == '-' || s[0] == '|')) {
    s = s.substr(1);
  } else if (s.substr(0, 3) == "\xe2\x80\x93") {
    s = s.substr(3);
  } else if (s.substr(0, 2) == "to") {
    s = s.substr(2);
  } else {
    return false;
  }
  s = skip_spaces(s);
  double b = 0.0;
  const std::size_t n2 = scan_number(s, b);
  if (n2 == 0 || n2 != s.size()) return false;
  low = std::min(a, b);
  high = std::max(a, b);
  return true;
}

// "<digits> +"
bool parse_plus_grade(std::string_view s, double& grade) {
  std::size_t i = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i == 0) return false;
  std::string_view rest = skip_spaces(s.substr(i));
  if (rest != "+") return false;
  return parse_full_number(s.substr(0, i), grade);
}

void insert_lines(std::set<std::string>& into, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Err::IoError, "cannot read lexicon file '" + path + "'");
  std::string line;
  while (std::getline(in, line)) {
    std::string_view t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    into.insert(to_lower(t));
  }
}

}  // namespace

Lexicons Lexicons::defaults() {
  Lexicons lex;
  const std::pair<const char*, const char*> categories[] = {
      {"neg", "negative"},          {"-ve", "negative"},      {"negative", "negative"},
      {"pos", "positive"},          {"+ve", "positive"},      {"positive", "positive"},
      {"trace", "trace"},           {"normal", "normal"},     {"abnormal", "abnormal"},
      {"reactive", "reactive"},     {"non-reactive", "nonreactive"},
      {"nonreactive", "nonreactive"}, {"borderline", "borderline"},
      {"equivocal", "equivocal"},   {"hemolyzed", "hemolyzed"},
  };
  for (const auto& [form, canon] : categories) lex.lab_categories[form] = canon;

  const char* units[] = {"iu/ml", "iu/l",  "u/l",    "mg/dl",  "mg/l",   "g/dl",
                         "g/l",   "mmol/l", "umol/l", "ng/ml",  "mcg/ml", "%",
                         "mm/hr", "sec",    "x10^9/l", "cells/ul", "copies/ml", "mmhg"};
  for (const char* u : units) lex.units.insert(u);

  const char* stopwords[] = {
      "about", "above", "after",  "again", "all",   "an",    "and",    "any",   "are",
      "as",    "at",    "be",     "been",  "before", "being", "below",  "between",
      "both",  "but",   "by",     "can",   "did",   "do",    "does",   "down",  "during",
      "each",  "few",   "for",    "from",  "further", "had", "has",    "have",  "having",
      "he",    "her",   "here",   "hers",  "him",   "his",   "how",    "if",    "in",
      "into",  "is",    "it",     "its",   "just",  "me",    "more",   "most",  "my",
      "no",    "nor",   "not",    "now",   "of",    "off",   "on",     "once",  "only",
      "or",    "other", "our",    "out",   "over",  "own",   "same",   "she",   "should",
      "so",    "some",  "such",   "than",  "that",  "the",   "their",  "them",  "then",
      "there", "these", "they",   "this",  "those", "through", "to",   "too",   "under",
      "until", "up",    "very",   "was",   "we",    "were",  "what",   "when",  "where",
      "which", "while", "who",    "whom",  "why",   "will",  "with",   "you",   "your"};
  for (const char* w : stopwords) lex.stopwords.insert(w);
  for (char c = 'a'; c <= 'z'; ++c) lex.stopwords.insert(std::string(1, c));

  const char* cancel[] = {"cancelled", "canceled", "void"};
  for (const char* w : cancel) lex.cancel_statuses.insert(w);

  const char* locations[] = {"abdomen", "ankle",    "brain", "chest", "elbow", "femur",
                             "foot",    "hand",     "head",  "hip",   "knee",  "neck",
                             "pelvis",  "shoulder", "sinus", "skull", "spine", "wrist"};
  for (const char* w : locations) lex.locations.insert(w);

  const char* positions[] = {"ap",     "axial", "coronal",  "decubitus", "erect", "lateral",
                             "oblique", "pa",    "prone",    "sagittal",  "supine"};
  for (const char* w : positions) lex.positions.insert(w);
  return lex;
}

Lexicons Lexicons::load_dir(const std::string& dir) {
  Lexicons lex;
  {
    const std::string path = dir + "/categories.tsv";
    std::ifstream in(path);
    if (!in) throw Error(Err::IoError, "cannot read lexicon file '" + path + "'");
    std::string line;
    while (std::getline(in, line)) {
      std::string_view t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto cols = split(t, '\t');
      if (cols.size() != 2)
        throw Error(Err::SchemaViolation, "categories.tsv line needs form<TAB>canonical: " + line);
      lex.lab_categories[to_lower(trim(cols[0]))] = to_lower(trim(cols[1]));
    }
  }
  insert_lines(lex.units, dir + "/units.txt");
  insert_lines(lex.stopwords, dir + "/stopwords.txt");
  insert_lines(lex.cancel_statuses, dir + "/cancel_status.txt");
  insert_lines(lex.locations, dir + "/locations.txt");
  insert_lines(lex.positions, dir + "/positions.txt");
  return lex;
}

std::string_view lab_mode_name(LabValueMode mode) {
  switch (mode) {
    case LabValueMode::Numeric: return "numeric";
    case LabValueMode::Categorical: return "categorical";
    case LabValueMode::Mixture: return "mixture";
  }
  return "?";
}

ParsedLabValue parse_lab_value(std::string_view raw, const Lexicons& lex) {
  const std::string s = clean_lab_text(raw);
  if (s.empty()) throw Error(Err::EmptyValue, "blank lab value");

  ParsedLabValue v;
  double num = 0.0;
  if (parse_full_number(s, num)) {
    v.mode = LabValueMode::Numeric;
    v.numeric_value = num;
    return v;
  }
  if (auto it = lex.lab_categories.find(s); it != lex.lab_categories.end()) {
    v.mode = LabValueMode::Categorical;
    v.category = it->second;
    return v;
  }
  double low = 0.0, high = 0.0;
  if (parse_range(s, low, high)) {
    v.mode = LabValueMode::Mixture;
    v.range = {low, high};
    v.numeric_value = (low + high) / 2.0;  // midpoint stands in for the interval
    return v;
  }
  double grade = 0.0;
  if (parse_plus_grade(s, grade)) {
    v.mode = LabValueMode::Mixture;
    v.numeric_value = grade;
    v.category = "plus-grade";
    return v;
  }
  const std::size_t n = scan_number(s, num);
  if (n > 0) {
    const std::string unit{skip_spaces(std::string_view(s).substr(n))};
    if (!unit.empty() && lex.units.count(unit)) {
      v.mode = LabValueMode::Mixture;
      v.numeric_value = num;
      v.unit = unit;
      return v;
    }
  }
  throw Error(Err::Unparseable, "lab value '" + s + "' matches no mode");
}

std::string canonical_lab_string(const ParsedLabValue& v) {
  switch (v.mode) {
    case LabValueMode::Numeric:
      return format_double(*v.numeric_value);
    case LabValueMode::Categorical:
      return *v.category;
    case LabValueMode::Mixture:
      if (v.range)
        return "range " + format_double(v.range->first) + " to " + format_double(v.range->second);
      if (v.category && *v.category == "plus-grade") return format_double(*v.numeric_value) + "+";
      if (v.unit) return format_double(*v.numeric_value) + " " + *v.unit;
      return format_double(*v.numeric_value);
  }
  return {};
}

bool CleanedReport::empty() const {
  for (const auto& s : sentences)
    if (!s.empty()) return false;
  return location_tags.empty() && position_tags.empty();
}

CleanedReport clean_radiology_text(std::string_view raw, const Lexicons& lex) {
  CleanedReport rep;
  rep.sentences.resize(kSentenceSlots);
  const std::string lower = to_lower(raw);

  int slot = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= lower.size() && slot < kSentenceSlots; ++i) {
    const bool boundary = i == lower.size() || lower[i] == '.' || lower[i] == '!' ||
                          lower[i] == '?' || lower[i] == ';';
    if (!boundary) continue;
    const std::string_view segment(lower.data() + start, i - start);
    start = i + 1;
    bool has_ink = false;
    for (char c : segment)
      if (!is_space(c)) {
        has_ink = true;
        break;
      }
    if (!has_ink) continue;  // blank segments do not occupy a sentence slot

    std::string mapped(segment);
    for (char& c : mapped)
      if (!(std::islower(static_cast<unsigned char>(c)) ||
            std::isdigit(static_cast<unsigned char>(c))))
        c = ' ';
    std::vector<std::string> tokens;
    for (auto& tok : split_ws(mapped)) {
      if (lex.stopwords.count(tok)) continue;
      if (lex.locations.count(tok)) rep.location_tags.insert(tok);
      if (lex.positions.count(tok)) rep.position_tags.insert(tok);
      tokens.push_back(std::move(tok));
    }
    rep.sentences[static_cast<std::size_t>(slot++)] = std::move(tokens);
  }
  return rep;
}

AdmissionFields parse_admission(std::string_view gender_raw, const Date& birth_date,
                                const Date& admit_date,
                                const std::optional<Date>& discharge_date,
                                const std::vector<int>& bin_edges) {
  if (days_between(birth_date, admit_date) < 0)
    throw Error(Err::InvalidDates, "admission " + to_iso(admit_date) + " precedes birth " +
                                       to_iso(birth_date));
  AdmissionFields f;
  const std::string g = to_lower(trim(gender_raw));
  f.gender = (!g.empty() && g[0] == 'm') ? 1 : 0;

  const int age = age_years(birth_date, admit_date);
  int bin = 0;
  for (int edge : bin_edges)
    if (age >= edge) ++bin;
  f.age_bin = bin;

  if (discharge_date) {
    const long los = days_between(admit_date, *discharge_date);
    if (los < 0)
      throw Error(Err::InvalidDates, "discharge " + to_iso(*discharge_date) +
                                         " precedes admission " + to_iso(admit_date));
    f.length_of_stay_days = static_cast<int>(los);
  }
  f.admit_day = admit_date.day;
  f.admit_month = admit_date.month;
  f.admit_year = admit_date.year;
  return f;
}

std::optional<std::string> normalize_medication(std::string_view drug_code,
                                                std::string_view status, const Lexicons& lex) {
  if (lex.cancel_statuses.count(to_lower(trim(status)))) return std::nullopt;
  return to_upper(trim(drug_code));
}

}  // namespace codex
