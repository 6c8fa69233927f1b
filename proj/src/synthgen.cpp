#include "synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "util/errors.hpp"
#include "util/rng.hpp"

namespace codex::synth {

using nlohmann::json;

namespace {

// Per-episode substream tags. Every stream draws a strength-independent
// number of uniforms per decision point so corpora generated from the same
// seed at different signal strengths stay coupled draw-for-draw.
constexpr std::uint64_t kStreamTables = 0x7461626cULL;
constexpr std::uint64_t kStreamCodes = 0x636f6465ULL;
constexpr std::uint64_t kStreamKind = 0x6b696e64ULL;
constexpr std::uint64_t kStreamAdmission = 0x61646d74ULL;
constexpr std::uint64_t kStreamMeds = 0x6d656473ULL;
constexpr std::uint64_t kStreamLabs = 0x6c616273ULL;
constexpr std::uint64_t kStreamFuzz = 0x66757a7aULL;
constexpr std::uint64_t kStreamTokens = 0x746f6b73ULL;
constexpr std::uint64_t kStreamAssemble = 0x61736d62ULL;
constexpr std::uint64_t kStreamDropout = 0x64726f70ULL;

constexpr double kProbEps = 1e-12;

// Slot states of a category within one episode.
constexpr int kOff = 0;
constexpr int kSecondary = 1;
constexpr int kPrincipal = 2;

double slot_multiplier(int state, double attenuation) {
  if (state == kPrincipal) return 1.0;
  if (state == kSecondary) return attenuation;
  return 0.0;
}

// Noisy-OR of the background rate and the planted signal.
double present_prob(double background, double signal) {
  return 1.0 - (1.0 - background) * (1.0 - signal);
}

double clamp_prob(double p) { return std::min(std::max(p, kProbEps), 1.0 - kProbEps); }

double logaddexp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

std::string format3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::vector<double> category_priors(const GeneratorSpec& spec) {
  const int total = spec.n_total_categories();
  std::vector<double> pi(static_cast<std::size_t>(total), 0.0);
  double z = 0.0;
  for (int i = 0; i < spec.n_categories; ++i) {
    pi[static_cast<std::size_t>(i)] = std::pow(static_cast<double>(i + 1), -spec.zipf_exponent);
    z += pi[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < spec.n_categories; ++i) pi[static_cast<std::size_t>(i)] /= z;
  for (int i = spec.n_categories; i < total; ++i) pi[static_cast<std::size_t>(i)] = spec.rare_prior;
  const double norm = 1.0 + spec.rare_prior * spec.n_rare;
  for (double& p : pi) p /= norm;
  return pi;
}

// secondary_prob[c] = t * prior[c] with t chosen so the expected label-set
// size matches mean_codes: E|S| = 1 + t * sum(pi_c * (1 - pi_c)).
std::vector<double> secondary_probs(const GeneratorSpec& spec, const std::vector<double>& pi) {
  double denom = 0.0;
  for (double p : pi) denom += p * (1.0 - p);
  const double t = denom > 0.0 ? (spec.mean_codes - 1.0) / denom : 0.0;
  std::vector<double> rho(pi.size(), 0.0);
  for (std::size_t c = 0; c < pi.size(); ++c) {
    rho[c] = t * pi[c];
    if (rho[c] > 0.9) {
      throw Error(Err::SpecInvalid,
                  "mean_codes " + std::to_string(spec.mean_codes) +
                      " needs secondary_prob > 0.9 for the most frequent category");
    }
  }
  return rho;
}

std::string category_name(int index) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%c%02d", 'A' + index / 100, index % 100);
  return buf;
}

// Synthetic radiology vocabulary: syllable triples, so tokens never collide
// with stopwords or the location/position lexicons.
std::string token_word(int index) {
  static const char* syl[] = {"ba", "co", "du", "fe", "gi", "ho", "ju", "ka", "lo", "mu",
                              "ne", "pi", "qo", "ru", "sa", "te", "vu", "wa", "xi", "zo"};
  std::string w;
  w += syl[(index / 400) % 20];
  w += syl[(index / 20) % 20];
  w += syl[index % 20];
  return w;
}

struct BinRange {
  int lo = 0;
  int hi = 0;  // exclusive
  int len() const { return hi - lo; }
};

// bin k holds ages a with (number of edges <= a) == k; mirrors parse_admission.
std::vector<BinRange> age_bin_ranges(const std::vector<int>& edges, int max_age) {
  std::vector<BinRange> bins;
  int lo = 0;
  for (int e : edges) {
    bins.push_back({lo, e});
    lo = e;
  }
  bins.push_back({lo, max_age + 1});
  return bins;
}

const std::vector<std::string>& cancel_forms() {
  static const std::vector<std::string> forms = {"cancelled", "canceled", "void"};
  return forms;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {"the", "and", "of", "with", "for"};
  return words;
}

const std::vector<std::string>& gender_forms() {
  static const std::vector<std::string> forms = {"female", "F", "fem", "male", "M", "m"};
  return forms;
}

struct EpisodeScratch {
  std::vector<int> state;         // per category slot state
  std::vector<int> label_order;   // principal first, then secondaries by index
  int principal = -1;
};

void draw_labels(const GeneratorSpec& spec, const std::vector<double>& pi,
                 const std::vector<double>& rho, Rng& rng, EpisodeScratch& ep) {
  const int total = spec.n_total_categories();
  ep.state.assign(static_cast<std::size_t>(total), kOff);
  ep.label_order.clear();
  const double u = rng.uniform();
  double acc = 0.0;
  ep.principal = total - 1;
  for (int c = 0; c < total; ++c) {
    acc += pi[static_cast<std::size_t>(c)];
    if (u < acc) {
      ep.principal = c;
      break;
    }
  }
  // Membership draws consume one uniform per category regardless of the
  // principal, keeping the stream aligned across draws.
  std::vector<int> secondaries;
  for (int c = 0; c < total; ++c) {
    const double us = rng.uniform();
    if (c != ep.principal && us < rho[static_cast<std::size_t>(c)]) secondaries.push_back(c);
  }
  ep.state[static_cast<std::size_t>(ep.principal)] = kPrincipal;
  for (int c : secondaries) ep.state[static_cast<std::size_t>(c)] = kSecondary;
  ep.label_order.push_back(ep.principal);
  for (int c : secondaries) ep.label_order.push_back(c);
}

std::vector<std::string> render_codes(const GenTables& tables, const EpisodeScratch& ep,
                                      Rng& rng) {
  std::vector<std::string> codes;
  codes.reserve(ep.label_order.size());
  for (int c : ep.label_order) {
    std::string code = tables.categories[static_cast<std::size_t>(c)].name;
    if (rng.uniform() < 0.8) {
      code += '.';
      code += static_cast<char>('0' + rng.range(0, 9));
    }
    codes.push_back(std::move(code));
  }
  return codes;
}

AdmissionRaw draw_admission(const GenTables& tables, const EpisodeScratch& ep, bool outpatient,
                            Rng& rng, int* los_out) {
  const GeneratorSpec& spec = tables.spec;
  const CategoryTable& cat = tables.categories[static_cast<std::size_t>(ep.principal)];
  const auto bins = age_bin_ranges(spec.age_bin_edges, tables.max_age);
  const double planted = spec.strength[static_cast<int>(Modality::Admission)] *
                         spec.adm_concentration;
  const int n_ages = tables.max_age + 1;

  const double u_pref_age = rng.uniform();
  const double u_age = rng.uniform();
  const double u_pref_month = rng.uniform();
  const double u_month = rng.uniform();
  const double u_day = rng.uniform();
  const double u_year = rng.uniform();
  const double u_gender = rng.uniform();
  const int los_extra = rng.geometric(0.35);
  const double u_bmonth = rng.uniform();
  const double u_bday = rng.uniform();

  int age;
  if (u_pref_age < planted) {
    const BinRange& b = bins[static_cast<std::size_t>(cat.preferred_age_bin)];
    age = b.lo + static_cast<int>(u_age * b.len());
  } else {
    age = static_cast<int>(u_age * n_ages);
  }
  age = std::min(age, tables.max_age);

  int month = (u_pref_month < planted) ? cat.preferred_month
                                       : 1 + static_cast<int>(u_month * 12);
  month = std::min(month, 12);

  const int day = 1 + static_cast<int>(u_day * 28);
  const int year = 2014 + static_cast<int>(u_year * 3);

  AdmissionRaw adm;
  adm.admit_date = Date{year, month, std::min(day, 28)};
  adm.gender = gender_forms()[static_cast<std::size_t>(u_gender * 6.0)];

  const int bmonth = 1 + std::min(static_cast<int>(u_bmonth * 12), 11);
  const int bday = 1 + std::min(static_cast<int>(u_bday * 28), 27);
  const bool birthday_passed =
      bmonth < month || (bmonth == month && bday <= adm.admit_date.day);
  adm.birth_date = Date{year - age - (birthday_passed ? 0 : 1), bmonth, bday};

  int los = 0;
  if (!outpatient) {
    los = 1 + std::min(los_extra, 29);
    const long long admit_days = days_from_civil(adm.admit_date);
    adm.discharge_date = civil_from_days(admit_days + los);
  }
  *los_out = los;
  return adm;
}

void draw_medications(const GenTables& tables, const EpisodeScratch& ep, Rng& rng,
                      std::vector<MedEntry>& out) {
  const GeneratorSpec& spec = tables.spec;
  const double s = spec.strength[static_cast<int>(Modality::Medications)];
  out.clear();
  for (std::size_t d = 0; d < tables.drugs.size(); ++d) {
    const DrugTable& drug = tables.drugs[d];
    const double u = rng.uniform();
    double p;
    if (d == 0) {
      p = 1.0;  // baseline drug marks the list as collected
    } else if (drug.owner >= 0) {
      const double m = slot_multiplier(ep.state[static_cast<std::size_t>(drug.owner)],
                                       spec.secondary_attenuation);
      p = present_prob(spec.bg_drug_prob, s * m);
    } else {
      p = spec.bg_drug_prob;
    }
    if (u >= p) continue;
    std::string status = "active";
    if (drug.owner < 0 && d > 0 && rng.uniform() < spec.noise_drug_cancel_rate) {
      status = rng.pick(cancel_forms());
    }
    out.push_back({drug.code, status});
  }
}

void draw_labs(const GenTables& tables, const EpisodeScratch& ep, const Date& admit, Rng& rng,
               std::vector<LabEntry>& out, SynthStats& stats, int* entry_counter) {
  const GeneratorSpec& spec = tables.spec;
  const double s = spec.strength[static_cast<int>(Modality::Lab)];
  out.clear();
  for (const LabTestTable& test : tables.tests) {
    const double u_app = rng.uniform();
    if (u_app >= test.appear_prob) continue;
    const int n_entries = 1 + std::min(rng.geometric(0.6), 2);
    for (int e = 0; e < n_entries; ++e) {
      const double z = rng.normal();
      double shift = 0.0;
      if (test.owner >= 0) {
        shift = test.delta * s *
                slot_multiplier(ep.state[static_cast<std::size_t>(test.owner)],
                                spec.secondary_attenuation);
      }
      const double value = test.mu + shift + test.sigma * z;
      const double u_mode = rng.uniform();
      std::string raw;
      if (u_mode < 0.60) {
        raw = format3(value);
        ++stats.labs_rendered_plain;
      } else if (u_mode < 0.85) {
        raw = format3(value) + " " + test.unit;
        ++stats.labs_rendered_unit;
      } else {
        const double w = test.sigma * (0.4 + 0.8 * rng.uniform());
        const std::string lo = format3(value - w);
        const std::string hi = format3(value + w);
        const double u_variant = rng.uniform();
        if (u_variant < 1.0 / 3.0) {
          raw = "range " + lo + "-" + hi;
        } else if (u_variant < 2.0 / 3.0) {
          raw = lo + " - " + hi;
        } else {
          raw = lo + " to " + hi;
        }
        ++stats.labs_rendered_range;
      }
      char ts[40];
      std::snprintf(ts, sizeof ts, "%04d-%02d-%02dT%02d:00:00", admit.year, admit.month,
                    admit.day, 8 + (*entry_counter % 12));
      ++*entry_counter;
      out.push_back({test.id, std::move(raw), ts});
      ++stats.lab_entries;
    }
  }
}

// Label-independent messy entries on dedicated fuzz tests; they exercise the
// categorical / plus-grade / unparseable / empty parser paths without adding
// signal (the fuzz test ids own no category).
void draw_fuzz_labs(const GeneratorSpec& spec, const Date& admit, Rng& rng,
                    std::vector<LabEntry>& labs, SynthStats& stats, int* entry_counter) {
  static const std::vector<std::string> categorical = {"neg",   "-ve",    "Positive",
                                                       "TRACE", "normal", "non-reactive"};
  static const std::vector<std::string> plus = {"1+", "2+", "3+", "2 +"};
  static const std::vector<std::string> junk = {"++", "<5", "???", "n/a", ""};
  auto stamp = [&] {
    char ts[40];
    std::snprintf(ts, sizeof ts, "%04d-%02d-%02dT%02d:00:00", admit.year, admit.month, admit.day,
                  8 + (*entry_counter % 12));
    ++*entry_counter;
    return std::string(ts);
  };
  if (rng.uniform() < spec.fuzz_rate) {
    labs.push_back({"fzcat", rng.pick(categorical), stamp()});
    ++stats.fuzz_categorical;
  }
  if (rng.uniform() < spec.fuzz_rate) {
    labs.push_back({"fzplus", rng.pick(plus), stamp()});
    ++stats.fuzz_plus_grade;
  }
  if (rng.uniform() < spec.fuzz_rate) {
    const std::string& v = rng.pick(junk);
    labs.push_back({"fzjunk", v, stamp()});
    if (v.empty()) {
      ++stats.fuzz_empty;
    } else {
      ++stats.fuzz_unparseable;
    }
  }
}

std::vector<std::string> draw_tokens(const GenTables& tables, const EpisodeScratch& ep,
                                     Rng& rng) {
  const GeneratorSpec& spec = tables.spec;
  const double s = spec.strength[static_cast<int>(Modality::Radiology)];
  std::vector<std::string> words;
  for (const TokenTable& tok : tables.tokens) {
    const double u = rng.uniform();
    double p = spec.bg_token_prob;
    if (tok.owner >= 0) {
      const double m = slot_multiplier(ep.state[static_cast<std::size_t>(tok.owner)],
                                       spec.secondary_attenuation);
      p = present_prob(spec.bg_token_prob, s * m);
    }
    if (u < p) words.push_back(tok.word);
  }
  return words;
}

// Packs the present tokens into at most kSentenceSlots sentences (so the
// text cleaner never truncates signal), sprinkles stopword filler, and
// occasionally splits into two reports or decorates with location/position
// words. All decoration is label-independent.
std::vector<RadReport> assemble_reports(const GenTables& tables, std::vector<std::string> words,
                                        const Lexicons& lex, Rng& rng) {
  rng.shuffle(words);
  const int n = static_cast<int>(words.size());
  const int n_sent = std::max(1, std::min(kSentenceSlots, (n + 2) / 3));

  std::vector<std::string> sentences;
  sentences.reserve(static_cast<std::size_t>(n_sent));
  int used = 0;
  for (int sidx = 0; sidx < n_sent; ++sidx) {
    const int take = (n - used) / (n_sent - sidx);
    std::string sentence = rng.pick(filler_words());
    for (int k = 0; k < take; ++k) {
      sentence += ' ';
      sentence += words[static_cast<std::size_t>(used++)];
    }
    sentences.push_back(std::move(sentence));
  }

  const std::vector<std::string> locations(lex.locations.begin(), lex.locations.end());
  const std::vector<std::string> positions(lex.positions.begin(), lex.positions.end());

  // In-text location mention; the cleaner surfaces it as a tag.
  if (rng.uniform() < 0.25 && !locations.empty()) {
    sentences[0] += ' ';
    sentences[0] += rng.pick(locations);
  }

  std::string field_location;
  std::string field_position;
  if (rng.uniform() < 0.5 && !locations.empty()) field_location = rng.pick(locations);
  if (rng.uniform() < 0.35 && !positions.empty()) field_position = rng.pick(positions);

  int split_at = 0;  // sentences in the first report; 0 = single report
  const double u_split = rng.uniform();
  if (n_sent >= 2 && u_split < 0.25) {
    split_at = 1 + static_cast<int>(rng.uniform() * (n_sent - 1));
  }

  auto join = [](const std::vector<std::string>& parts, int from, int to) {
    std::string text;
    for (int i = from; i < to; ++i) {
      if (!text.empty()) text += ". ";
      text += parts[static_cast<std::size_t>(i)];
    }
    return text;
  };

  std::vector<RadReport> reports;
  if (split_at > 0 && split_at < n_sent) {
    reports.push_back({join(sentences, 0, split_at), field_location, field_position});
    reports.push_back({join(sentences, split_at, n_sent), "", ""});
  } else {
    reports.push_back({join(sentences, 0, n_sent), field_location, field_position});
  }
  (void)tables;
  return reports;
}

// Numeric view used by the closed-form posterior: plain and unit renders
// contribute their value, ranges their midpoint (the generator widens a
// value symmetrically, so the midpoint recovers it).
void oracle_lab_values(const EpisodeRecord& episode, const Lexicons& lex,
                       std::unordered_map<std::string, std::vector<double>>& by_test) {
  by_test.clear();
  for (const LabEntry& entry : episode.labs) {
    ParsedLabValue parsed;
    try {
      parsed = parse_lab_value(entry.raw_value, lex);
    } catch (const Error&) {
      continue;  // empty / unparseable entries carry no signal
    }
    if (parsed.range) {
      by_test[entry.test_id].push_back(0.5 * (parsed.range->first + parsed.range->second));
    } else if (parsed.mode == LabValueMode::Numeric) {
      by_test[entry.test_id].push_back(*parsed.numeric_value);
    } else if (parsed.numeric_value && !parsed.category) {
      by_test[entry.test_id].push_back(*parsed.numeric_value);
    }
  }
}

json spec_to_json(const GeneratorSpec& spec) {
  json j;
  to_json(j, spec);
  return j;
}

}  // namespace

void to_json(json& j, const GeneratorSpec& spec) {
  j = json{{"n_episodes", spec.n_episodes},
           {"n_categories", spec.n_categories},
           {"n_rare", spec.n_rare},
           {"rare_prior", spec.rare_prior},
           {"zipf_exponent", spec.zipf_exponent},
           {"mean_codes", spec.mean_codes},
           {"secondary_attenuation", spec.secondary_attenuation},
           {"strength", spec.strength},
           {"modality_dropout", spec.modality_dropout},
           {"drugs_per_category", spec.drugs_per_category},
           {"tests_per_category", spec.tests_per_category},
           {"tokens_per_category", spec.tokens_per_category},
           {"n_noise_drugs", spec.n_noise_drugs},
           {"n_noise_tests", spec.n_noise_tests},
           {"n_noise_tokens", spec.n_noise_tokens},
           {"bg_drug_prob", spec.bg_drug_prob},
           {"signal_test_appear_prob", spec.signal_test_appear_prob},
           {"noise_test_appear_prob", spec.noise_test_appear_prob},
           {"bg_token_prob", spec.bg_token_prob},
           {"adm_concentration", spec.adm_concentration},
           {"outpatient_fraction", spec.outpatient_fraction},
           {"fuzz_rate", spec.fuzz_rate},
           {"noise_drug_cancel_rate", spec.noise_drug_cancel_rate},
           {"age_bin_edges", spec.age_bin_edges},
           {"seed", spec.seed}};
}

void from_json(const json& j, GeneratorSpec& spec) {
  const GeneratorSpec defaults;
  spec.n_episodes = j.value("n_episodes", defaults.n_episodes);
  spec.n_categories = j.value("n_categories", defaults.n_categories);
  spec.n_rare = j.value("n_rare", defaults.n_rare);
  spec.rare_prior = j.value("rare_prior", defaults.rare_prior);
  spec.zipf_exponent = j.value("zipf_exponent", defaults.zipf_exponent);
  spec.mean_codes = j.value("mean_codes", defaults.mean_codes);
  spec.secondary_attenuation = j.value("secondary_attenuation", defaults.secondary_attenuation);
  spec.strength = j.value("strength", defaults.strength);
  spec.modality_dropout = j.value("modality_dropout", defaults.modality_dropout);
  spec.drugs_per_category = j.value("drugs_per_category", defaults.drugs_per_category);
  spec.tests_per_category = j.value("tests_per_category", defaults.tests_per_category);
  spec.tokens_per_category = j.value("tokens_per_category", defaults.tokens_per_category);
  spec.n_noise_drugs = j.value("n_noise_drugs", defaults.n_noise_drugs);
  spec.n_noise_tests = j.value("n_noise_tests", defaults.n_noise_tests);
  spec.n_noise_tokens = j.value("n_noise_tokens", defaults.n_noise_tokens);
  spec.bg_drug_prob = j.value("bg_drug_prob", defaults.bg_drug_prob);
  spec.signal_test_appear_prob =
      j.value("signal_test_appear_prob", defaults.signal_test_appear_prob);
  spec.noise_test_appear_prob =
      j.value("noise_test_appear_prob", defaults.noise_test_appear_prob);
  spec.bg_token_prob = j.value("bg_token_prob", defaults.bg_token_prob);
  spec.adm_concentration = j.value("adm_concentration", defaults.adm_concentration);
  spec.outpatient_fraction = j.value("outpatient_fraction", defaults.outpatient_fraction);
  spec.fuzz_rate = j.value("fuzz_rate", defaults.fuzz_rate);
  spec.noise_drug_cancel_rate =
      j.value("noise_drug_cancel_rate", defaults.noise_drug_cancel_rate);
  spec.age_bin_edges = j.value("age_bin_edges", defaults.age_bin_edges);
  spec.seed = j.value("seed", defaults.seed);
}

void GeneratorSpec::validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(Err::SpecInvalid, "generator spec: " + msg);
  };
  if (n_episodes < 1) fail("n_episodes must be >= 1");
  if (n_categories < 2) fail("n_categories must be >= 2");
  if (n_rare < 0) fail("n_rare must be >= 0");
  if (n_total_categories() > 2600) fail("at most 2600 categories fit the naming scheme");
  if (n_rare > 0 && !(rare_prior > 0.0 && rare_prior < 0.01)) {
    fail("rare_prior must be in (0, 0.01)");
  }
  if (zipf_exponent < 0.0) fail("zipf_exponent must be >= 0");
  if (mean_codes < 1.0) fail("mean_codes must be >= 1");
  if (!(secondary_attenuation >= 0.0 && secondary_attenuation <= 1.0)) {
    fail("secondary_attenuation must be in [0, 1]");
  }
  for (int m = 0; m < 4; ++m) {
    if (!(strength[m] >= 0.0 && strength[m] <= 1.0)) fail("strength must be in [0, 1]");
    if (!(modality_dropout[m] >= 0.0 && modality_dropout[m] <= 1.0)) {
      fail("modality_dropout must be in [0, 1]");
    }
  }
  if (modality_dropout[static_cast<int>(Modality::Admission)] != 0.0) {
    fail("admission is always recorded; its dropout must be 0");
  }
  if (drugs_per_category < 1) fail("drugs_per_category must be >= 1");
  if (tests_per_category < 1) fail("tests_per_category must be >= 1");
  if (tokens_per_category < 1) fail("tokens_per_category must be >= 1");
  if (n_noise_drugs < 0 || n_noise_tests < 0 || n_noise_tokens < 0) {
    fail("noise item counts must be >= 0");
  }
  if (!(bg_drug_prob >= 0.0 && bg_drug_prob < 1.0)) fail("bg_drug_prob must be in [0, 1)");
  if (!(signal_test_appear_prob > 0.0 && signal_test_appear_prob <= 1.0)) {
    fail("signal_test_appear_prob must be in (0, 1]");
  }
  if (!(noise_test_appear_prob > 0.0 && noise_test_appear_prob <= 1.0)) {
    fail("noise_test_appear_prob must be in (0, 1]");
  }
  if (!(bg_token_prob >= 0.0 && bg_token_prob < 1.0)) fail("bg_token_prob must be in [0, 1)");
  if (!(adm_concentration >= 0.0 && adm_concentration <= 1.0)) {
    fail("adm_concentration must be in [0, 1]");
  }
  if (!(outpatient_fraction >= 0.0 && outpatient_fraction <= 1.0)) {
    fail("outpatient_fraction must be in [0, 1]");
  }
  if (!(fuzz_rate >= 0.0 && fuzz_rate <= 1.0)) fail("fuzz_rate must be in [0, 1]");
  if (!(noise_drug_cancel_rate >= 0.0 && noise_drug_cancel_rate <= 1.0)) {
    fail("noise_drug_cancel_rate must be in [0, 1]");
  }
  for (std::size_t i = 0; i < age_bin_edges.size(); ++i) {
    if (age_bin_edges[i] < 1 || age_bin_edges[i] > 99) fail("age bin edges must be in [1, 99]");
    if (i > 0 && age_bin_edges[i] <= age_bin_edges[i - 1]) {
      fail("age bin edges must be strictly increasing");
    }
  }
  secondary_probs(*this, category_priors(*this));  // throws when unreachable
}

int GenTables::category_index(const std::string& name) const {
  for (std::size_t c = 0; c < categories.size(); ++c) {
    if (categories[c].name == name) return static_cast<int>(c);
  }
  return -1;
}

GenTables build_tables(const GeneratorSpec& spec) {
  spec.validate();
  GenTables tables;
  tables.spec = spec;
  const int total = spec.n_total_categories();
  const auto pi = category_priors(spec);
  const auto rho = secondary_probs(spec, pi);
  const int n_bins = static_cast<int>(spec.age_bin_edges.size()) + 1;

  Rng rng(derive_seed(spec.seed, kStreamTables));

  tables.categories.resize(static_cast<std::size_t>(total));
  for (int c = 0; c < total; ++c) {
    CategoryTable& cat = tables.categories[static_cast<std::size_t>(c)];
    cat.name = category_name(c);
    cat.prior = pi[static_cast<std::size_t>(c)];
    cat.secondary_prob = rho[static_cast<std::size_t>(c)];
    cat.preferred_age_bin = c % n_bins;
    cat.preferred_month = 1 + c % 12;
  }

  // Drugs: baseline, then per-category blocks, then noise.
  auto drug_code = [](int i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "D%04d", i);
    return std::string(buf);
  };
  tables.drugs.push_back({drug_code(0), -1});
  for (int c = 0; c < total; ++c) {
    for (int k = 0; k < spec.drugs_per_category; ++k) {
      tables.categories[static_cast<std::size_t>(c)].drugs.push_back(
          static_cast<int>(tables.drugs.size()));
      tables.drugs.push_back({drug_code(static_cast<int>(tables.drugs.size())), c});
    }
  }
  for (int k = 0; k < spec.n_noise_drugs; ++k) {
    tables.drugs.push_back({drug_code(static_cast<int>(tables.drugs.size())), -1});
  }

  // Lab tests: baseline (always appears, no shift), per-category, noise.
  static const char* kUnits[] = {"mmol/l", "mg/dl", "iu/ml", "g/l", "u/l", "ng/ml"};
  auto test_id = [](int i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "t%03d", i);
    return std::string(buf);
  };
  auto draw_test = [&](int owner, double appear) {
    LabTestTable t;
    t.id = test_id(static_cast<int>(tables.tests.size()));
    t.owner = owner;
    t.mu = rng.uniform(40.0, 160.0);
    t.sigma = rng.uniform(2.0, 6.0);
    if (owner >= 0) {
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      t.delta = sign * t.sigma * rng.uniform(1.5, 2.5);
    }
    t.appear_prob = appear;
    t.unit = kUnits[tables.tests.size() % (sizeof kUnits / sizeof kUnits[0])];
    return t;
  };
  tables.tests.push_back(draw_test(-1, 1.0));
  for (int c = 0; c < total; ++c) {
    for (int k = 0; k < spec.tests_per_category; ++k) {
      tables.categories[static_cast<std::size_t>(c)].tests.push_back(
          static_cast<int>(tables.tests.size()));
      tables.tests.push_back(draw_test(c, spec.signal_test_appear_prob));
    }
  }
  for (int k = 0; k < spec.n_noise_tests; ++k) {
    tables.tests.push_back(draw_test(-1, spec.noise_test_appear_prob));
  }

  // Radiology tokens: per-category, then noise.
  int word_index = 0;
  for (int c = 0; c < total; ++c) {
    for (int k = 0; k < spec.tokens_per_category; ++k) {
      tables.categories[static_cast<std::size_t>(c)].tokens.push_back(
          static_cast<int>(tables.tokens.size()));
      tables.tokens.push_back({token_word(word_index++), c});
    }
  }
  for (int k = 0; k < spec.n_noise_tokens; ++k) {
    tables.tokens.push_back({token_word(word_index++), -1});
  }

  return tables;
}

SynthResult generate_corpus(const GeneratorSpec& spec) {
  SynthResult result;
  result.tables = build_tables(spec);
  const GenTables& tables = result.tables;
  const auto pi = category_priors(spec);
  const auto rho = secondary_probs(spec, pi);
  const Lexicons lex = Lexicons::defaults();

  SynthStats& stats = result.stats;
  stats.n_episodes = spec.n_episodes;

  long code_total = 0;
  long code_in = 0;
  long code_out = 0;

  EpisodeScratch ep;
  result.episodes.reserve(static_cast<std::size_t>(spec.n_episodes));
  for (long i = 0; i < spec.n_episodes; ++i) {
    const auto eid = static_cast<std::uint64_t>(i);
    EpisodeRecord rec;
    char idbuf[24];
    std::snprintf(idbuf, sizeof idbuf, "ep%06ld", i);
    rec.episode_id = idbuf;

    Rng rng_codes(derive_seed(spec.seed, kStreamCodes, eid));
    draw_labels(spec, pi, rho, rng_codes, ep);
    rec.codes = render_codes(tables, ep, rng_codes);

    Rng rng_kind(derive_seed(spec.seed, kStreamKind, eid));
    const bool outpatient = rng_kind.uniform() < spec.outpatient_fraction;
    rec.patient_kind = outpatient ? PatientKind::Outpatient : PatientKind::Inpatient;

    Rng rng_adm(derive_seed(spec.seed, kStreamAdmission, eid));
    int los = 0;
    rec.admission = draw_admission(tables, ep, outpatient, rng_adm, &los);

    Rng rng_meds(derive_seed(spec.seed, kStreamMeds, eid));
    draw_medications(tables, ep, rng_meds, rec.medications);

    Rng rng_labs(derive_seed(spec.seed, kStreamLabs, eid));
    int entry_counter = 0;
    draw_labs(tables, ep, rec.admission.admit_date, rng_labs, rec.labs, stats, &entry_counter);

    Rng rng_fuzz(derive_seed(spec.seed, kStreamFuzz, eid));
    draw_fuzz_labs(spec, rec.admission.admit_date, rng_fuzz, rec.labs, stats, &entry_counter);

    Rng rng_tokens(derive_seed(spec.seed, kStreamTokens, eid));
    std::vector<std::string> words = draw_tokens(tables, ep, rng_tokens);

    Rng rng_asm(derive_seed(spec.seed, kStreamAssemble, eid));
    rec.reports = assemble_reports(tables, std::move(words), lex, rng_asm);

    Rng rng_drop(derive_seed(spec.seed, kStreamDropout, eid));
    const double u_drop_lab = rng_drop.uniform();
    const double u_drop_med = rng_drop.uniform();
    const double u_drop_rad = rng_drop.uniform();
    if (u_drop_lab < spec.modality_dropout[static_cast<int>(Modality::Lab)]) rec.labs.clear();
    if (u_drop_med < spec.modality_dropout[static_cast<int>(Modality::Medications)]) {
      rec.medications.clear();
    }
    if (u_drop_rad < spec.modality_dropout[static_cast<int>(Modality::Radiology)]) {
      rec.reports.clear();
    }

    if (!rec.labs.empty()) ++stats.modality_present[static_cast<int>(Modality::Lab)];
    if (!rec.medications.empty()) {
      ++stats.modality_present[static_cast<int>(Modality::Medications)];
    }
    if (!rec.reports.empty()) ++stats.modality_present[static_cast<int>(Modality::Radiology)];
    ++stats.modality_present[static_cast<int>(Modality::Admission)];

    const long n_codes = static_cast<long>(rec.codes.size());
    code_total += n_codes;
    if (outpatient) {
      ++stats.n_outpatient;
      code_out += n_codes;
    } else {
      ++stats.n_inpatient;
      code_in += n_codes;
    }

    result.episodes.push_back(std::move(rec));
  }

  stats.mean_codes = static_cast<double>(code_total) / static_cast<double>(spec.n_episodes);
  stats.mean_codes_inpatient =
      stats.n_inpatient > 0 ? static_cast<double>(code_in) / stats.n_inpatient : 0.0;
  stats.mean_codes_outpatient =
      stats.n_outpatient > 0 ? static_cast<double>(code_out) / stats.n_outpatient : 0.0;
  return result;
}

Eigen::VectorXd bayes_scores(const EpisodeRecord& episode, const GenTables& tables,
                             const Lexicons& lex) {
  const GeneratorSpec& spec = tables.spec;
  const int total = spec.n_total_categories();
  std::vector<double> log_r(static_cast<std::size_t>(total), 0.0);   // secondary vs off
  std::vector<double> log_R(static_cast<std::size_t>(total), 0.0);   // principal vs off
  std::vector<double> log_A(static_cast<std::size_t>(total), 0.0);   // admission, principal only
  const double alpha = spec.secondary_attenuation;

  // Medications: per-drug Bernoulli presence ratio. Status is noise-only.
  if (!episode.medications.empty()) {
    std::unordered_set<std::string> have;
    for (const MedEntry& med : episode.medications) have.insert(med.drug_code);
    const double s = spec.strength[static_cast<int>(Modality::Medications)];
    const double q = spec.bg_drug_prob;
    for (const DrugTable& drug : tables.drugs) {
      if (drug.owner < 0) continue;
      const bool present = have.count(drug.code) > 0;
      const double p_off = clamp_prob(q);
      const double p_sec = clamp_prob(present_prob(q, s * alpha));
      const double p_pri = clamp_prob(present_prob(q, s));
      const std::size_t c = static_cast<std::size_t>(drug.owner);
      if (present) {
        log_r[c] += std::log(p_sec) - std::log(p_off);
        log_R[c] += std::log(p_pri) - std::log(p_off);
      } else {
        log_r[c] += std::log1p(-p_sec) - std::log1p(-p_off);
        log_R[c] += std::log1p(-p_pri) - std::log1p(-p_off);
      }
    }
  }

  // Labs: Gaussian likelihood ratios over the parsed numeric view.
  if (!episode.labs.empty()) {
    std::unordered_map<std::string, std::vector<double>> by_test;
    oracle_lab_values(episode, lex, by_test);
    const double s = spec.strength[static_cast<int>(Modality::Lab)];
    for (const LabTestTable& test : tables.tests) {
      if (test.owner < 0) continue;
      const auto it = by_test.find(test.id);
      if (it == by_test.end()) continue;
      const std::size_t c = static_cast<std::size_t>(test.owner);
      const double inv2s2 = 1.0 / (2.0 * test.sigma * test.sigma);
      for (double v : it->second) {
        const double d_off = v - test.mu;
        const double d_sec = v - test.mu - test.delta * s * alpha;
        const double d_pri = v - test.mu - test.delta * s;
        log_r[c] += (d_off * d_off - d_sec * d_sec) * inv2s2;
        log_R[c] += (d_off * d_off - d_pri * d_pri) * inv2s2;
      }
    }
  }

  // Radiology: per-token Bernoulli presence over the cleaned token union.
  if (!episode.reports.empty()) {
    std::string joined;
    for (const RadReport& report : episode.reports) {
      if (!joined.empty()) joined += ". ";
      joined += report.text;
    }
    const CleanedReport cleaned = clean_radiology_text(joined, lex);
    std::unordered_set<std::string> have;
    for (const auto& sentence : cleaned.sentences) {
      for (const std::string& tok : sentence) have.insert(tok);
    }
    const double s = spec.strength[static_cast<int>(Modality::Radiology)];
    const double q = spec.bg_token_prob;
    for (const TokenTable& tok : tables.tokens) {
      if (tok.owner < 0) continue;
      const bool present = have.count(tok.word) > 0;
      const double p_off = clamp_prob(q);
      const double p_sec = clamp_prob(present_prob(q, s * alpha));
      const double p_pri = clamp_prob(present_prob(q, s));
      const std::size_t c = static_cast<std::size_t>(tok.owner);
      if (present) {
        log_r[c] += std::log(p_sec) - std::log(p_off);
        log_R[c] += std::log(p_pri) - std::log(p_off);
      } else {
        log_r[c] += std::log1p(-p_sec) - std::log1p(-p_off);
        log_R[c] += std::log1p(-p_pri) - std::log1p(-p_off);
      }
    }
  }

  // Admission: age-bin and month preference of the principal.
  {
    const AdmissionFields fields =
        parse_admission(episode.admission.gender, episode.admission.birth_date,
                        episode.admission.admit_date, episode.admission.discharge_date,
                        spec.age_bin_edges);
    const auto bins = age_bin_ranges(spec.age_bin_edges, tables.max_age);
    const double planted = spec.strength[static_cast<int>(Modality::Admission)] *
                           spec.adm_concentration;
    const double n_ages = tables.max_age + 1;
    for (int c = 0; c < total; ++c) {
      const CategoryTable& cat = tables.categories[static_cast<std::size_t>(c)];
      const bool in_bin = fields.age_bin == cat.preferred_age_bin;
      const double len = bins[static_cast<std::size_t>(cat.preferred_age_bin)].len();
      const double p_age = planted * (in_bin ? 1.0 / len : 0.0) + (1.0 - planted) / n_ages;
      const double p_month = planted * (fields.admit_month == cat.preferred_month ? 1.0 : 0.0) +
                             (1.0 - planted) / 12.0;
      log_A[static_cast<std::size_t>(c)] =
          std::log(clamp_prob(p_age)) + std::log(clamp_prob(p_month));
    }
  }

  // Posterior assembly in the log domain.
  std::vector<double> log_B(static_cast<std::size_t>(total), 0.0);
  Eigen::VectorXd logits(total);
  for (int c = 0; c < total; ++c) {
    const std::size_t ci = static_cast<std::size_t>(c);
    const CategoryTable& cat = tables.categories[ci];
    if (cat.secondary_prob > 0.0) {
      log_B[ci] = logaddexp(std::log(cat.secondary_prob) + log_r[ci],
                            std::log1p(-cat.secondary_prob));
    }
    logits(c) = std::log(cat.prior) + log_A[ci] + log_R[ci] - log_B[ci];
  }
  const double max_logit = logits.maxCoeff();
  Eigen::VectorXd prinpost = (logits.array() - max_logit).exp();
  prinpost /= prinpost.sum();

  Eigen::VectorXd member(total);
  for (int c = 0; c < total; ++c) {
    const std::size_t ci = static_cast<std::size_t>(c);
    const CategoryTable& cat = tables.categories[ci];
    double q_sec = 0.0;
    if (cat.secondary_prob > 0.0) {
      q_sec = std::exp(std::log(cat.secondary_prob) + log_r[ci] - log_B[ci]);
    }
    member(c) = prinpost(c) + (1.0 - prinpost(c)) * q_sec;
    member(c) = std::min(std::max(member(c), 0.0), 1.0);
  }
  return member;
}

Eigen::VectorXd prior_scores(const GenTables& tables) {
  const int total = tables.spec.n_total_categories();
  Eigen::VectorXd scores(total);
  for (int c = 0; c < total; ++c) {
    const CategoryTable& cat = tables.categories[static_cast<std::size_t>(c)];
    scores(c) = cat.prior + (1.0 - cat.prior) * cat.secondary_prob;
  }
  return scores;
}

namespace {

void truth_rows(const std::vector<EpisodeRecord>& episodes, const GenTables& tables,
                Eigen::MatrixXd& truth, std::vector<int>& principal) {
  const int total = tables.spec.n_total_categories();
  std::unordered_map<std::string, int> index;
  for (int c = 0; c < total; ++c) {
    index[tables.categories[static_cast<std::size_t>(c)].name] = c;
  }
  truth.setZero(static_cast<Eigen::Index>(episodes.size()), total);
  principal.assign(episodes.size(), 0);
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    for (std::size_t k = 0; k < episodes[i].codes.size(); ++k) {
      const auto it = index.find(truncate_code(episodes[i].codes[k]));
      if (it == index.end()) {
        throw Error(Err::SchemaViolation,
                    "episode " + episodes[i].episode_id + " carries a code outside the tables");
      }
      truth(static_cast<Eigen::Index>(i), it->second) = 1.0;
      if (k == 0) principal[i] = it->second;
    }
  }
}

}  // namespace

metrics::EvalReport bayes_reference(const std::vector<EpisodeRecord>& episodes,
                                    const GenTables& tables, const Lexicons& lex) {
  if (episodes.empty()) throw Error(Err::EmptyDataset, "bayes_reference needs episodes");
  const int total = tables.spec.n_total_categories();
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(episodes.size()), total);
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    scores.row(static_cast<Eigen::Index>(i)) = bayes_scores(episodes[i], tables, lex).transpose();
  }
  Eigen::MatrixXd truth;
  std::vector<int> principal;
  truth_rows(episodes, tables, truth, principal);
  return metrics::evaluate_all(scores, truth, principal);
}

metrics::EvalReport prior_reference(const std::vector<EpisodeRecord>& episodes,
                                    const GenTables& tables) {
  if (episodes.empty()) throw Error(Err::EmptyDataset, "prior_reference needs episodes");
  const Eigen::VectorXd row = prior_scores(tables);
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(episodes.size()), row.size());
  scores.rowwise() = row.transpose();
  Eigen::MatrixXd truth;
  std::vector<int> principal;
  truth_rows(episodes, tables, truth, principal);
  return metrics::evaluate_all(scores, truth, principal);
}

void save_tables(const std::string& path, const GenTables& tables) {
  json j;
  j["schema_version"] = 1;
  j["spec"] = spec_to_json(tables.spec);
  j["max_age"] = tables.max_age;
  json cats = json::array();
  for (const CategoryTable& cat : tables.categories) {
    cats.push_back({{"name", cat.name},
                    {"prior", cat.prior},
                    {"secondary_prob", cat.secondary_prob},
                    {"drugs", cat.drugs},
                    {"tests", cat.tests},
                    {"tokens", cat.tokens},
                    {"preferred_age_bin", cat.preferred_age_bin},
                    {"preferred_month", cat.preferred_month}});
  }
  j["categories"] = std::move(cats);
  json drugs = json::array();
  for (const DrugTable& drug : tables.drugs) {
    drugs.push_back({{"code", drug.code}, {"owner", drug.owner}});
  }
  j["drugs"] = std::move(drugs);
  json tests = json::array();
  for (const LabTestTable& test : tables.tests) {
    tests.push_back({{"id", test.id},
                     {"owner", test.owner},
                     {"mu", test.mu},
                     {"delta", test.delta},
                     {"sigma", test.sigma},
                     {"appear_prob", test.appear_prob},
                     {"unit", test.unit}});
  }
  j["tests"] = std::move(tests);
  json tokens = json::array();
  for (const TokenTable& tok : tables.tokens) {
    tokens.push_back({{"word", tok.word}, {"owner", tok.owner}});
  }
  j["tokens"] = std::move(tokens);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Err::IoError, "cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(Err::IoError, "short write to " + path);
}

GenTables load_tables(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Err::MissingArtifact, path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(Err::IoError, path + ": " + e.what());
  }
  try {
    GenTables tables;
    tables.spec = j.at("spec").get<GeneratorSpec>();
    tables.max_age = j.at("max_age").get<int>();
    for (const json& cj : j.at("categories")) {
      CategoryTable cat;
      cat.name = cj.at("name").get<std::string>();
      cat.prior = cj.at("prior").get<double>();
      cat.secondary_prob = cj.at("secondary_prob").get<double>();
      cat.drugs = cj.at("drugs").get<std::vector<int>>();
      cat.tests = cj.at("tests").get<std::vector<int>>();
      cat.tokens = cj.at("tokens").get<std::vector<int>>();
      cat.preferred_age_bin = cj.at("preferred_age_bin").get<int>();
      cat.preferred_month = cj.at("preferred_month").get<int>();
      tables.categories.push_back(std::move(cat));
    }
    for (const json& dj : j.at("drugs")) {
      tables.drugs.push_back({dj.at("code").get<std::string>(), dj.at("owner").get<int>()});
    }
    for (const json& tj : j.at("tests")) {
      LabTestTable test;
      test.id = tj.at("id").get<std::string>();
      test.owner = tj.at("owner").get<int>();
      test.mu = tj.at("mu").get<double>();
      test.delta = tj.at("delta").get<double>();
      test.sigma = tj.at("sigma").get<double>();
      test.appear_prob = tj.at("appear_prob").get<double>();
      test.unit = tj.at("unit").get<std::string>();
      tables.tests.push_back(std::move(test));
    }
    for (const json& tj : j.at("tokens")) {
      tables.tokens.push_back({tj.at("word").get<std::string>(), tj.at("owner").get<int>()});
    }
    if (static_cast<int>(tables.categories.size()) != tables.spec.n_total_categories()) {
      throw Error(Err::SchemaViolation, path + ": category count disagrees with the spec");
    }
    return tables;
  } catch (const json::exception& e) {
    throw Error(Err::SchemaViolation, path + ": " + e.what());
  }
}

void save_synth_stats(const std::string& path, const SynthStats& stats) {
  json j{{"schema_version", 1},
         {"n_episodes", stats.n_episodes},
         {"n_inpatient", stats.n_inpatient},
         {"n_outpatient", stats.n_outpatient},
         {"mean_codes", stats.mean_codes},
         {"mean_codes_inpatient", stats.mean_codes_inpatient},
         {"mean_codes_outpatient", stats.mean_codes_outpatient},
         {"modality_present", stats.modality_present},
         {"lab_entries", stats.lab_entries},
         {"labs_rendered_plain", stats.labs_rendered_plain},
         {"labs_rendered_unit", stats.labs_rendered_unit},
         {"labs_rendered_range", stats.labs_rendered_range},
         {"fuzz_categorical", stats.fuzz_categorical},
         {"fuzz_plus_grade", stats.fuzz_plus_grade},
         {"fuzz_unparseable", stats.fuzz_unparseable},
         {"fuzz_empty", stats.fuzz_empty}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Err::IoError, "cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(Err::IoError, "short write to " + path);
}

std::string synth_stats_text(const SynthStats& stats, const GeneratorSpec& spec) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "episodes          %ld (%ld inpatient, %ld outpatient)\n",
                stats.n_episodes, stats.n_inpatient, stats.n_outpatient);
  os << line;
  std::snprintf(line, sizeof line,
                "codes per episode %.4f observed vs %.4f target (in %.4f, out %.4f)\n",
                stats.mean_codes, spec.mean_codes, stats.mean_codes_inpatient,
                stats.mean_codes_outpatient);
  os << line;
  std::snprintf(line, sizeof line,
                "modality present  lab %ld  medications %ld  radiology %ld  admission %ld\n",
                stats.modality_present[0], stats.modality_present[1], stats.modality_present[2],
                stats.modality_present[3]);
  os << line;
  std::snprintf(line, sizeof line, "lab entries       %ld (plain %ld, unit %ld, range %ld)\n",
                stats.lab_entries, stats.labs_rendered_plain, stats.labs_rendered_unit,
                stats.labs_rendered_range);
  os << line;
  std::snprintf(line, sizeof line,
                "fuzz entries      categorical %ld, plus-grade %ld, unparseable %ld, empty %ld\n",
                stats.fuzz_categorical, stats.fuzz_plus_grade, stats.fuzz_unparseable,
                stats.fuzz_empty);
  os << line;
  return os.str();
}

}  // namespace codex::synth
