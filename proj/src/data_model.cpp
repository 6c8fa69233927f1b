#include "data_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "util/errors.hpp"
#include "util/hash.hpp"
#include "util/rng.hpp"
#include "util/text.hpp"

namespace codex {

using nlohmann::json;

std::string truncate_code(const std::string& code) {
  const auto bad = [&] {
    return Error(Err::MalformedCode, "'" + code + "' is not letter-digit-digit shaped");
  };
  if (code.size() < 3) throw bad();
  if (!std::isalpha(static_cast<unsigned char>(code[0])) ||
      !std::isdigit(static_cast<unsigned char>(code[1])) ||
      !std::isdigit(static_cast<unsigned char>(code[2])))
    throw bad();
  return to_upper(code.substr(0, 3));
}

namespace {

std::set<std::string> episode_categories(const EpisodeRecord& episode) {
  std::set<std::string> cats;
  for (const auto& code : episode.codes) cats.insert(truncate_code(code));
  return cats;
}

}  // namespace

CodeVocabulary build_code_vocab(const std::vector<EpisodeRecord>& episodes, int min_support) {
  if (episodes.empty()) throw Error(Err::EmptyDataset, "no episodes to build a vocabulary from");
  std::map<std::string, long> counts;
  for (const auto& ep : episodes)
    for (const auto& cat : episode_categories(ep)) counts[cat] += 1;

  CodeVocabulary vocab;
  for (const auto& [cat, count] : counts) {
    if (count < min_support) continue;
    vocab.index[cat] = static_cast<int>(vocab.categories.size());
    vocab.categories.push_back(cat);
    vocab.counts[cat] = count;
  }
  if (vocab.categories.empty())
    throw Error(Err::EmptyVocabulary,
                "no category reaches min_support=" + std::to_string(min_support));
  return vocab;
}

std::vector<std::string> unlabeled_episode_ids(const std::vector<EpisodeRecord>& episodes,
                                               const CodeVocabulary& vocab) {
  std::vector<std::string> ids;
  for (const auto& ep : episodes) {
    bool any = false;
    for (const auto& code : ep.codes)
      if (vocab.contains(truncate_code(code))) {
        any = true;
        break;
      }
    if (!any) ids.push_back(ep.episode_id);
  }
  return ids;
}

std::vector<EpisodeRecord> drop_unlabeled(std::vector<EpisodeRecord> episodes,
                                          const CodeVocabulary& vocab) {
  std::erase_if(episodes, [&](const EpisodeRecord& ep) {
    for (const auto& code : ep.codes)
      if (vocab.contains(truncate_code(code))) return false;
    return true;
  });
  return episodes;
}

LabelVector label_vector(const EpisodeRecord& episode, const CodeVocabulary& vocab) {
  LabelVector lv;
  lv.bits.assign(static_cast<std::size_t>(vocab.size()), 0);
  int principal = -1;
  for (const auto& code : episode.codes) {
    const auto it = vocab.index.find(truncate_code(code));
    if (it == vocab.index.end()) continue;
    lv.bits[static_cast<std::size_t>(it->second)] = 1;
    if (principal < 0) principal = it->second;  // first survivor is promoted
  }
  if (principal < 0)
    throw Error(Err::NoRetainedLabels, "episode '" + episode.episode_id +
                                           "' has no code left after vocabulary filtering");
  lv.principal_index = principal;
  return lv;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_name(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "dev") return Split::Dev;
  if (name == "test") return Split::Test;
  throw Error(Err::SchemaViolation, "unknown split name '" + std::string(name) + "'");
}

std::vector<std::size_t> SplitAssignment::indices_of(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

namespace {

std::array<std::size_t, 3> largest_remainder(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> quota{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = ratios[static_cast<std::size_t>(i)] * static_cast<double>(n);
    quota[static_cast<std::size_t>(i)] = static_cast<std::size_t>(std::floor(exact));
    frac[static_cast<std::size_t>(i)] = exact - std::floor(exact);
    assigned += quota[static_cast<std::size_t>(i)];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return frac[static_cast<std::size_t>(a)] > frac[static_cast<std::size_t>(b)];
  });
  for (std::size_t leftover = n - assigned, k = 0; k < leftover; ++k)
    quota[static_cast<std::size_t>(order[k % 3])] += 1;
  return quota;
}

}  // namespace

SplitAssignment stratified_split(const std::vector<EpisodeRecord>& episodes,
                                 const CodeVocabulary& vocab,
                                 const std::array<double, 3>& ratios, std::uint64_t seed) {
  double sum = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw Error(Err::BadRatios, "negative split ratio");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(Err::BadRatios, "split ratios must sum to 1");
  if (episodes.size() < 10)
    throw Error(Err::EmptyDataset, "need at least 10 episodes to split");

  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const LabelVector lv = label_vector(episodes[i], vocab);
    strata[vocab.categories[static_cast<std::size_t>(lv.principal_index)]].push_back(i);
  }
  // Pool strata too small to honor the ratios on their own. The pool key
  // cannot collide with a 3-character category name.
  static const std::string kPooled = "*pooled*";
  std::map<std::string, std::vector<std::size_t>> sized;
  for (auto& [cat, members] : strata) {
    auto& dst = members.size() < 10 ? sized[kPooled] : sized[cat];
    dst.insert(dst.end(), members.begin(), members.end());
  }

  SplitAssignment out;
  out.split.assign(episodes.size(), Split::Test);
  for (auto& [key, members] : sized) {
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return episodes[a].episode_id < episodes[b].episode_id;
    });
    Rng rng(derive_seed(seed, fnv1a64(key)));
    rng.shuffle(members);
    const auto quota = largest_remainder(members.size(), ratios);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < quota[0]; ++k) out.split[members[pos++]] = Split::Train;
    for (std::size_t k = 0; k < quota[1]; ++k) out.split[members[pos++]] = Split::Dev;
    for (std::size_t k = 0; k < quota[2]; ++k) out.split[members[pos++]] = Split::Test;
  }
  return out;
}

namespace {

json admission_to_json(const AdmissionRaw& adm) {
  json j;
  j["gender"] = adm.gender;
  j["birth_date"] = to_iso(adm.birth_date);
  j["admit_date"] = to_iso(adm.admit_date);
  if (adm.discharge_date) j["discharge_date"] = to_iso(*adm.discharge_date);
  return j;
}

const json& require(const json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end())
    throw Error(Err::SchemaViolation, where + ": missing field '" + key + "'");
  return *it;
}

Date date_from_json(const json& j, const std::string& where) {
  const std::string s = j.get<std::string>();
  const auto d = parse_date(s);
  if (!d) throw Error(Err::SchemaViolation, where + ": bad date '" + s + "'");
  return *d;
}

EpisodeRecord episode_from_json(const json& j, const std::string& where) {
  EpisodeRecord ep;
  ep.episode_id = require(j, "episode_id", where).get<std::string>();
  const std::string kind = require(j, "patient_kind", where).get<std::string>();
  if (kind == "inpatient")
    ep.patient_kind = PatientKind::Inpatient;
  else if (kind == "outpatient")
    ep.patient_kind = PatientKind::Outpatient;
  else
    throw Error(Err::SchemaViolation, where + ": unknown patient_kind '" + kind + "'");

  const json& adm = require(j, "admission", where);
  ep.admission.gender = require(adm, "gender", where).get<std::string>();
  ep.admission.birth_date = date_from_json(require(adm, "birth_date", where), where);
  ep.admission.admit_date = date_from_json(require(adm, "admit_date", where), where);
  if (adm.contains("discharge_date") && !adm["discharge_date"].is_null())
    ep.admission.discharge_date = date_from_json(adm["discharge_date"], where);

  for (const auto& lj : require(j, "labs", where)) {
    LabEntry e;
    e.test_id = require(lj, "test", where).get<std::string>();
    e.raw_value = require(lj, "value", where).get<std::string>();
    e.timestamp = lj.value("time", "");
    ep.labs.push_back(std::move(e));
  }
  for (const auto& mj : require(j, "medications", where)) {
    MedEntry e;
    e.drug_code = require(mj, "drug", where).get<std::string>();
    e.status = require(mj, "status", where).get<std::string>();
    ep.medications.push_back(std::move(e));
  }
  for (const auto& rj : require(j, "reports", where)) {
    RadReport r;
    r.text = require(rj, "text", where).get<std::string>();
    r.location = rj.value("location", "");
    r.position = rj.value("position", "");
    ep.reports.push_back(std::move(r));
  }
  for (const auto& cj : require(j, "codes", where)) ep.codes.push_back(cj.get<std::string>());
  if (ep.codes.empty()) throw Error(Err::SchemaViolation, where + ": empty code list");
  return ep;
}

}  // namespace

void save_corpus(const std::string& path, const std::vector<EpisodeRecord>& episodes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Err::IoError, "cannot open '" + path + "' for writing");
  for (const auto& ep : episodes) {
    json j;
    j["episode_id"] = ep.episode_id;
    j["patient_kind"] = ep.patient_kind == PatientKind::Inpatient ? "inpatient" : "outpatient";
    j["admission"] = admission_to_json(ep.admission);
    json labs = json::array();
    for (const auto& l : ep.labs)
      labs.push_back({{"test", l.test_id}, {"value", l.raw_value}, {"time", l.timestamp}});
    j["labs"] = std::move(labs);
    json meds = json::array();
    for (const auto& m : ep.medications)
      meds.push_back({{"drug", m.drug_code}, {"status", m.status}});
    j["medications"] = std::move(meds);
    json reports = json::array();
    for (const auto& r : ep.reports)
      reports.push_back({{"text", r.text}, {"location", r.location}, {"position", r.position}});
    j["reports"] = std::move(reports);
    j["codes"] = ep.codes;
    out << j.dump() << "\n";
  }
  if (!out) throw Error(Err::IoError, "write failed for '" + path + "'");
}

std::vector<EpisodeRecord> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Err::MissingArtifact, path);
  std::vector<EpisodeRecord> episodes;
  std::set<std::string> seen;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(Err::SchemaViolation, where + ": " + e.what());
    }
    EpisodeRecord ep = episode_from_json(j, where);
    if (!seen.insert(ep.episode_id).second)
      throw Error(Err::SchemaViolation, where + ": duplicate episode_id '" + ep.episode_id + "'");
    episodes.push_back(std::move(ep));
  }
  return episodes;
}

void save_vocab(const std::string& path, const CodeVocabulary& vocab) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Err::IoError, "cannot open '" + path + "' for writing");
  for (const auto& cat : vocab.categories) out << cat << "\t" << vocab.counts.at(cat) << "\n";
  if (!out) throw Error(Err::IoError, "write failed for '" + path + "'");
}

CodeVocabulary load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Err::MissingArtifact, path);
  CodeVocabulary vocab;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cols = split(trim(line), '\t');
    if (cols.size() != 2)
      throw Error(Err::SchemaViolation,
                  path + ":" + std::to_string(line_no) + ": need category<TAB>count");
    const std::string& cat = cols[0];
    if (!vocab.categories.empty() && !(vocab.categories.back() < cat))
      throw Error(Err::SchemaViolation, path + ": categories out of order at '" + cat + "'");
    vocab.index[cat] = static_cast<int>(vocab.categories.size());
    vocab.categories.push_back(cat);
    vocab.counts[cat] = std::stol(cols[1]);
  }
  if (vocab.categories.empty()) throw Error(Err::EmptyVocabulary, path + " holds no categories");
  return vocab;
}

void save_split_manifest(const std::string& path, const std::vector<EpisodeRecord>& episodes,
                         const SplitAssignment& assignment) {
  if (episodes.size() != assignment.split.size())
    throw Error(Err::ShapeMismatch, "assignment does not cover the corpus");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Err::IoError, "cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < episodes.size(); ++i)
    out << episodes[i].episode_id << "\t" << split_name(assignment.split[i]) << "\n";
  if (!out) throw Error(Err::IoError, "write failed for '" + path + "'");
}

std::map<std::string, Split> load_split_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Err::MissingArtifact, path);
  std::map<std::string, Split> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cols = split(trim(line), '\t');
    if (cols.size() != 2)
      throw Error(Err::SchemaViolation,
                  path + ":" + std::to_string(line_no) + ": need episode_id<TAB>split");
    if (!out.emplace(cols[0], split_from_name(cols[1])).second)
      throw Error(Err::SchemaViolation, path + ": duplicate episode_id '" + cols[0] + "'");
  }
  return out;
}

}  // namespace codex
