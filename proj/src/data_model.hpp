#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "util/dates.hpp"

// Episode corpus representation: raw per-episode payloads, the 3-character
// code vocabulary with support filtering, label vectors, and the stratified
// train/dev/test split.

namespace codex {

enum class PatientKind { Inpatient, Outpatient };

struct LabEntry {
  std::string test_id;
  std::string raw_value;
  std::string timestamp;
};

struct MedEntry {
  std::string drug_code;
  std::string status;
};

struct RadReport {
  std::string text;
  std::string location;  // explicit exam fields; may be empty
  std::string position;
};

struct AdmissionRaw {
  std::string gender;
  Date birth_date;
  Date admit_date;
  std::optional<Date> discharge_date;  // absent for outpatient visits
};

struct EpisodeRecord {
  std::string episode_id;
  PatientKind patient_kind = PatientKind::Inpatient;
  std::vector<LabEntry> labs;
  std::vector<MedEntry> medications;
  std::vector<RadReport> reports;
  AdmissionRaw admission;
  std::vector<std::string> codes;  // full codes, first entry is the principal
};

// Uppercase first three characters; requires letter-digit-digit shape and
// length >= 3, else MalformedCode.
std::string truncate_code(const std::string& code);

struct CodeVocabulary {
  std::vector<std::string> categories;  // lexicographic
  std::map<std::string, int> index;
  std::map<std::string, long> counts;  // corpus-wide episode counts pre-split

  int size() const { return static_cast<int>(categories.size()); }
  bool contains(const std::string& category) const { return index.count(category) > 0; }
};

// Counts each category once per episode (set semantics), filters below
// min_support, orders lexicographically. Throws EmptyVocabulary when nothing
// survives, EmptyDataset for an empty corpus.
CodeVocabulary build_code_vocab(const std::vector<EpisodeRecord>& episodes, int min_support = 3);

// Episodes whose entire code list was filtered away; the caller drops them
// and reports the count.
std::vector<std::string> unlabeled_episode_ids(const std::vector<EpisodeRecord>& episodes,
                                               const CodeVocabulary& vocab);
std::vector<EpisodeRecord> drop_unlabeled(std::vector<EpisodeRecord> episodes,
                                          const CodeVocabulary& vocab);

struct LabelVector {
  std::vector<std::uint8_t> bits;
  int principal_index = 0;
};

// Multi-hot labels over the vocabulary. When the principal category was
// filtered, the first surviving code in episode order is promoted to
// principal. Throws NoRetainedLabels when no code survives.
LabelVector label_vector(const EpisodeRecord& episode, const CodeVocabulary& vocab);

enum class Split { Train, Dev, Test };

std::string_view split_name(Split s);
Split split_from_name(std::string_view name);  // throws SchemaViolation

struct SplitAssignment {
  std::vector<Split> split;  // parallel to the episode vector it was built from

  std::vector<std::size_t> indices_of(Split s) const;
};

// Stratifies on the (promoted) principal category; strata under 10 episodes
// are pooled. Within each stratum episodes are ordered by id, shuffled with a
// stratum-specific seeded stream, and cut by largest-remainder quotas.
// Throws BadRatios unless ratios are non-negative and sum to 1; EmptyDataset
// for corpora under 10 episodes.
SplitAssignment stratified_split(const std::vector<EpisodeRecord>& episodes,
                                 const CodeVocabulary& vocab,
                                 const std::array<double, 3>& ratios, std::uint64_t seed);

// Corpus file: one JSON episode per line (schema in docs/formats.md).
void save_corpus(const std::string& path, const std::vector<EpisodeRecord>& episodes);
std::vector<EpisodeRecord> load_corpus(const std::string& path);

// Vocabulary file: category<TAB>count per line, lexicographic order.
void save_vocab(const std::string& path, const CodeVocabulary& vocab);
CodeVocabulary load_vocab(const std::string& path);

// Split manifest: episode_id<TAB>{train|dev|test} per line, corpus order.
void save_split_manifest(const std::string& path, const std::vector<EpisodeRecord>& episodes,
                         const SplitAssignment& assignment);
std::map<std::string, Split> load_split_manifest(const std::string& path);

}  // namespace codex
