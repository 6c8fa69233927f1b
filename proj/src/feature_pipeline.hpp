#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "clinical_parsers.hpp"
#include "data_model.hpp"

// Fixed-width per-modality feature encoding. All normalization statistics
// are fit on the training split only; encoders are pure after fitting.
// Values are computed in double precision and rounded to f32 on creation so
// in-memory vectors match what the feature dump files reload.

namespace codex {

enum class Modality { Lab, Medications, Radiology, Admission };

inline constexpr std::array<Modality, 4> kAllModalities = {
    Modality::Lab, Modality::Medications, Modality::Radiology, Modality::Admission};

std::string_view modality_name(Modality m);
Modality modality_from_name(std::string_view name);  // throws UnknownModality

struct FeatureConfig {
  int dim_per_sentence = 48;       // width of each hashed sentence block
  std::uint64_t hash_seed = 1;     // hash family member for feature hashing
  std::vector<int> age_bin_edges = {1, 5, 18, 40, 65, 80};

  int n_age_bins() const { return static_cast<int>(age_bin_edges.size()) + 1; }
};

struct ModalityVector {
  Modality modality = Modality::Lab;
  Eigen::VectorXf values;
  bool present = false;
};

struct LabTestStats {
  double log_min = 0.0;
  double log_max = 0.0;
  double count_log_max = 0.0;  // log1p of the largest per-episode count in train
};

struct LabNormStats {
  std::map<std::string, LabTestStats> per_test;  // keys define the test universe
  std::string fitted_on = "train";
};

// Parse failures dropped from aggregation, tallied here.
struct IngestCounts {
  long lab_values_total = 0;
  long lab_values_empty = 0;
  long lab_values_unparseable = 0;
};

std::vector<std::pair<std::string, ParsedLabValue>> parse_episode_labs(
    const EpisodeRecord& episode, const Lexicons& lex, IngestCounts* counts = nullptr);

// log1p-domain min/max and count max per test over the fitting episodes;
// tests without any numeric contribution are left out of the universe.
// Throws NoNumericValues when nothing can be fit.
LabNormStats fit_lab_stats(const std::vector<EpisodeRecord>& episodes, const Lexicons& lex,
                           const std::string& fitted_on = "train");

// 3 channels per universe test, ordered (count, min, max) per test in
// lexicographic test order. Min/max channels clamp to [0,1]; a degenerate
// train range maps to 0.5; the count channel may exceed 1 when a count tops
// the train maximum.
ModalityVector encode_lab(const EpisodeRecord& episode, const LabNormStats& stats,
                          const Lexicons& lex, IngestCounts* counts = nullptr);

// Five signed-feature-hash sentence blocks (L2-normalized when non-zero)
// followed by location and position one-hots over the lexicons.
ModalityVector embed_report(const CleanedReport& report, int dim_per_sentence,
                            std::uint64_t seed, const Lexicons& lex);

struct DrugVocabulary {
  std::vector<std::string> drugs;  // lexicographic
  std::map<std::string, int> index;

  int size() const { return static_cast<int>(drugs.size()); }
};

// Distinct normalized (non-cancelled) drug codes over the fitting episodes.
DrugVocabulary build_drug_vocab(const std::vector<EpisodeRecord>& episodes, const Lexicons& lex);

// Multi-hot over the vocabulary; out-of-vocab drugs ignored; empty set means
// present=false.
ModalityVector encode_medications(const std::set<std::string>& drugs,
                                  const DrugVocabulary& vocab);

struct AdmissionStats {
  double los_log_max = 0.0;  // log1p of the largest train length of stay
  int year_min = 0;
  int year_max = 0;
  std::string fitted_on = "train";
};

AdmissionStats fit_admission_stats(const std::vector<EpisodeRecord>& episodes,
                                   const std::string& fitted_on = "train");

// [gender, age-bin one-hot, los, day sin/cos, month sin/cos, year]; cyclic
// pairs are rescaled from [-1,1] to [0,1] so every channel lies in [0,1].
ModalityVector encode_admission(const AdmissionFields& fields, const AdmissionStats& stats,
                                const FeatureConfig& config);

// Everything needed to encode an episode, fit once on the training split.
class EpisodeEncoder {
 public:
  static EpisodeEncoder fit(const std::vector<EpisodeRecord>& train_episodes,
                            const FeatureConfig& config, const Lexicons& lex);

  std::array<ModalityVector, 4> encode(const EpisodeRecord& episode,
                                       IngestCounts* counts = nullptr) const;
  ModalityVector encode_one(const EpisodeRecord& episode, Modality m,
                            IngestCounts* counts = nullptr) const;

  int dim(Modality m) const;
  const FeatureConfig& config() const { return config_; }
  const Lexicons& lexicons() const { return lexicons_; }
  const LabNormStats& lab_stats() const { return lab_stats_; }
  const AdmissionStats& admission_stats() const { return admission_stats_; }
  const DrugVocabulary& drug_vocab() const { return drug_vocab_; }

  void save(const std::string& path) const;  // self-contained JSON, lexicons embedded
  static EpisodeEncoder load(const std::string& path);

 private:
  FeatureConfig config_;
  Lexicons lexicons_;
  LabNormStats lab_stats_;
  AdmissionStats admission_stats_;
  DrugVocabulary drug_vocab_;
};

// Feature dump: textual header (n_rows, n_cols, modality, config hash) over
// row-major f32 values plus a parallel presence row.
struct FeatureMatrix {
  Modality modality = Modality::Lab;
  Eigen::MatrixXf values;   // one row per episode
  Eigen::VectorXf present;  // 0/1 per episode
  std::string config_hash;
};

void save_feature_matrix(const std::string& path, const FeatureMatrix& m);
FeatureMatrix load_feature_matrix(const std::string& path);

}  // namespace codex
