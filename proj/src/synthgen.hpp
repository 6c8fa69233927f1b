#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "clinical_parsers.hpp"
#include "data_model.hpp"
#include "feature_pipeline.hpp"
#include "json.hpp"
#include "metrics.hpp"

// Synthetic corpus generator with planted, quantifiable modality->code
// signal. The generative process is factorized so the exact label posterior
// is available in closed form (bayes_scores): the label set is a categorical
// principal plus independent per-category Bernoulli secondaries; every
// emitted item (drug, lab test, radiology token) is owned by at most one
// category; admission signal attaches to the principal only; all noise is
// label-independent. Payload-empty always means "modality dropped": every
// non-dropped medication list carries a baseline drug and every non-dropped
// lab list a baseline test.

namespace codex::synth {

struct GeneratorSpec {
  long n_episodes = 5000;
  int n_categories = 50;  // regular categories; rare ones come on top
  int n_rare = 2;         // below-min-support categories exercising filtering
  double rare_prior = 3e-4;
  double zipf_exponent = 1.0;
  double mean_codes = 3.43;
  double secondary_attenuation = 0.7;  // emission multiplier for secondary slots

  // Indexed by feature_pipeline::Modality order.
  std::array<double, 4> strength = {1.0, 1.0, 1.0, 1.0};
  std::array<double, 4> modality_dropout = {0.0, 0.0, 0.0, 0.0};  // admission must be 0

  int drugs_per_category = 4;
  int tests_per_category = 2;
  int tokens_per_category = 3;
  int n_noise_drugs = 40;
  int n_noise_tests = 10;
  int n_noise_tokens = 40;

  double bg_drug_prob = 0.03;          // off-state / noise drug presence
  double signal_test_appear_prob = 0.65;
  double noise_test_appear_prob = 0.30;
  double bg_token_prob = 0.04;
  double adm_concentration = 0.8;      // fraction of admission draws planted at strength 1
  double outpatient_fraction = 0.25;
  double fuzz_rate = 0.08;             // per-episode rate of each messy-lab fuzz kind
  double noise_drug_cancel_rate = 0.2;

  std::vector<int> age_bin_edges = {1, 5, 18, 40, 65, 80};
  std::uint64_t seed = 1;

  void validate() const;  // throws SpecInvalid
  int n_total_categories() const { return n_categories + n_rare; }
};

void to_json(nlohmann::json& j, const GeneratorSpec& spec);
void from_json(const nlohmann::json& j, GeneratorSpec& spec);

struct CategoryTable {
  std::string name;  // 3-character code category
  double prior = 0.0;
  double secondary_prob = 0.0;
  std::vector<int> drugs;   // indices into GenTables::drugs
  std::vector<int> tests;
  std::vector<int> tokens;
  int preferred_age_bin = 0;
  int preferred_month = 1;
};

struct DrugTable {
  std::string code;
  int owner = -1;  // -1 = background-only
};

struct LabTestTable {
  std::string id;
  int owner = -1;
  double mu = 0.0;
  double delta = 0.0;  // additive shift at full strength
  double sigma = 1.0;
  double appear_prob = 0.0;
  std::string unit;
};

struct TokenTable {
  std::string word;
  int owner = -1;
};

struct GenTables {
  GeneratorSpec spec;
  std::vector<CategoryTable> categories;
  std::vector<DrugTable> drugs;
  std::vector<LabTestTable> tests;
  std::vector<TokenTable> tokens;
  int max_age = 99;

  int category_index(const std::string& name) const;  // -1 when absent
};

struct SynthStats {
  long n_episodes = 0;
  long n_inpatient = 0;
  long n_outpatient = 0;
  double mean_codes = 0.0;
  double mean_codes_inpatient = 0.0;
  double mean_codes_outpatient = 0.0;
  std::array<long, 4> modality_present = {0, 0, 0, 0};
  long lab_entries = 0;
  long labs_rendered_plain = 0;
  long labs_rendered_unit = 0;
  long labs_rendered_range = 0;
  long fuzz_categorical = 0;
  long fuzz_plus_grade = 0;
  long fuzz_unparseable = 0;
  long fuzz_empty = 0;
};

struct SynthResult {
  std::vector<EpisodeRecord> episodes;
  GenTables tables;
  SynthStats stats;
};

GenTables build_tables(const GeneratorSpec& spec);
SynthResult generate_corpus(const GeneratorSpec& spec);

void save_tables(const std::string& path, const GenTables& tables);
GenTables load_tables(const std::string& path);

void save_synth_stats(const std::string& path, const SynthStats& stats);
std::string synth_stats_text(const SynthStats& stats, const GeneratorSpec& spec);

// Exact membership posterior P(category in label set | payload) per
// generator category, conditioning on the same parsed view the pipeline
// sees. `lex` supplies the lab-value and radiology cleanup rules.
Eigen::VectorXd bayes_scores(const EpisodeRecord& episode, const GenTables& tables,
                             const Lexicons& lex);

// Label-frequency ranking: P(category in label set) under the prior alone.
Eigen::VectorXd prior_scores(const GenTables& tables);

// Evaluates the posterior (or the prior baseline) against the generated
// truth over all generator categories.
metrics::EvalReport bayes_reference(const std::vector<EpisodeRecord>& episodes,
                                    const GenTables& tables, const Lexicons& lex);
metrics::EvalReport prior_reference(const std::vector<EpisodeRecord>& episodes,
                                    const GenTables& tables);

}  // namespace codex::synth
