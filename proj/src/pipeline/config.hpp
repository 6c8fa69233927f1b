#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "feature_pipeline.hpp"
#include "json.hpp"
#include "models.hpp"
#include "neural_core.hpp"
#include "synthgen.hpp"

// One config file fully determines a pipeline run. Parsing is strict
// (unknown keys are rejected) and the canonical serialization of the parsed
// config is hashed; every artifact embeds that hash.

namespace codex::pipeline {

struct PrepareConfig {
  int dim_per_sentence = 48;
  std::uint64_t hash_seed = 1;
  std::vector<int> age_bin_edges = {1, 5, 18, 40, 65, 80};
  int min_support = 3;
  std::array<double, 3> split_ratios = {0.7, 0.1, 0.2};
  std::uint64_t split_seed = 7;
  std::string lexicon_dir;  // empty = built-in lexicons
};

struct TrainSection {
  std::array<std::vector<int>, 4> modality_hidden = {
      {{96}, {96}, {96, 48}, {32}}};          // lab, medications, radiology, admission
  std::vector<int> ensemble_hidden;           // empty = one layer of |vocab| units
  double ensemble_dropout = 0.0;
  double mask_prob = 0.15;
  std::vector<int> combined_hidden = {96, 48};  // largest modality budget
  double combined_dropout = 0.30;
  std::vector<int> confidence_hidden = {64};
  int confidence_folds = 5;
  bool confidence = true;
  int batch_size = 256;
  double learning_rate = 1e-3;
  int max_epochs = 60;
  int patience = 5;
  std::uint64_t seed = 11;
};

struct EvaluateConfig {
  double threshold = 0.5;
  std::vector<double> scopes = {0.03, 0.1, 0.2, 0.3, 0.5, 1.0};
  double triage_scope = 0.2;
  std::vector<std::string> ablation_subsets = {"medications", "lab+medications+radiology",
                                               "lab+medications+radiology+admission"};
  int top_k = 10;
};

struct PipelineConfig {
  int schema_version = 1;
  std::string work_dir = "work";
  synth::GeneratorSpec synth;
  PrepareConfig prepare;
  TrainSection train;
  EvaluateConfig evaluate;

  void validate() const;  // throws BadConfig / SpecInvalid

  nn::TrainConfig train_config() const;
  models::StackConfig stack_config() const;
  FeatureConfig feature_config() const;
};

// Canonical, fully populated serialization; key order is sorted, so the
// dump is stable and hashable.
nlohmann::json config_to_json(const PipelineConfig& config);

// Strict parse: unknown keys and type mismatches raise BadConfig;
// schema_version must be 1. Absent keys keep their defaults.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config_file(const std::string& path);

// 16 hex chars over the canonical dump.
std::string config_hash(const PipelineConfig& config);

// "lab+medications" <-> {Lab, Medications}; canonical order is the Modality
// enum order. Throws UnknownModality / BadConfig.
std::set<Modality> parse_subset(const std::string& names);
std::string subset_name(const std::set<Modality>& subset);

}  // namespace codex::pipeline
