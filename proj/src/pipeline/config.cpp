#include "pipeline/config.hpp"

#include <algorithm>
#include <fstream>

#include "util/errors.hpp"
#include "util/hash.hpp"
#include "util/text.hpp"

namespace codex::pipeline {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, const json& reference) {
  if (!j.is_object()) throw Error(Err::BadConfig, where + " must be an object");
  for (const auto& item : j.items()) {
    if (!reference.contains(item.key())) {
      throw Error(Err::BadConfig, where + ": unknown key '" + item.key() + "'");
    }
  }
}

template <typename T>
T read(const json& j, const std::string& where, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(Err::BadConfig, where + "." + key + " has the wrong type");
  }
}

json prepare_to_json(const PrepareConfig& p) {
  return json{{"dim_per_sentence", p.dim_per_sentence},
              {"hash_seed", p.hash_seed},
              {"age_bin_edges", p.age_bin_edges},
              {"min_support", p.min_support},
              {"split_ratios", p.split_ratios},
              {"split_seed", p.split_seed},
              {"lexicon_dir", p.lexicon_dir}};
}

json train_to_json(const TrainSection& t) {
  return json{{"lab_hidden", t.modality_hidden[0]},
              {"medications_hidden", t.modality_hidden[1]},
              {"radiology_hidden", t.modality_hidden[2]},
              {"admission_hidden", t.modality_hidden[3]},
              {"ensemble_hidden", t.ensemble_hidden},
              {"ensemble_dropout", t.ensemble_dropout},
              {"mask_prob", t.mask_prob},
              {"combined_hidden", t.combined_hidden},
              {"combined_dropout", t.combined_dropout},
              {"confidence_hidden", t.confidence_hidden},
              {"confidence_folds", t.confidence_folds},
              {"confidence", t.confidence},
              {"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate},
              {"max_epochs", t.max_epochs},
              {"patience", t.patience},
              {"seed", t.seed}};
}

json evaluate_to_json(const EvaluateConfig& e) {
  return json{{"threshold", e.threshold},
              {"scopes", e.scopes},
              {"triage_scope", e.triage_scope},
              {"ablation_subsets", e.ablation_subsets},
              {"top_k", e.top_k}};
}

}  // namespace

json config_to_json(const PipelineConfig& config) {
  json synth_j;
  synth::to_json(synth_j, config.synth);
  return json{{"schema_version", config.schema_version},
              {"work_dir", config.work_dir},
              {"synth", synth_j},
              {"prepare", prepare_to_json(config.prepare)},
              {"train", train_to_json(config.train)},
              {"evaluate", evaluate_to_json(config.evaluate)}};
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig config;
  const json reference = config_to_json(config);
  check_keys(j, "config", reference);

  const int version = read(j, "config", "schema_version", config.schema_version);
  if (version != 1) {
    throw Error(Err::BadConfig, "unsupported schema_version " + std::to_string(version));
  }
  config.work_dir = read(j, "config", "work_dir", config.work_dir);

  if (j.contains("synth")) {
    check_keys(j.at("synth"), "synth", reference.at("synth"));
    try {
      synth::from_json(j.at("synth"), config.synth);
    } catch (const json::exception& e) {
      throw Error(Err::BadConfig, std::string("synth: ") + e.what());
    }
  }

  if (j.contains("prepare")) {
    const json& p = j.at("prepare");
    check_keys(p, "prepare", reference.at("prepare"));
    PrepareConfig& out = config.prepare;
    out.dim_per_sentence = read(p, "prepare", "dim_per_sentence", out.dim_per_sentence);
    out.hash_seed = read(p, "prepare", "hash_seed", out.hash_seed);
    out.age_bin_edges = read(p, "prepare", "age_bin_edges", out.age_bin_edges);
    out.min_support = read(p, "prepare", "min_support", out.min_support);
    out.split_ratios = read(p, "prepare", "split_ratios", out.split_ratios);
    out.split_seed = read(p, "prepare", "split_seed", out.split_seed);
    out.lexicon_dir = read(p, "prepare", "lexicon_dir", out.lexicon_dir);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train", reference.at("train"));
    TrainSection& out = config.train;
    out.modality_hidden[0] = read(t, "train", "lab_hidden", out.modality_hidden[0]);
    out.modality_hidden[1] = read(t, "train", "medications_hidden", out.modality_hidden[1]);
    out.modality_hidden[2] = read(t, "train", "radiology_hidden", out.modality_hidden[2]);
    out.modality_hidden[3] = read(t, "train", "admission_hidden", out.modality_hidden[3]);
    out.ensemble_hidden = read(t, "train", "ensemble_hidden", out.ensemble_hidden);
    out.ensemble_dropout = read(t, "train", "ensemble_dropout", out.ensemble_dropout);
    out.mask_prob = read(t, "train", "mask_prob", out.mask_prob);
    out.combined_hidden = read(t, "train", "combined_hidden", out.combined_hidden);
    out.combined_dropout = read(t, "train", "combined_dropout", out.combined_dropout);
    out.confidence_hidden = read(t, "train", "confidence_hidden", out.confidence_hidden);
    out.confidence_folds = read(t, "train", "confidence_folds", out.confidence_folds);
    out.confidence = read(t, "train", "confidence", out.confidence);
    out.batch_size = read(t, "train", "batch_size", out.batch_size);
    out.learning_rate = read(t, "train", "learning_rate", out.learning_rate);
    out.max_epochs = read(t, "train", "max_epochs", out.max_epochs);
    out.patience = read(t, "train", "patience", out.patience);
    out.seed = read(t, "train", "seed", out.seed);
  }

  if (j.contains("evaluate")) {
    const json& e = j.at("evaluate");
    check_keys(e, "evaluate", reference.at("evaluate"));
    EvaluateConfig& out = config.evaluate;
    out.threshold = read(e, "evaluate", "threshold", out.threshold);
    out.scopes = read(e, "evaluate", "scopes", out.scopes);
    out.triage_scope = read(e, "evaluate", "triage_scope", out.triage_scope);
    out.ablation_subsets = read(e, "evaluate", "ablation_subsets", out.ablation_subsets);
    out.top_k = read(e, "evaluate", "top_k", out.top_k);
  }

  config.validate();
  return config;
}

PipelineConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Err::MissingArtifact, "config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(Err::BadConfig, path + ": " + e.what());
  }
  return config_from_json(j);
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Err::BadConfig, msg); };
  if (work_dir.empty()) fail("work_dir must not be empty");
  synth.validate();
  if (prepare.dim_per_sentence < 1) fail("prepare.dim_per_sentence must be >= 1");
  if (prepare.min_support < 1) fail("prepare.min_support must be >= 1");
  double ratio_sum = 0.0;
  for (double r : prepare.split_ratios) {
    if (r < 0.0) fail("prepare.split_ratios must be non-negative");
    ratio_sum += r;
  }
  if (std::abs(ratio_sum - 1.0) > 1e-9) fail("prepare.split_ratios must sum to 1");
  for (std::size_t i = 0; i < prepare.age_bin_edges.size(); ++i) {
    if (i > 0 && prepare.age_bin_edges[i] <= prepare.age_bin_edges[i - 1]) {
      fail("prepare.age_bin_edges must be strictly increasing");
    }
  }
  train_config().validate();
  for (const auto& dims : train.modality_hidden) {
    if (dims.empty()) fail("every modality needs at least one hidden layer");
    for (int d : dims) {
      if (d < 1) fail("hidden layer sizes must be >= 1");
    }
  }
  if (train.combined_hidden.empty()) fail("train.combined_hidden must not be empty");
  if (!(train.mask_prob >= 0.0 && train.mask_prob < 1.0)) {
    fail("train.mask_prob must be in [0, 1)");
  }
  if (!(train.ensemble_dropout >= 0.0 && train.ensemble_dropout < 1.0) ||
      !(train.combined_dropout >= 0.0 && train.combined_dropout < 1.0)) {
    fail("dropout rates must be in [0, 1)");
  }
  if (train.confidence_folds < 2) fail("train.confidence_folds must be >= 2");
  if (!(evaluate.threshold > 0.0 && evaluate.threshold < 1.0)) {
    fail("evaluate.threshold must be in (0, 1)");
  }
  if (evaluate.scopes.empty()) fail("evaluate.scopes must not be empty");
  for (std::size_t i = 0; i < evaluate.scopes.size(); ++i) {
    const double s = evaluate.scopes[i];
    if (!(s > 0.0 && s <= 1.0)) fail("evaluate.scopes entries must be in (0, 1]");
    if (i > 0 && s <= evaluate.scopes[i - 1]) fail("evaluate.scopes must be ascending");
  }
  if (train.confidence) {
    const bool listed = std::any_of(evaluate.scopes.begin(), evaluate.scopes.end(),
                                    [&](double s) {
                                      return std::abs(s - evaluate.triage_scope) < 1e-12;
                                    });
    if (!listed) fail("evaluate.triage_scope must appear in evaluate.scopes");
  }
  if (evaluate.top_k < 1) fail("evaluate.top_k must be >= 1");
  for (const std::string& name : evaluate.ablation_subsets) {
    parse_subset(name);  // throws on malformed entries
  }
}

nn::TrainConfig PipelineConfig::train_config() const {
  nn::TrainConfig tc;
  tc.batch_size = train.batch_size;
  tc.learning_rate = train.learning_rate;
  tc.max_epochs = train.max_epochs;
  tc.patience = train.patience;
  tc.seed = train.seed;
  return tc;
}

models::StackConfig PipelineConfig::stack_config() const {
  models::StackConfig cfg;
  cfg.modality_hidden = train.modality_hidden;
  cfg.ensemble_hidden = train.ensemble_hidden;
  cfg.ensemble_dropout = train.ensemble_dropout;
  cfg.mask_prob = train.mask_prob;
  cfg.train = train_config();
  return cfg;
}

FeatureConfig PipelineConfig::feature_config() const {
  FeatureConfig fc;
  fc.dim_per_sentence = prepare.dim_per_sentence;
  fc.hash_seed = prepare.hash_seed;
  fc.age_bin_edges = prepare.age_bin_edges;
  return fc;
}

std::string config_hash(const PipelineConfig& config) {
  return hex16(fnv1a64(config_to_json(config).dump()));
}

std::set<Modality> parse_subset(const std::string& names) {
  std::set<Modality> subset;
  for (const std::string& part : split(names, '+')) {
    const std::string token{trim(part)};
    if (token.empty()) throw Error(Err::BadConfig, "empty modality in subset '" + names + "'");
    subset.insert(modality_from_name(token));
  }
  if (subset.empty()) throw Error(Err::BadConfig, "empty modality subset");
  return subset;
}

std::string subset_name(const std::set<Modality>& subset) {
  std::string name;
  for (Modality m : kAllModalities) {
    if (!subset.count(m)) continue;
    if (!name.empty()) name += '+';
    name += std::string(modality_name(m));
  }
  return name;
}

}  // namespace codex::pipeline
