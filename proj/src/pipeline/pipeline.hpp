#pragma once

#include <set>
#include <string>
#include <vector>

#include "pipeline/config.hpp"

// Stage runner over a work directory. Every artifact it writes embeds the
// producing config hash; loads refuse mismatched hashes and missing
// dependencies fail with MissingArtifact. A lock file serializes writers on
// the same work dir.

namespace codex::pipeline {

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  const PipelineConfig& config() const { return config_; }
  const std::string& hash() const { return hash_; }

  // Generates the corpus, tables, and Table 1-style stats report.
  void run_synth();

  // Vocabulary, split, encoder, feature matrices, ingest report.
  void run_prepare();

  // Parts: nets, ensemble, combined, confidence. Empty set = all configured
  // parts. Each part reloads its inputs from disk, so partial runs produce
  // byte-identical artifacts.
  void run_train(const std::set<std::string>& only = {});

  // EvalReports for ensemble / combined / averaging on the test split plus
  // the ablation table. Subset overrides replace the configured list.
  void run_evaluate(const std::vector<std::string>& subset_overrides = {});

  // Table 5-style scope table from the trained confidence model.
  void run_scope_report();

  // Scores a corpus file; one JSON record per episode with top-k categories,
  // principal, confidence, and the triage decision.
  void run_predict(const std::string& input_path, const std::string& output_path);

 private:
  std::string path(const std::string& rel) const;
  void write_meta(const std::string& rel) const;
  void check_meta(const std::string& rel) const;
  void save_model_file(const std::string& rel, const nn::MlpModel& model) const;
  nn::MlpModel load_model_file(const std::string& rel) const;
  models::SplitData load_split_data(Split s) const;

  PipelineConfig config_;
  std::string hash_;
  int lock_fd_ = -1;
};

}  // namespace codex::pipeline
