#pragma once

#include <Eigen/Core>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "data_model.hpp"
#include "feature_pipeline.hpp"
#include "neural_core.hpp"

// The stacked architecture: four modality networks whose score vectors (plus
// presence flags) feed a meta-network, the Combined and Averaging baselines,
// and the confidence regressor with scope-based triage.

namespace codex::models {

// One data split with row-aligned per-modality features and labels.
struct SplitData {
  std::array<Eigen::MatrixXf, 4> features;  // Modality order; rows = episodes
  std::array<Eigen::VectorXf, 4> present;   // 0/1 per row
  Eigen::MatrixXf labels;                   // rows = episodes, cols = |vocab|
  std::vector<int> principal;               // vocab index per row
  std::vector<std::string> episode_ids;

  long n_rows() const { return labels.rows(); }
  int n_labels() const { return static_cast<int>(labels.cols()); }
  int feature_dim() const;   // sum of modality widths
  void validate() const;     // throws ShapeMismatch on misalignment
};

// Treats modalities outside `subset` as absent everywhere: zero features,
// zero presence. Used by the ablation table.
SplitData mask_to_subset(SplitData split, const std::set<Modality>& subset);

// Paper-shaped per-modality dropout (lab 0.3, medications 0.35, radiology
// 0.25, admission 0.35), one rate per hidden layer.
std::vector<double> default_modality_dropout(Modality m, int n_hidden);

// Sigmoid multi-label head over the given hidden stack; empty `dropout`
// falls back to the modality default.
nn::NetworkSpec modality_net_spec(Modality m, int input_dim, int n_labels,
                                  std::vector<int> hidden_dims,
                                  std::vector<double> dropout = {});

// Trains one modality network on the rows where the modality is present;
// rows missing it are excluded rather than fed as zeros. Throws EmptyDataset
// when no row has the modality.
nn::MlpModel train_modality_net(Modality m, const SplitData& train, const SplitData& dev,
                                const nn::NetworkSpec& shape, const nn::TrainConfig& config);

// Scores every row; absent rows come back all-zero.
Eigen::MatrixXf modality_scores(const nn::MlpModel& net, const Eigen::MatrixXf& features,
                                const Eigen::VectorXf& present);

// [lab | medications | radiology | admission | 4 presence flags]; raw
// probabilities, zeros for absent modalities. The order is part of the
// contract.
Eigen::VectorXf assemble_ensemble_input(const std::array<Eigen::VectorXf, 4>& scores,
                                        const std::array<bool, 4>& present, int n_labels);

// Assembled inputs for a whole split, one row per episode.
Eigen::MatrixXf ensemble_inputs(const std::map<Modality, nn::MlpModel>& nets,
                                const SplitData& split);

// Trains the meta-network over frozen modality models. Each training row is
// duplicated once with present modalities independently masked (zero block,
// zero flag) so the meta-network sees absence patterns. Empty hidden_dims
// defaults to a single hidden layer of |vocab| units.
nn::MlpModel train_ensemble(const std::map<Modality, nn::MlpModel>& nets,
                            const SplitData& train, const SplitData& dev,
                            std::vector<int> hidden_dims, double dropout, double mask_prob,
                            const nn::TrainConfig& config);

// Baseline: one network over the stacked feature vector of all modalities.
Eigen::MatrixXf combined_inputs(const SplitData& split);
nn::MlpModel train_combined(const SplitData& train, const SplitData& dev,
                            std::vector<int> hidden_dims, double dropout,
                            const nn::TrainConfig& config);

// Baseline: unweighted mean of the present modalities' score vectors.
// Throws AllAbsent when a record has no modality at all.
Eigen::VectorXf averaging_baseline(const std::array<Eigen::VectorXf, 4>& scores,
                                   const std::array<bool, 4>& present);
Eigen::MatrixXf averaging_scores(const std::map<Modality, nn::MlpModel>& nets,
                                 const SplitData& split);

// 1 - Jaccard between the thresholded prediction set and the true set;
// both-empty counts as perfect (0).
double discrepancy(const Eigen::VectorXf& scores, const Eigen::VectorXf& truth,
                   double threshold = 0.5);

// Hidden sizes for the full stack; empty ensemble_hidden defaults to |vocab|.
struct StackConfig {
  std::array<std::vector<int>, 4> modality_hidden;
  std::array<std::vector<double>, 4> modality_dropout;  // empty entry = default
  std::vector<int> ensemble_hidden;
  double ensemble_dropout = 0.0;
  double mask_prob = 0.15;
  nn::TrainConfig train;  // per-model seeds are derived from train.seed
};

struct TrainedStack {
  std::map<Modality, nn::MlpModel> nets;
  nn::MlpModel ensemble;
};

// Trains the four modality networks and then the meta-network.
TrainedStack train_stack(const SplitData& train, const SplitData& dev, const StackConfig& cfg);

struct ConfidenceModel {
  nn::MlpModel regressor;  // Identity head, output clamped to [0,1]
  std::vector<std::pair<double, double>> thresholds;  // (scope, cutoff), scope ascending
};

// Trains the discrepancy regressor on [all modality features | ensemble
// scores]. Training targets come from k-fold cross-validation inside the
// train split (each fold scored by a stack that never saw it); dev rows are
// scored by the final stack and drive early stopping.
ConfidenceModel train_confidence(const SplitData& train, const SplitData& dev,
                                 const TrainedStack& stack, const StackConfig& stack_cfg,
                                 std::vector<int> regressor_hidden,
                                 const nn::TrainConfig& config, int n_folds = 5);

// confidence = 1 - clamp(predicted discrepancy, 0, 1), one entry per row.
std::vector<double> confidence_scores(const ConfidenceModel& model, const SplitData& split,
                                      const Eigen::MatrixXf& ensemble_score_rows);

// (1 - scope)-quantile of the dev confidences; applying it selects
// ceil(scope * n) records up to ties. Throws BadScope outside (0, 1],
// EmptyDataset on no confidences.
double confidence_threshold(std::vector<double> dev_confidences, double scope);

struct PredictionBundle {
  std::array<Eigen::VectorXf, 4> modality_scores;
  std::array<bool, 4> present = {false, false, false, false};
  Eigen::VectorXf ensemble_scores;
  int predicted_principal = 0;  // argmax, lowest index on ties
  std::optional<double> confidence;
};

struct EnsembleSystem {
  EpisodeEncoder encoder;
  CodeVocabulary vocab;
  std::map<Modality, nn::MlpModel> nets;
  nn::MlpModel ensemble;
  std::optional<ConfidenceModel> confidence;

  void require_trained() const;  // throws SystemUntrained
};

// Full forward pass for one raw episode; never fails on missing modalities.
PredictionBundle predict_episode(const EnsembleSystem& system, const EpisodeRecord& episode);

// Splits bundle indices into (accepted, delegated) by confidence >= cutoff.
// Throws MissingConfidence when any bundle lacks a confidence.
std::pair<std::vector<int>, std::vector<int>> triage(
    const std::vector<PredictionBundle>& bundles, double cutoff);

}  // namespace codex::models
