#include "models.hpp"

#include <algorithm>
#include <cmath>

#include "util/errors.hpp"
#include "util/rng.hpp"

namespace codex::models {

namespace {

constexpr std::uint64_t kStreamNet = 0x6e657473ULL;
constexpr std::uint64_t kStreamEnsemble = 0x656e7362ULL;
constexpr std::uint64_t kStreamCombined = 0x636f6d62ULL;
constexpr std::uint64_t kStreamMask = 0x6d61736bULL;
constexpr std::uint64_t kStreamFold = 0x666f6c64ULL;
constexpr std::uint64_t kStreamConfidence = 0x636f6e66ULL;

int index_of(Modality m) { return static_cast<int>(m); }

// neural_core wants (dim x n) doubles; feature rows are (n x dim) floats.
nn::Dataset to_dataset(const Eigen::MatrixXf& inputs, const Eigen::MatrixXf& targets) {
  nn::Dataset set;
  set.inputs = inputs.transpose().cast<double>();
  set.targets = targets.transpose().cast<double>();
  return set;
}

std::vector<long> present_rows(const Eigen::VectorXf& present) {
  std::vector<long> rows;
  for (long i = 0; i < present.size(); ++i) {
    if (present(i) > 0.5f) rows.push_back(i);
  }
  return rows;
}

Eigen::MatrixXf select_rows(const Eigen::MatrixXf& m, const std::vector<long>& rows) {
  Eigen::MatrixXf out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  }
  return out;
}

const nn::MlpModel& net_for(const std::map<Modality, nn::MlpModel>& nets, Modality m) {
  const auto it = nets.find(m);
  if (it == nets.end()) {
    throw Error(Err::ModalityModelsMissing,
                "no trained network for " + std::string(modality_name(m)));
  }
  return it->second;
}

std::array<Eigen::MatrixXf, 4> split_scores(const std::map<Modality, nn::MlpModel>& nets,
                                            const SplitData& split) {
  std::array<Eigen::MatrixXf, 4> scores;
  for (Modality m : kAllModalities) {
    const int mi = index_of(m);
    scores[static_cast<std::size_t>(mi)] = modality_scores(
        net_for(nets, m), split.features[static_cast<std::size_t>(mi)],
        split.present[static_cast<std::size_t>(mi)]);
  }
  return scores;
}

// rows = episodes, cols = 4 * n_labels + 4.
Eigen::MatrixXf assemble_rows(const std::array<Eigen::MatrixXf, 4>& scores,
                              const std::array<Eigen::VectorXf, 4>& present, int n_labels) {
  const long n = scores[0].rows();
  Eigen::MatrixXf out(n, 4L * n_labels + 4);
  for (int m = 0; m < 4; ++m) {
    out.middleCols(static_cast<long>(m) * n_labels, n_labels) =
        scores[static_cast<std::size_t>(m)];
    out.col(4L * n_labels + m) = present[static_cast<std::size_t>(m)];
  }
  return out;
}

int argmax_lowest(const Eigen::VectorXf& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

}  // namespace

int SplitData::feature_dim() const {
  int dim = 0;
  for (const auto& f : features) dim += static_cast<int>(f.cols());
  return dim;
}

void SplitData::validate() const {
  const long n = labels.rows();
  for (int m = 0; m < 4; ++m) {
    if (features[static_cast<std::size_t>(m)].rows() != n ||
        present[static_cast<std::size_t>(m)].size() != n) {
      throw Error(Err::ShapeMismatch,
                  "split rows disagree for " +
                      std::string(modality_name(static_cast<Modality>(m))));
    }
  }
  if (static_cast<long>(principal.size()) != n ||
      static_cast<long>(episode_ids.size()) != n) {
    throw Error(Err::ShapeMismatch, "split metadata rows disagree with labels");
  }
}

SplitData mask_to_subset(SplitData split, const std::set<Modality>& subset) {
  for (Modality m : kAllModalities) {
    if (subset.count(m)) continue;
    const std::size_t mi = static_cast<std::size_t>(index_of(m));
    split.features[mi].setZero();
    split.present[mi].setZero();
  }
  return split;
}

std::vector<double> default_modality_dropout(Modality m, int n_hidden) {
  double rate = 0.35;
  switch (m) {
    case Modality::Lab: rate = 0.30; break;
    case Modality::Medications: rate = 0.35; break;
    case Modality::Radiology: rate = 0.25; break;
    case Modality::Admission: rate = 0.35; break;
  }
  return std::vector<double>(static_cast<std::size_t>(n_hidden), rate);
}

nn::NetworkSpec modality_net_spec(Modality m, int input_dim, int n_labels,
                                  std::vector<int> hidden_dims, std::vector<double> dropout) {
  nn::NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.output_dim = n_labels;
  spec.hidden_dims = std::move(hidden_dims);
  spec.dropout_rates = dropout.empty()
                           ? default_modality_dropout(m, static_cast<int>(spec.hidden_dims.size()))
                           : std::move(dropout);
  spec.output_activation = nn::OutputActivation::Sigmoid;
  spec.validate();
  return spec;
}

nn::MlpModel train_modality_net(Modality m, const SplitData& train, const SplitData& dev,
                                const nn::NetworkSpec& shape, const nn::TrainConfig& config) {
  train.validate();
  dev.validate();
  const std::size_t mi = static_cast<std::size_t>(index_of(m));
  const auto train_rows = present_rows(train.present[mi]);
  if (train_rows.empty()) {
    throw Error(Err::EmptyDataset,
                "no training episode carries " + std::string(modality_name(m)));
  }
  const auto dev_rows = present_rows(dev.present[mi]);

  const nn::Dataset train_set =
      to_dataset(select_rows(train.features[mi], train_rows), select_rows(train.labels, train_rows));
  nn::Dataset dev_set;
  if (!dev_rows.empty()) {
    dev_set = to_dataset(select_rows(dev.features[mi], dev_rows), select_rows(dev.labels, dev_rows));
  }

  nn::MlpModel model = nn::init_mlp(shape, derive_seed(config.seed, kStreamNet, index_of(m)));
  nn::TrainConfig tc = config;
  tc.seed = derive_seed(config.seed, kStreamNet, index_of(m), 1);
  nn::train(model, train_set, dev_set, nn::LossKind::Bce, tc);
  return model;
}

Eigen::MatrixXf modality_scores(const nn::MlpModel& net, const Eigen::MatrixXf& features,
                                const Eigen::VectorXf& present) {
  if (features.rows() != present.size()) {
    throw Error(Err::ShapeMismatch, "presence rows disagree with feature rows");
  }
  Eigen::MatrixXf out =
      Eigen::MatrixXf::Zero(features.rows(), static_cast<long>(net.spec.output_dim));
  const auto rows = present_rows(present);
  if (rows.empty()) return out;
  const Eigen::MatrixXd inputs = select_rows(features, rows).transpose().cast<double>();
  const Eigen::MatrixXd scores = nn::predict(net, inputs);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(rows[i]) = scores.col(static_cast<Eigen::Index>(i)).transpose().cast<float>();
  }
  return out;
}

Eigen::VectorXf assemble_ensemble_input(const std::array<Eigen::VectorXf, 4>& scores,
                                        const std::array<bool, 4>& present, int n_labels) {
  Eigen::VectorXf out(4L * n_labels + 4);
  for (int m = 0; m < 4; ++m) {
    const Eigen::VectorXf& block = scores[static_cast<std::size_t>(m)];
    if (block.size() != n_labels) {
      throw Error(Err::ShapeMismatch,
                  std::string(modality_name(static_cast<Modality>(m))) + " score block has " +
                      std::to_string(block.size()) + " entries, expected " +
                      std::to_string(n_labels));
    }
    if (present[static_cast<std::size_t>(m)]) {
      out.segment(static_cast<long>(m) * n_labels, n_labels) = block;
      out(4L * n_labels + m) = 1.0f;
    } else {
      out.segment(static_cast<long>(m) * n_labels, n_labels).setZero();
      out(4L * n_labels + m) = 0.0f;
    }
  }
  return out;
}

Eigen::MatrixXf ensemble_inputs(const std::map<Modality, nn::MlpModel>& nets,
                                const SplitData& split) {
  split.validate();
  return assemble_rows(split_scores(nets, split), split.present, split.n_labels());
}

nn::MlpModel train_ensemble(const std::map<Modality, nn::MlpModel>& nets,
                            const SplitData& train, const SplitData& dev,
                            std::vector<int> hidden_dims, double dropout, double mask_prob,
                            const nn::TrainConfig& config) {
  const int n_labels = train.n_labels();
  if (hidden_dims.empty()) hidden_dims = {n_labels};

  const Eigen::MatrixXf base = ensemble_inputs(nets, train);
  const long n = base.rows();

  // One masked copy per row: present modalities drop independently so the
  // meta-network sees absence patterns at train time.
  Eigen::MatrixXf augmented(2 * n, base.cols());
  augmented.topRows(n) = base;
  Eigen::MatrixXf labels(2 * n, n_labels);
  labels.topRows(n) = train.labels;
  labels.bottomRows(n) = train.labels;
  Rng rng(derive_seed(config.seed, kStreamMask));
  for (long i = 0; i < n; ++i) {
    Eigen::RowVectorXf row = base.row(i);
    for (int m = 0; m < 4; ++m) {
      const double u = rng.uniform();
      if (row(4L * n_labels + m) > 0.5f && u < mask_prob) {
        row.segment(static_cast<long>(m) * n_labels, n_labels).setZero();
        row(4L * n_labels + m) = 0.0f;
      }
    }
    augmented.row(n + i) = row;
  }

  nn::NetworkSpec spec;
  spec.input_dim = static_cast<int>(base.cols());
  spec.output_dim = n_labels;
  spec.hidden_dims = std::move(hidden_dims);
  spec.dropout_rates.assign(spec.hidden_dims.size(), dropout);
  spec.output_activation = nn::OutputActivation::Sigmoid;
  spec.validate();

  const nn::Dataset train_set = to_dataset(augmented, labels);
  nn::Dataset dev_set;
  if (dev.n_rows() > 0) {
    dev_set = to_dataset(ensemble_inputs(nets, dev), dev.labels);
  }

  nn::MlpModel model = nn::init_mlp(spec, derive_seed(config.seed, kStreamEnsemble));
  nn::TrainConfig tc = config;
  tc.seed = derive_seed(config.seed, kStreamEnsemble, 1);
  nn::train(model, train_set, dev_set, nn::LossKind::Bce, tc);
  return model;
}

Eigen::MatrixXf combined_inputs(const SplitData& split) {
  split.validate();
  Eigen::MatrixXf out(split.n_rows(), split.feature_dim());
  long col = 0;
  for (const auto& block : split.features) {
    out.middleCols(col, block.cols()) = block;
    col += block.cols();
  }
  return out;
}

nn::MlpModel train_combined(const SplitData& train, const SplitData& dev,
                            std::vector<int> hidden_dims, double dropout,
                            const nn::TrainConfig& config) {
  if (train.n_rows() == 0) throw Error(Err::EmptyDataset, "combined baseline needs episodes");
  nn::NetworkSpec spec;
  spec.input_dim = train.feature_dim();
  spec.output_dim = train.n_labels();
  spec.hidden_dims = std::move(hidden_dims);
  spec.dropout_rates.assign(spec.hidden_dims.size(), dropout);
  spec.output_activation = nn::OutputActivation::Sigmoid;
  spec.validate();

  const nn::Dataset train_set = to_dataset(combined_inputs(train), train.labels);
  nn::Dataset dev_set;
  if (dev.n_rows() > 0) dev_set = to_dataset(combined_inputs(dev), dev.labels);

  nn::MlpModel model = nn::init_mlp(spec, derive_seed(config.seed, kStreamCombined));
  nn::TrainConfig tc = config;
  tc.seed = derive_seed(config.seed, kStreamCombined, 1);
  nn::train(model, train_set, dev_set, nn::LossKind::Bce, tc);
  return model;
}

Eigen::VectorXf averaging_baseline(const std::array<Eigen::VectorXf, 4>& scores,
                                   const std::array<bool, 4>& present) {
  int n_present = 0;
  Eigen::VectorXf sum;
  for (int m = 0; m < 4; ++m) {
    if (!present[static_cast<std::size_t>(m)]) continue;
    const Eigen::VectorXf& block = scores[static_cast<std::size_t>(m)];
    if (sum.size() == 0) {
      sum = Eigen::VectorXf::Zero(block.size());
    } else if (block.size() != sum.size()) {
      throw Error(Err::ShapeMismatch, "modality score lengths disagree");
    }
    sum += block;
    ++n_present;
  }
  if (n_present == 0) throw Error(Err::AllAbsent, "averaging needs at least one modality");
  return sum / static_cast<float>(n_present);
}

Eigen::MatrixXf averaging_scores(const std::map<Modality, nn::MlpModel>& nets,
                                 const SplitData& split) {
  split.validate();
  const auto scores = split_scores(nets, split);
  const int n_labels = split.n_labels();
  Eigen::MatrixXf out(split.n_rows(), n_labels);
  std::array<Eigen::VectorXf, 4> row_scores;
  std::array<bool, 4> row_present;
  for (long i = 0; i < split.n_rows(); ++i) {
    for (int m = 0; m < 4; ++m) {
      const std::size_t mi = static_cast<std::size_t>(m);
      row_scores[mi] = scores[mi].row(i).transpose();
      row_present[mi] = split.present[mi](i) > 0.5f;
    }
    out.row(i) = averaging_baseline(row_scores, row_present).transpose();
  }
  return out;
}

double discrepancy(const Eigen::VectorXf& scores, const Eigen::VectorXf& truth,
                   double threshold) {
  if (scores.size() != truth.size()) {
    throw Error(Err::ShapeMismatch, "discrepancy needs aligned score/truth lengths");
  }
  long inter = 0;
  long uni = 0;
  for (long j = 0; j < scores.size(); ++j) {
    const bool p = scores(j) >= static_cast<float>(threshold);
    const bool t = truth(j) > 0.5f;
    inter += (p && t) ? 1 : 0;
    uni += (p || t) ? 1 : 0;
  }
  if (uni == 0) return 0.0;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

TrainedStack train_stack(const SplitData& train, const SplitData& dev, const StackConfig& cfg) {
  TrainedStack stack;
  for (Modality m : kAllModalities) {
    const std::size_t mi = static_cast<std::size_t>(index_of(m));
    const nn::NetworkSpec shape = modality_net_spec(
        m, static_cast<int>(train.features[mi].cols()), train.n_labels(),
        cfg.modality_hidden[mi], cfg.modality_dropout[mi]);
    stack.nets.emplace(m, train_modality_net(m, train, dev, shape, cfg.train));
  }
  stack.ensemble = train_ensemble(stack.nets, train, dev, cfg.ensemble_hidden,
                                  cfg.ensemble_dropout, cfg.mask_prob, cfg.train);
  return stack;
}

namespace {

// [all modality feature blocks | ensemble scores] per row.
Eigen::MatrixXf confidence_inputs(const SplitData& split,
                                  const Eigen::MatrixXf& ensemble_rows) {
  const Eigen::MatrixXf feats = combined_inputs(split);
  Eigen::MatrixXf out(split.n_rows(), feats.cols() + ensemble_rows.cols());
  out.leftCols(feats.cols()) = feats;
  out.rightCols(ensemble_rows.cols()) = ensemble_rows;
  return out;
}

Eigen::MatrixXf discrepancy_targets(const SplitData& split,
                                    const Eigen::MatrixXf& ensemble_rows) {
  Eigen::MatrixXf targets(split.n_rows(), 1);
  for (long i = 0; i < split.n_rows(); ++i) {
    targets(i, 0) = static_cast<float>(
        discrepancy(ensemble_rows.row(i).transpose(), split.labels.row(i).transpose()));
  }
  return targets;
}

SplitData select_split_rows(const SplitData& split, const std::vector<long>& rows) {
  SplitData out;
  for (int m = 0; m < 4; ++m) {
    const std::size_t mi = static_cast<std::size_t>(m);
    out.features[mi] = select_rows(split.features[mi], rows);
    out.present[mi].resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.present[mi](static_cast<Eigen::Index>(i)) = split.present[mi](rows[i]);
    }
  }
  out.labels = select_rows(split.labels, rows);
  out.principal.reserve(rows.size());
  out.episode_ids.reserve(rows.size());
  for (long r : rows) {
    out.principal.push_back(split.principal[static_cast<std::size_t>(r)]);
    out.episode_ids.push_back(split.episode_ids[static_cast<std::size_t>(r)]);
  }
  return out;
}

}  // namespace

ConfidenceModel train_confidence(const SplitData& train, const SplitData& dev,
                                 const TrainedStack& stack, const StackConfig& stack_cfg,
                                 std::vector<int> regressor_hidden,
                                 const nn::TrainConfig& config, int n_folds) {
  train.validate();
  if (stack.nets.size() != 4 || stack.ensemble.weights.empty()) {
    throw Error(Err::SystemUntrained, "confidence training needs the full trained stack");
  }
  if (n_folds < 2) throw Error(Err::BadConfig, "confidence cross-validation needs >= 2 folds");
  const long n = train.n_rows();
  if (n < n_folds) throw Error(Err::EmptyDataset, "fewer training rows than folds");
  if (regressor_hidden.empty()) regressor_hidden = {64};

  // Held-out scores: fold f rows are predicted by a stack trained on the
  // other folds, so targets measure generalization error.
  Eigen::MatrixXf cv_scores(n, train.n_labels());
  for (int f = 0; f < n_folds; ++f) {
    std::vector<long> held, rest;
    for (long i = 0; i < n; ++i) {
      ((i % n_folds == f) ? held : rest).push_back(i);
    }
    StackConfig fold_cfg = stack_cfg;
    fold_cfg.train.seed = derive_seed(stack_cfg.train.seed, kStreamFold, f);
    const SplitData fold_train = select_split_rows(train, rest);
    const TrainedStack fold_stack = train_stack(fold_train, dev, fold_cfg);
    const SplitData fold_held = select_split_rows(train, held);
    const Eigen::MatrixXf inputs = ensemble_inputs(fold_stack.nets, fold_held);
    const Eigen::MatrixXd scored =
        nn::predict(fold_stack.ensemble, inputs.transpose().cast<double>());
    for (std::size_t i = 0; i < held.size(); ++i) {
      cv_scores.row(held[i]) = scored.col(static_cast<Eigen::Index>(i)).transpose().cast<float>();
    }
  }

  const Eigen::MatrixXf train_inputs = confidence_inputs(train, cv_scores);
  const Eigen::MatrixXf train_targets = discrepancy_targets(train, cv_scores);

  nn::Dataset dev_set;
  if (dev.n_rows() > 0) {
    const Eigen::MatrixXf dev_ens = ensemble_inputs(stack.nets, dev);
    const Eigen::MatrixXd dev_scored =
        nn::predict(stack.ensemble, dev_ens.transpose().cast<double>());
    const Eigen::MatrixXf dev_rows = dev_scored.transpose().cast<float>();
    dev_set = to_dataset(confidence_inputs(dev, dev_rows), discrepancy_targets(dev, dev_rows));
  }

  nn::NetworkSpec spec;
  spec.input_dim = static_cast<int>(train_inputs.cols());
  spec.output_dim = 1;
  spec.hidden_dims = std::move(regressor_hidden);
  spec.dropout_rates.assign(spec.hidden_dims.size(), 0.0);
  spec.output_activation = nn::OutputActivation::Identity;
  spec.validate();

  ConfidenceModel model;
  model.regressor = nn::init_mlp(spec, derive_seed(config.seed, kStreamConfidence));
  nn::TrainConfig tc = config;
  tc.seed = derive_seed(config.seed, kStreamConfidence, 1);
  nn::train(model.regressor, to_dataset(train_inputs, train_targets), dev_set,
            nn::LossKind::Mse, tc);
  return model;
}

std::vector<double> confidence_scores(const ConfidenceModel& model, const SplitData& split,
                                      const Eigen::MatrixXf& ensemble_score_rows) {
  const Eigen::MatrixXf inputs = confidence_inputs(split, ensemble_score_rows);
  const Eigen::MatrixXd pred = nn::predict(model.regressor, inputs.transpose().cast<double>());
  std::vector<double> confidences(static_cast<std::size_t>(pred.cols()));
  for (long i = 0; i < pred.cols(); ++i) {
    const double d = std::min(1.0, std::max(0.0, pred(0, i)));
    confidences[static_cast<std::size_t>(i)] = 1.0 - d;
  }
  return confidences;
}

double confidence_threshold(std::vector<double> dev_confidences, double scope) {
  if (!(scope > 0.0 && scope <= 1.0)) {
    throw Error(Err::BadScope, "scope must be in (0, 1], got " + std::to_string(scope));
  }
  if (dev_confidences.empty()) {
    throw Error(Err::EmptyDataset, "confidence threshold needs dev confidences");
  }
  std::sort(dev_confidences.begin(), dev_confidences.end());
  const long n = static_cast<long>(dev_confidences.size());
  const long keep = static_cast<long>(std::ceil(scope * static_cast<double>(n)));
  const long cut = std::max(0L, n - keep);
  return dev_confidences[static_cast<std::size_t>(cut)];
}

void EnsembleSystem::require_trained() const {
  if (nets.size() != 4) {
    throw Error(Err::SystemUntrained, "all four modality networks must be trained");
  }
  if (ensemble.weights.empty()) {
    throw Error(Err::SystemUntrained, "the ensemble network is not trained");
  }
  if (vocab.size() == 0) throw Error(Err::SystemUntrained, "empty vocabulary");
}

PredictionBundle predict_episode(const EnsembleSystem& system, const EpisodeRecord& episode) {
  system.require_trained();
  const int n_labels = system.vocab.size();
  PredictionBundle bundle;

  const auto encoded = system.encoder.encode(episode);
  Eigen::VectorXf feature_concat(static_cast<long>(0));
  long total_dim = 0;
  for (const auto& mv : encoded) total_dim += mv.values.size();
  feature_concat.resize(total_dim);
  long offset = 0;

  for (Modality m : kAllModalities) {
    const std::size_t mi = static_cast<std::size_t>(index_of(m));
    const ModalityVector& mv = encoded[mi];
    bundle.present[mi] = mv.present;
    feature_concat.segment(offset, mv.values.size()) = mv.values;
    offset += mv.values.size();
    if (mv.present) {
      const Eigen::MatrixXd scores =
          nn::predict(net_for(system.nets, m), mv.values.cast<double>());
      bundle.modality_scores[mi] = scores.col(0).cast<float>();
    } else {
      bundle.modality_scores[mi] = Eigen::VectorXf::Zero(n_labels);
    }
  }

  const Eigen::VectorXf input =
      assemble_ensemble_input(bundle.modality_scores, bundle.present, n_labels);
  const Eigen::MatrixXd ens = nn::predict(system.ensemble, input.cast<double>());
  bundle.ensemble_scores = ens.col(0).cast<float>();
  bundle.predicted_principal = argmax_lowest(bundle.ensemble_scores);

  if (system.confidence) {
    Eigen::VectorXf conf_input(feature_concat.size() + bundle.ensemble_scores.size());
    conf_input << feature_concat, bundle.ensemble_scores;
    const Eigen::MatrixXd pred =
        nn::predict(system.confidence->regressor, conf_input.cast<double>());
    bundle.confidence = 1.0 - std::min(1.0, std::max(0.0, pred(0, 0)));
  }
  return bundle;
}

std::pair<std::vector<int>, std::vector<int>> triage(
    const std::vector<PredictionBundle>& bundles, double cutoff) {
  std::pair<std::vector<int>, std::vector<int>> result;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    if (!bundles[i].confidence) {
      throw Error(Err::MissingConfidence,
                  "bundle " + std::to_string(i) + " has no confidence");
    }
    if (*bundles[i].confidence >= cutoff) {
      result.first.push_back(static_cast<int>(i));
    } else {
      result.second.push_back(static_cast<int>(i));
    }
  }
  return result;
}

}  // namespace codex::models
