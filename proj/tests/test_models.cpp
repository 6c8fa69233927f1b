#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "models.hpp"
#include "util/errors.hpp"
#include "util/rng.hpp"

using namespace codex;
using namespace codex::models;
using doctest::Approx;

namespace {

constexpr std::array<int, 4> kToyDims = {4, 3, 5, 3};

// Separable toy data: class i%3, each present modality carries a bump on the
// class channel; modality 1 is absent on every fourth row.
SplitData toy_split(long n, std::uint64_t seed, bool with_absences = true) {
  const int n_labels = 3;
  Rng rng(seed);
  SplitData s;
  s.labels = Eigen::MatrixXf::Zero(n, n_labels);
  for (int m = 0; m < 4; ++m) {
    s.features[static_cast<std::size_t>(m)] =
        Eigen::MatrixXf::Zero(n, kToyDims[static_cast<std::size_t>(m)]);
    s.present[static_cast<std::size_t>(m)] = Eigen::VectorXf::Ones(n);
  }
  for (long i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % n_labels);
    s.labels(i, c) = 1.0f;
    if (i % 2 == 0) s.labels(i, (c + 1) % n_labels) = 1.0f;
    s.principal.push_back(c);
    s.episode_ids.push_back("r" + std::to_string(i));
    for (int m = 0; m < 4; ++m) {
      auto& feat = s.features[static_cast<std::size_t>(m)];
      const bool absent = with_absences && m == 1 && i % 4 == 0;
      if (absent) {
        s.present[static_cast<std::size_t>(m)](i) = 0.0f;
        continue;
      }
      for (int j = 0; j < kToyDims[static_cast<std::size_t>(m)]; ++j) {
        feat(i, j) = static_cast<float>(0.1 * rng.uniform() + (j == c ? 0.9 : 0.0));
      }
    }
  }
  s.validate();
  return s;
}

nn::TrainConfig quick_train(std::uint64_t seed) {
  nn::TrainConfig tc;
  tc.batch_size = 16;
  tc.learning_rate = 5e-3;
  tc.max_epochs = 30;
  tc.patience = 5;
  tc.seed = seed;
  return tc;
}

StackConfig toy_stack_config() {
  StackConfig cfg;
  for (int m = 0; m < 4; ++m) {
    cfg.modality_hidden[static_cast<std::size_t>(m)] = {8};
    cfg.modality_dropout[static_cast<std::size_t>(m)] = {0.0};
  }
  cfg.ensemble_hidden = {8};
  cfg.ensemble_dropout = 0.0;
  cfg.mask_prob = 0.15;
  cfg.train = quick_train(3);
  return cfg;
}

}  // namespace

TEST_CASE("ensemble input assembly lays out scores then presence flags") {
  std::array<Eigen::VectorXf, 4> scores;
  for (int m = 0; m < 4; ++m) scores[static_cast<std::size_t>(m)].resize(2);
  scores[0] << 0.1f, 0.2f;
  scores[1] << 0.3f, 0.4f;
  scores[2] << 0.5f, 0.6f;
  scores[3] << 0.7f, 0.8f;
  const std::array<bool, 4> present = {true, false, true, true};
  const Eigen::VectorXf v = assemble_ensemble_input(scores, present, 2);
  REQUIRE(v.size() == 4 * 2 + 4);
  CHECK(v[0] == 0.1f);
  CHECK(v[1] == 0.2f);
  CHECK(v[2] == 0.0f);  // absent block zeroed regardless of its scores
  CHECK(v[3] == 0.0f);
  CHECK(v[4] == 0.5f);
  CHECK(v[6] == 0.7f);
  CHECK(v[8] == 1.0f);
  CHECK(v[9] == 0.0f);
  CHECK(v[10] == 1.0f);
  CHECK(v[11] == 1.0f);

  std::array<Eigen::VectorXf, 4> bad = scores;
  bad[0].resize(3);
  bad[0] << 0.1f, 0.2f, 0.3f;
  CHECK_THROWS_AS((void)assemble_ensemble_input(bad, present, 2), Error);
}

TEST_CASE("masking a split to a subset zeroes the complement") {
  const SplitData full = toy_split(8, 1, false);
  const SplitData masked = mask_to_subset(full, {Modality::Lab, Modality::Admission});
  for (int m : {1, 2}) {
    CHECK(masked.features[static_cast<std::size_t>(m)].cwiseAbs().maxCoeff() == 0.0f);
    CHECK(masked.present[static_cast<std::size_t>(m)].cwiseAbs().maxCoeff() == 0.0f);
  }
  for (int m : {0, 3}) {
    CHECK((masked.features[static_cast<std::size_t>(m)] -
           full.features[static_cast<std::size_t>(m)])
              .cwiseAbs()
              .maxCoeff() == 0.0f);
    CHECK(masked.present[static_cast<std::size_t>(m)].minCoeff() == 1.0f);
  }
  CHECK((masked.labels - full.labels).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("averaging baseline means the present score vectors") {
  std::array<Eigen::VectorXf, 4> scores;
  for (int m = 0; m < 4; ++m) scores[static_cast<std::size_t>(m)] = Eigen::VectorXf::Zero(2);
  scores[0] << 0.2f, 0.4f;
  scores[1] << 0.6f, 0.8f;
  const Eigen::VectorXf avg = averaging_baseline(scores, {true, true, false, false});
  CHECK(avg[0] == Approx(0.4f));
  CHECK(avg[1] == Approx(0.6f));
  const Eigen::VectorXf one = averaging_baseline(scores, {false, true, false, false});
  CHECK(one[0] == Approx(0.6f));
  CHECK_THROWS_AS((void)averaging_baseline(scores, {false, false, false, false}), Error);
}

TEST_CASE("discrepancy is one minus the prediction-set jaccard") {
  Eigen::VectorXf scores(3), truth(3);
  scores << 0.9f, 0.1f, 0.8f;
  truth << 1.0f, 0.0f, 0.0f;
  CHECK(discrepancy(scores, truth) == Approx(0.5));
  truth << 1.0f, 0.0f, 1.0f;
  CHECK(discrepancy(scores, truth) == Approx(0.0));
  scores << 0.1f, 0.9f, 0.1f;
  truth << 1.0f, 0.0f, 0.0f;
  CHECK(discrepancy(scores, truth) == Approx(1.0));
  scores << 0.1f, 0.2f, 0.3f;
  truth << 0.0f, 0.0f, 0.0f;
  CHECK(discrepancy(scores, truth) == Approx(0.0));  // both sides empty
  CHECK(discrepancy(scores, truth, 0.25) == Approx(1.0));
}

TEST_CASE("confidence threshold is the scope quantile of dev confidences") {
  std::vector<double> conf;
  for (int i = 1; i <= 10; ++i) conf.push_back(i / 10.0);
  CHECK(confidence_threshold(conf, 0.3) == Approx(0.8));
  CHECK(confidence_threshold(conf, 1.0) == Approx(0.1));
  CHECK(confidence_threshold(conf, 0.25) == Approx(0.8));  // ceil(2.5) = 3 selected
  long selected = 0;
  const double cutoff = confidence_threshold(conf, 0.3);
  for (double c : conf) selected += c >= cutoff ? 1 : 0;
  CHECK(selected == 3);
  CHECK_THROWS_AS((void)confidence_threshold(conf, 0.0), Error);
  CHECK_THROWS_AS((void)confidence_threshold(conf, 1.0001), Error);
  CHECK_THROWS_AS((void)confidence_threshold({}, 0.5), Error);
}

TEST_CASE("triage partitions bundle indices by the cutoff") {
  std::vector<PredictionBundle> bundles(3);
  bundles[0].confidence = 0.9;
  bundles[1].confidence = 0.3;
  bundles[2].confidence = 0.5;
  const auto [accepted, delegated] = triage(bundles, 0.5);
  CHECK(accepted == std::vector<int>{0, 2});
  CHECK(delegated == std::vector<int>{1});
  bundles[1].confidence.reset();
  CHECK_THROWS_AS((void)triage(bundles, 0.5), Error);
}

TEST_CASE("the trained stack scores every presence pattern finitely") {
  const SplitData train = toy_split(96, 11);
  const SplitData dev = toy_split(24, 12);
  const StackConfig cfg = toy_stack_config();
  const TrainedStack stack = train_stack(train, dev, cfg);
  REQUIRE(stack.nets.size() == 4);

  // Modality scores: absent rows all-zero, present rows strictly inside (0,1).
  const auto& lab_net = stack.nets.at(Modality::Lab);
  const Eigen::MatrixXf lab_scores = modality_scores(lab_net, dev.features[0], dev.present[0]);
  CHECK(lab_scores.rows() == dev.n_rows());
  CHECK(lab_scores.cols() == 3);
  const auto& med_net = stack.nets.at(Modality::Medications);
  const Eigen::MatrixXf med_scores = modality_scores(med_net, dev.features[1], dev.present[1]);
  for (long i = 0; i < dev.n_rows(); ++i) {
    if (dev.present[1](i) == 0.0f) {
      CHECK(med_scores.row(i).cwiseAbs().maxCoeff() == 0.0f);
    } else {
      CHECK(med_scores.row(i).minCoeff() > 0.0f);
      CHECK(med_scores.row(i).maxCoeff() < 1.0f);
    }
  }

  // Every one of the 16 presence patterns must yield finite probabilities.
  std::array<Eigen::VectorXf, 4> row_scores;
  for (int m = 0; m < 4; ++m) {
    const auto scores = modality_scores(stack.nets.at(kAllModalities[static_cast<std::size_t>(m)]),
                                        train.features[static_cast<std::size_t>(m)],
                                        train.present[static_cast<std::size_t>(m)]);
    row_scores[static_cast<std::size_t>(m)] = scores.row(1).transpose();
  }
  for (int mask = 0; mask < 16; ++mask) {
    std::array<bool, 4> present{};
    for (int m = 0; m < 4; ++m) present[static_cast<std::size_t>(m)] = (mask >> m) & 1;
    const Eigen::VectorXf in = assemble_ensemble_input(row_scores, present, 3);
    Eigen::MatrixXd col(in.size(), 1);
    col.col(0) = in.cast<double>();
    const Eigen::MatrixXd out = nn::predict(stack.ensemble, col);
    REQUIRE(out.rows() == 3);
    for (long k = 0; k < 3; ++k) {
      CHECK(std::isfinite(out(k, 0)));
      CHECK(out(k, 0) >= 0.0);
      CHECK(out(k, 0) <= 1.0);
    }
  }

  // Changing one modality's presence only rewrites its block and flag.
  std::array<bool, 4> all_on = {true, true, true, true};
  std::array<bool, 4> rad_off = {true, true, false, true};
  const Eigen::VectorXf with_rad = assemble_ensemble_input(row_scores, all_on, 3);
  const Eigen::VectorXf without_rad = assemble_ensemble_input(row_scores, rad_off, 3);
  for (long k = 0; k < with_rad.size(); ++k) {
    const bool rad_block = (k >= 6 && k < 9) || k == 14;
    if (rad_block) {
      CHECK(without_rad[k] == 0.0f);
    } else {
      CHECK(without_rad[k] == with_rad[k]);
    }
  }

  // The stacked ensemble solves the separable toy task.
  const Eigen::MatrixXf inputs = ensemble_inputs(stack.nets, dev);
  Eigen::MatrixXd pred = nn::predict(stack.ensemble, inputs.transpose().cast<double>());
  long correct = 0;
  for (long i = 0; i < dev.n_rows(); ++i) {
    Eigen::Index arg = 0;
    pred.col(i).maxCoeff(&arg);
    correct += (static_cast<int>(arg) == dev.principal[static_cast<std::size_t>(i)]) ? 1 : 0;
  }
  CHECK(double(correct) / double(dev.n_rows()) > 0.9);
}

TEST_CASE("modality training refuses a fully absent modality") {
  SplitData train = toy_split(16, 5, false);
  train.present[2].setZero();
  SplitData dev = toy_split(8, 6, false);
  const nn::NetworkSpec spec = modality_net_spec(Modality::Radiology, kToyDims[2], 3, {4}, {0.0});
  CHECK_THROWS_AS((void)train_modality_net(Modality::Radiology, train, dev, spec, quick_train(1)),
                  Error);
}

TEST_CASE("modality net specs apply the published dropout schedule") {
  const auto lab = default_modality_dropout(Modality::Lab, 2);
  CHECK(lab == std::vector<double>{0.3, 0.3});
  CHECK(default_modality_dropout(Modality::Medications, 1) == std::vector<double>{0.35});
  CHECK(default_modality_dropout(Modality::Radiology, 1) == std::vector<double>{0.25});
  CHECK(default_modality_dropout(Modality::Admission, 1) == std::vector<double>{0.35});
  const nn::NetworkSpec spec = modality_net_spec(Modality::Lab, 10, 4, {16, 8});
  CHECK(spec.input_dim == 10);
  CHECK(spec.output_dim == 4);
  CHECK(spec.hidden_dims == std::vector<int>{16, 8});
  CHECK(spec.dropout_rates == std::vector<double>{0.3, 0.3});
  CHECK(spec.output_activation == nn::OutputActivation::Sigmoid);
}

TEST_CASE("confidence regressor tracks prediction quality on the toy task") {
  const SplitData train = toy_split(90, 21);
  const SplitData dev = toy_split(30, 22);
  const StackConfig cfg = toy_stack_config();
  const TrainedStack stack = train_stack(train, dev, cfg);
  const ConfidenceModel model =
      train_confidence(train, dev, stack, cfg, {8}, quick_train(4), 3);

  const Eigen::MatrixXf dev_inputs = ensemble_inputs(stack.nets, dev);
  const Eigen::MatrixXd dev_scores =
      nn::predict(stack.ensemble, dev_inputs.transpose().cast<double>());
  Eigen::MatrixXf score_rows = dev_scores.transpose().cast<float>();
  const std::vector<double> conf = confidence_scores(model, dev, score_rows);
  REQUIRE(conf.size() == static_cast<std::size_t>(dev.n_rows()));
  for (double c : conf) {
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
  }
}
