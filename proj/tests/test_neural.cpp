#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "neural_core.hpp"
#include "test_helpers.hpp"
#include "util/errors.hpp"
#include "util/rng.hpp"

using namespace codex;
using Eigen::MatrixXd;

namespace {

MatrixXd random_matrix(Rng& rng, long rows, long cols, double lo = -1.0, double hi = 1.0) {
  MatrixXd m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

MatrixXd random_targets(Rng& rng, long rows, long cols, nn::LossKind loss) {
  MatrixXd t(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j)
      t(i, j) = loss == nn::LossKind::Bce ? (rng.bernoulli(0.5) ? 1.0 : 0.0)
                                          : rng.uniform(-1.0, 1.0);
  return t;
}

// Central finite differences against the analytic gradient; returns the
// worst relative error over every parameter.
double gradient_gap(nn::MlpModel model, const MatrixXd& batch, const MatrixXd& targets,
                    nn::LossKind loss, std::uint64_t dropout_seed) {
  const bool training = true;
  nn::ForwardCache cache;
  (void)nn::forward(model, batch, training, dropout_seed, &cache);
  const nn::Gradients grads = nn::backward(model, cache, targets, loss);

  const double h = 1e-5;
  double worst = 0.0;
  auto probe = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = nn::compute_loss(loss, nn::forward(model, batch, training, dropout_seed),
                                       targets);
    param = saved - h;
    const double down = nn::compute_loss(loss, nn::forward(model, batch, training, dropout_seed),
                                         targets);
    param = saved;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({1.0, std::abs(fd), std::abs(analytic)});
    worst = std::max(worst, std::abs(fd - analytic) / denom);
  };
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    for (long i = 0; i < model.weights[l].rows(); ++i)
      for (long j = 0; j < model.weights[l].cols(); ++j)
        probe(model.weights[l](i, j), grads.weights[l](i, j));
    for (long i = 0; i < model.biases[l].size(); ++i)
      probe(model.biases[l](i), grads.biases[l](i));
  }
  return worst;
}

double max_abs_diff(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(314);
  for (int rep = 0; rep < 6; ++rep) {
    nn::NetworkSpec spec;
    spec.input_dim = 2 + static_cast<int>(rng.below(6));
    const int depth = static_cast<int>(rng.below(3));
    for (int l = 0; l < depth; ++l) spec.hidden_dims.push_back(2 + static_cast<int>(rng.below(6)));
    spec.output_dim = 1 + static_cast<int>(rng.below(4));
    spec.dropout_rates.assign(spec.hidden_dims.size(), 0.0);
    const nn::LossKind loss = rep % 2 == 0 ? nn::LossKind::Bce : nn::LossKind::Mse;
    spec.output_activation =
        loss == nn::LossKind::Bce ? nn::OutputActivation::Sigmoid : nn::OutputActivation::Identity;

    nn::MlpModel model = nn::init_mlp(spec, derive_seed(99, rep));
    const MatrixXd batch = random_matrix(rng, spec.input_dim, 5);
    const MatrixXd targets = random_targets(rng, spec.output_dim, 5, loss);
    CHECK(gradient_gap(model, batch, targets, loss, 0) < 1e-6);
  }
}

TEST_CASE("gradients stay exact under a fixed dropout mask") {
  nn::NetworkSpec spec;
  spec.input_dim = 6;
  spec.hidden_dims = {8, 5};
  spec.output_dim = 3;
  spec.dropout_rates = {0.4, 0.25};
  spec.output_activation = nn::OutputActivation::Sigmoid;
  nn::MlpModel model = nn::init_mlp(spec, 4242);
  Rng rng(77);
  const MatrixXd batch = random_matrix(rng, 6, 4);
  const MatrixXd targets = random_targets(rng, 3, 4, nn::LossKind::Bce);
  // Nonzero biases keep fully-dropped columns off the exact ReLU kink, where
  // finite differences are undefined.
  for (auto& b : model.biases)
    for (long i = 0; i < b.size(); ++i) b(i) = rng.uniform(-0.3, 0.3);
  CHECK(gradient_gap(model, batch, targets, nn::LossKind::Bce, 1234) < 1e-6);
}

TEST_CASE("glorot init respects the fan bound and zero biases") {
  nn::NetworkSpec spec;
  spec.input_dim = 30;
  spec.hidden_dims = {20};
  spec.output_dim = 10;
  spec.dropout_rates = {0.0};
  const nn::MlpModel model = nn::init_mlp(spec, 1);
  REQUIRE(model.weights.size() == 2);
  const double bound0 = std::sqrt(6.0 / (30 + 20));
  const double bound1 = std::sqrt(6.0 / (20 + 10));
  CHECK(model.weights[0].cwiseAbs().maxCoeff() <= bound0);
  CHECK(model.weights[1].cwiseAbs().maxCoeff() <= bound1);
  CHECK(model.weights[0].cwiseAbs().maxCoeff() > 0.5 * bound0);  // actually spread out
  CHECK(model.biases[0].cwiseAbs().maxCoeff() == 0.0);
  CHECK(model.biases[1].cwiseAbs().maxCoeff() == 0.0);
  CHECK(model.parameter_count() == 30 * 20 + 20 + 20 * 10 + 10);

  const nn::MlpModel again = nn::init_mlp(spec, 1);
  CHECK(max_abs_diff(again.weights[0], model.weights[0]) == 0.0);
  const nn::MlpModel other = nn::init_mlp(spec, 2);
  CHECK(max_abs_diff(other.weights[0], model.weights[0]) > 0.0);
}

TEST_CASE("losses are finite under saturated predictions") {
  MatrixXd pred(2, 2);
  pred << 0.0, 1.0, 1e-12, 1.0 - 1e-12;
  MatrixXd tgt(2, 2);
  tgt << 1, 0, 0, 1;
  const double loss = nn::bce_loss(pred, tgt);
  CHECK(std::isfinite(loss));
  // Two fully-wrong cells clamp to -log(1e-7), two near-correct cells to ~0.
  CHECK(loss == doctest::Approx(-std::log(1e-7) / 2.0).epsilon(1e-6));
  CHECK(nn::mse_loss(pred, pred) == doctest::Approx(0.0));
}

TEST_CASE("inverted dropout preserves inference and scales at train time") {
  nn::NetworkSpec spec;
  spec.input_dim = 4;
  spec.hidden_dims = {512};
  spec.output_dim = 2;
  spec.dropout_rates = {0.5};
  spec.output_activation = nn::OutputActivation::Identity;
  const nn::MlpModel model = nn::init_mlp(spec, 3);
  Rng rng(8);
  const MatrixXd batch = random_matrix(rng, 4, 3);

  const MatrixXd eval1 = nn::forward(model, batch, false, 1);
  const MatrixXd eval2 = nn::forward(model, batch, false, 999);
  CHECK(max_abs_diff(eval1, eval2) == 0.0);  // inference ignores the dropout seed

  const MatrixXd train1 = nn::forward(model, batch, true, 1);
  const MatrixXd train2 = nn::forward(model, batch, true, 1);
  CHECK(max_abs_diff(train1, train2) == 0.0);  // same seed, same mask
  const MatrixXd train3 = nn::forward(model, batch, true, 2);
  CHECK(max_abs_diff(train1, train3) > 0.0);

  // With 512 hidden units the kept-scaled mean stays near the eval output.
  CHECK((train1 - eval1).cwiseAbs().maxCoeff() <
        10.0 * eval1.cwiseAbs().maxCoeff() + 1.0);
}

TEST_CASE("training reduces loss and restores the best snapshot") {
  // Noisy linearly separable task.
  Rng rng(55);
  const int n = 160, d = 6;
  MatrixXd x = random_matrix(rng, d, n);
  MatrixXd y(2, n);
  for (int i = 0; i < n; ++i) {
    const double s = x.col(i).head(3).sum();
    y(0, i) = s > 0 ? 1.0 : 0.0;
    y(1, i) = x(3, i) > 0 ? 1.0 : 0.0;
  }
  nn::Dataset train{x.leftCols(120), y.leftCols(120)};
  nn::Dataset dev{x.rightCols(40), y.rightCols(40)};

  nn::NetworkSpec spec;
  spec.input_dim = d;
  spec.hidden_dims = {16};
  spec.output_dim = 2;
  spec.dropout_rates = {0.0};
  nn::MlpModel model = nn::init_mlp(spec, 10);
  const double before = nn::bce_loss(nn::predict(model, dev.inputs), dev.targets);

  nn::TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.max_epochs = 60;
  cfg.patience = 8;
  cfg.seed = 20;
  const nn::TrainHistory hist = nn::train(model, train, dev, nn::LossKind::Bce, cfg);
  const double after = nn::bce_loss(nn::predict(model, dev.inputs), dev.targets);

  CHECK(after < before);
  CHECK(hist.epochs.size() >= 1);
  CHECK(hist.best_epoch >= 1);
  // The restored snapshot reproduces the recorded best dev loss.
  const double best_recorded =
      hist.best_epoch == 0 ? hist.initial_dev_loss
                           : hist.epochs[static_cast<std::size_t>(hist.best_epoch - 1)].dev_loss;
  CHECK(after == doctest::Approx(best_recorded).epsilon(1e-12));
  // Early stopping: no more than patience epochs after the best one.
  CHECK(static_cast<int>(hist.epochs.size()) <= hist.best_epoch + cfg.patience);
}

TEST_CASE("training is deterministic per seed") {
  Rng rng(66);
  const MatrixXd x = random_matrix(rng, 5, 80);
  MatrixXd y(3, 80);
  for (int i = 0; i < 80; ++i)
    for (int j = 0; j < 3; ++j) y(j, i) = x(j, i) > 0 ? 1.0 : 0.0;
  const nn::Dataset data{x, y};

  nn::NetworkSpec spec;
  spec.input_dim = 5;
  spec.hidden_dims = {12};
  spec.output_dim = 3;
  spec.dropout_rates = {0.2};

  nn::TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.max_epochs = 5;
  cfg.seed = 7;

  nn::MlpModel a = nn::init_mlp(spec, 1);
  nn::MlpModel b = nn::init_mlp(spec, 1);
  (void)nn::train(a, data, {}, nn::LossKind::Bce, cfg);
  (void)nn::train(b, data, {}, nn::LossKind::Bce, cfg);
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    CHECK(max_abs_diff(a.weights[l], b.weights[l]) == 0.0);
    CHECK(max_abs_diff(a.biases[l], b.biases[l]) == 0.0);
  }
}

TEST_CASE("model persistence round trips bit-exactly") {
  testutil::TempDir tmp("model");
  nn::NetworkSpec spec;
  spec.input_dim = 7;
  spec.hidden_dims = {9, 4};
  spec.output_dim = 3;
  spec.dropout_rates = {0.3, 0.1};
  spec.output_activation = nn::OutputActivation::Identity;
  const nn::MlpModel model = nn::init_mlp(spec, 31);

  const auto p1 = tmp.file("m1.cdxt");
  const auto p2 = tmp.file("m2.cdxt");
  nn::save_model(p1, model, {{"config_hash", "feedc0ffee000000"}});
  const nn::MlpModel back = nn::load_model(p1);
  CHECK(back.spec.input_dim == spec.input_dim);
  CHECK(back.spec.hidden_dims == spec.hidden_dims);
  CHECK(back.spec.dropout_rates == spec.dropout_rates);
  CHECK(back.spec.output_activation == spec.output_activation);
  nn::save_model(p2, back, {{"config_hash", "feedc0ffee000000"}});
  CHECK(testutil::slurp(p1) == testutil::slurp(p2));

  // f32 storage: reloaded predictions equal the f32-rounded original.
  Rng rng(12);
  const MatrixXd inputs = random_matrix(rng, 7, 6);
  const MatrixXd pa = nn::predict(model, inputs);
  const MatrixXd pb = nn::predict(back, inputs);
  CHECK((pa - pb).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("spec validation rejects malformed layouts") {
  nn::NetworkSpec spec;
  spec.input_dim = 0;
  spec.output_dim = 2;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec.input_dim = 3;
  spec.output_dim = 0;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec.output_dim = 2;
  spec.hidden_dims = {4};
  spec.dropout_rates = {0.5, 0.5};  // one rate per hidden layer
  CHECK_THROWS_AS(spec.validate(), Error);
  spec.dropout_rates = {1.0};
  CHECK_THROWS_AS(spec.validate(), Error);
  spec.dropout_rates = {0.5};
  CHECK_NOTHROW(spec.validate());

  nn::TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
