#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

// Feedforward network machinery: dense layers with ReLU hidden units and
// inverted dropout, sigmoid or identity output, BCE/MSE losses, exact
// backpropagation, Adam, and a seeded mini-batch training loop with
// best-dev-loss early stopping.
//
// Batches are (dim x n_samples): one column per sample. Parameters and all
// accumulation are double precision; the on-disk tensor container stores f32.

namespace codex::nn {

enum class OutputActivation { Sigmoid, Identity };
enum class LossKind { Bce, Mse };

struct NetworkSpec {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int output_dim = 0;
  std::vector<double> dropout_rates;  // one per hidden layer, in [0,1)
  OutputActivation output_activation = OutputActivation::Sigmoid;

  void validate() const;  // throws SpecInvalid
  int n_layers() const { return static_cast<int>(hidden_dims.size()) + 1; }
};

struct MlpModel {
  NetworkSpec spec;
  std::vector<Eigen::MatrixXd> weights;  // weights[l]: (out_l x in_l)
  std::vector<Eigen::VectorXd> biases;

  long parameter_count() const;
};

// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.
MlpModel init_mlp(const NetworkSpec& spec, std::uint64_t seed);

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;         // inputs[l]: activation fed to layer l
  std::vector<Eigen::MatrixXd> preacts;        // z_l for hidden layers
  std::vector<Eigen::MatrixXd> dropout_masks;  // scaled keep masks, empty if unused
  Eigen::MatrixXd output;
};

// training=true applies inverted dropout (kept units scaled by 1/(1-rate));
// training=false ignores dropout_seed entirely.
Eigen::MatrixXd forward(const MlpModel& model, const Eigen::MatrixXd& batch, bool training,
                        std::uint64_t dropout_seed, ForwardCache* cache = nullptr);

// Mean over all elements of -[t log p + (1-t) log(1-p)], p clamped to
// [1e-7, 1 - 1e-7].
double bce_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);
double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);
double compute_loss(LossKind kind, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

// Exact gradients of the loss w.r.t. every parameter, reusing the forward
// cache (and its dropout masks). BCE requires the sigmoid output head.
Gradients backward(const MlpModel& model, const ForwardCache& cache,
                   const Eigen::MatrixXd& targets, LossKind loss);

struct TrainConfig {
  int batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_epochs = 100;
  int patience = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;
  long step = 0;

  static AdamState zeros_like(const MlpModel& model);
};

void adam_step(MlpModel& model, const Gradients& grads, AdamState& state,
               const TrainConfig& config);

struct EpochRecord {
  double train_loss = 0.0;
  double dev_loss = 0.0;
};

struct TrainHistory {
  double initial_dev_loss = 0.0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 = untrained snapshot
};

struct Dataset {
  Eigen::MatrixXd inputs;   // (input_dim x n)
  Eigen::MatrixXd targets;  // (output_dim x n)

  long size() const { return inputs.cols(); }
};

// Seeded shuffled mini-batches; per-epoch dev loss; returns the
// best-dev-loss snapshot in `model`. An empty dev set falls back to the
// train loss for early stopping.
TrainHistory train(MlpModel& model, const Dataset& train_set, const Dataset& dev_set,
                   LossKind loss, const TrainConfig& config);

// Inference in fixed-size batches; returns (output_dim x n).
Eigen::MatrixXd predict(const MlpModel& model, const Eigen::MatrixXd& inputs,
                        int batch_size = 1024);

// Model persistence in the named-tensor container; load(save(m)) is
// bit-identical at the file level.
void save_model(const std::string& path, const MlpModel& model,
                const std::vector<std::pair<std::string, std::string>>& extra_meta = {});
MlpModel load_model(const std::string& path);

}  // namespace codex::nn
