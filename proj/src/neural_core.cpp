#include "neural_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "util/errors.hpp"
#include "util/rng.hpp"
#include "util/tensor_file.hpp"
#include "util/text.hpp"

namespace codex::nn {
namespace {

// Substream tags so init / shuffling / dropout draws never alias.
constexpr std::uint64_t kStreamInit = 0x696e6974ULL;
constexpr std::uint64_t kStreamShuffle = 0x73687566ULL;
constexpr std::uint64_t kStreamDropout = 0x64726f70ULL;

constexpr double kProbClamp = 1e-7;

std::string format_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
  return ((-z.array()).exp() + 1.0).inverse().matrix();
}

std::vector<int> layer_dims(const NetworkSpec& spec) {
  std::vector<int> dims;
  dims.push_back(spec.input_dim);
  dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  dims.push_back(spec.output_dim);
  return dims;
}

}  // namespace

void NetworkSpec::validate() const {
  if (input_dim <= 0) throw Error(Err::SpecInvalid, "input_dim must be positive");
  if (output_dim <= 0) throw Error(Err::SpecInvalid, "output_dim must be positive");
  for (int h : hidden_dims)
    if (h <= 0) throw Error(Err::SpecInvalid, "hidden layer width must be positive");
  if (!dropout_rates.empty() && dropout_rates.size() != hidden_dims.size())
    throw Error(Err::SpecInvalid, "need one dropout rate per hidden layer");
  for (double r : dropout_rates)
    if (!(r >= 0.0 && r < 1.0)) throw Error(Err::SpecInvalid, "dropout rate outside [0,1)");
}

long MlpModel::parameter_count() const {
  long n = 0;
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

MlpModel init_mlp(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  MlpModel model;
  model.spec = spec;
  if (model.spec.dropout_rates.empty())
    model.spec.dropout_rates.assign(spec.hidden_dims.size(), 0.0);
  const auto dims = layer_dims(spec);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng(derive_seed(seed, kStreamInit, l));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-bound, bound);
    model.weights.push_back(std::move(w));
    model.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return model;
}

Eigen::MatrixXd forward(const MlpModel& model, const Eigen::MatrixXd& batch, bool training,
                        std::uint64_t dropout_seed, ForwardCache* cache) {
  if (batch.rows() != model.spec.input_dim)
    throw Error(Err::ShapeMismatch, "batch has " + std::to_string(batch.rows()) +
                                        " rows, expected " +
                                        std::to_string(model.spec.input_dim));
  const std::size_t n_hidden = model.spec.hidden_dims.size();
  if (cache) {
    cache->inputs.clear();
    cache->preacts.clear();
    cache->dropout_masks.clear();
  }

  Eigen::MatrixXd a = batch;
  for (std::size_t l = 0; l < n_hidden; ++l) {
    if (cache) cache->inputs.push_back(a);
    Eigen::MatrixXd z = (model.weights[l] * a).colwise() + model.biases[l];
    Eigen::MatrixXd h = z.cwiseMax(0.0);
    const double rate = model.spec.dropout_rates[l];
    Eigen::MatrixXd mask;
    if (training && rate > 0.0) {
      // Inverted dropout: kept units pre-scaled by 1/keep so inference needs
      // no correction. Mask drawn in storage order for reproducibility.
      const double keep = 1.0 - rate;
      Rng rng(derive_seed(dropout_seed, kStreamDropout, l));
      mask.resize(h.rows(), h.cols());
      double* m = mask.data();
      for (Eigen::Index i = 0; i < mask.size(); ++i)
        m[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
      h = h.cwiseProduct(mask);
    }
    if (cache) {
      cache->preacts.push_back(std::move(z));
      cache->dropout_masks.push_back(std::move(mask));
    }
    a = std::move(h);
  }

  if (cache) cache->inputs.push_back(a);
  Eigen::MatrixXd z = (model.weights[n_hidden] * a).colwise() + model.biases[n_hidden];
  Eigen::MatrixXd out = model.spec.output_activation == OutputActivation::Sigmoid
                            ? sigmoid(z)
                            : std::move(z);
  if (cache) cache->output = out;
  return out;
}

double bce_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw Error(Err::ShapeMismatch, "prediction/target shapes differ");
  if (pred.size() == 0) throw Error(Err::EmptyDataset, "loss over zero elements");
  const auto p = pred.array().min(1.0 - kProbClamp).max(kProbClamp);
  const auto t = target.array();
  return -(t * p.log() + (1.0 - t) * (1.0 - p).log()).mean();
}

double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw Error(Err::ShapeMismatch, "prediction/target shapes differ");
  if (pred.size() == 0) throw Error(Err::EmptyDataset, "loss over zero elements");
  return (pred - target).array().square().mean();
}

double compute_loss(LossKind kind, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  return kind == LossKind::Bce ? bce_loss(pred, target) : mse_loss(pred, target);
}

Gradients backward(const MlpModel& model, const ForwardCache& cache,
                   const Eigen::MatrixXd& targets, LossKind loss) {
  const std::size_t n_layers = model.weights.size();
  const Eigen::MatrixXd& out = cache.output;
  if (out.rows() != targets.rows() || out.cols() != targets.cols())
    throw Error(Err::ShapeMismatch, "prediction/target shapes differ");
  const double n = static_cast<double>(out.size());

  // Gradient w.r.t. the output pre-activation; the sigmoid+BCE head fuses to
  // (p - t)/n exactly.
  Eigen::MatrixXd delta;
  if (loss == LossKind::Bce) {
    if (model.spec.output_activation != OutputActivation::Sigmoid)
      throw Error(Err::SpecInvalid, "BCE requires the sigmoid output head");
    delta = (out - targets) / n;
  } else {
    delta = 2.0 * (out - targets) / n;
    if (model.spec.output_activation == OutputActivation::Sigmoid)
      delta = delta.cwiseProduct((out.array() * (1.0 - out.array())).matrix());
  }

  Gradients grads;
  grads.weights.resize(n_layers);
  grads.biases.resize(n_layers);
  for (std::size_t l = n_layers; l-- > 0;) {
    grads.weights[l] = delta * cache.inputs[l].transpose();
    grads.biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd up = model.weights[l].transpose() * delta;
    if (cache.dropout_masks[l - 1].size() > 0)
      up = up.cwiseProduct(cache.dropout_masks[l - 1]);
    delta = up.cwiseProduct((cache.preacts[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return grads;
}

void TrainConfig::validate() const {
  if (batch_size <= 0) throw Error(Err::SpecInvalid, "batch_size must be positive");
  if (!(learning_rate > 0.0)) throw Error(Err::SpecInvalid, "learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw Error(Err::SpecInvalid, "Adam betas must lie in [0,1)");
  if (!(epsilon > 0.0)) throw Error(Err::SpecInvalid, "epsilon must be positive");
  if (max_epochs < 0) throw Error(Err::SpecInvalid, "max_epochs must be non-negative");
  if (patience < 0) throw Error(Err::SpecInvalid, "patience must be non-negative");
}

AdamState AdamState::zeros_like(const MlpModel& model) {
  AdamState s;
  for (const auto& w : model.weights) {
    s.m_w.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    s.v_w.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  }
  for (const auto& b : model.biases) {
    s.m_b.push_back(Eigen::VectorXd::Zero(b.size()));
    s.v_b.push_back(Eigen::VectorXd::Zero(b.size()));
  }
  return s;
}

void adam_step(MlpModel& model, const Gradients& grads, AdamState& state,
               const TrainConfig& config) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  const double lr = config.learning_rate;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
      m = config.beta1 * m + (1.0 - config.beta1) * g;
      v.array() = config.beta2 * v.array() + (1.0 - config.beta2) * g.array().square();
      param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.epsilon);
    };
    update(model.weights[l], state.m_w[l], state.v_w[l], grads.weights[l]);
    update(model.biases[l], state.m_b[l], state.v_b[l], grads.biases[l]);
  }
}

TrainHistory train(MlpModel& model, const Dataset& train_set, const Dataset& dev_set,
                   LossKind loss, const TrainConfig& config) {
  config.validate();
  if (train_set.size() == 0) throw Error(Err::EmptyDataset, "empty training set");
  if (train_set.inputs.rows() != model.spec.input_dim ||
      train_set.targets.rows() != model.spec.output_dim ||
      train_set.inputs.cols() != train_set.targets.cols())
    throw Error(Err::ShapeMismatch, "training set does not match network dimensions");
  if (dev_set.size() > 0 && (dev_set.inputs.rows() != model.spec.input_dim ||
                             dev_set.targets.rows() != model.spec.output_dim ||
                             dev_set.inputs.cols() != dev_set.targets.cols()))
    throw Error(Err::ShapeMismatch, "dev set does not match network dimensions");

  // Without a dev set, early stopping monitors the train loss instead.
  const Dataset& monitor = dev_set.size() > 0 ? dev_set : train_set;
  auto monitor_loss = [&]() {
    return compute_loss(loss, predict(model, monitor.inputs), monitor.targets);
  };

  TrainHistory history;
  history.initial_dev_loss = monitor_loss();
  double best_loss = history.initial_dev_loss;
  MlpModel best_model = model;
  history.best_epoch = 0;

  AdamState adam = AdamState::zeros_like(model);
  const long n = train_set.size();
  std::vector<long> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0L);
  Eigen::MatrixXd batch_in, batch_tg;
  int epochs_without_improvement = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, kStreamShuffle, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    long batch_index = 0;
    for (long start = 0; start < n; start += config.batch_size, ++batch_index) {
      const long count = std::min<long>(config.batch_size, n - start);
      batch_in.resize(train_set.inputs.rows(), count);
      batch_tg.resize(train_set.targets.rows(), count);
      for (long j = 0; j < count; ++j) {
        batch_in.col(j) = train_set.inputs.col(order[static_cast<std::size_t>(start + j)]);
        batch_tg.col(j) = train_set.targets.col(order[static_cast<std::size_t>(start + j)]);
      }
      const std::uint64_t drop_seed = derive_seed(
          config.seed, kStreamDropout, static_cast<std::uint64_t>(epoch),
          static_cast<std::uint64_t>(batch_index));
      ForwardCache cache;
      Eigen::MatrixXd pred = forward(model, batch_in, true, drop_seed, &cache);
      loss_sum += compute_loss(loss, pred, batch_tg) * static_cast<double>(count);
      Gradients grads = backward(model, cache, batch_tg, loss);
      adam_step(model, grads, adam, config);
    }

    EpochRecord record;
    record.train_loss = loss_sum / static_cast<double>(n);
    record.dev_loss = monitor_loss();
    history.epochs.push_back(record);

    if (record.dev_loss < best_loss) {
      best_loss = record.dev_loss;
      best_model = model;
      history.best_epoch = epoch;
      epochs_without_improvement = 0;
    } else {
      ++epochs_without_improvement;
      if (epochs_without_improvement >= std::max(config.patience, 1)) break;
    }
  }

  model = std::move(best_model);
  return history;
}

Eigen::MatrixXd predict(const MlpModel& model, const Eigen::MatrixXd& inputs, int batch_size) {
  if (inputs.rows() != model.spec.input_dim)
    throw Error(Err::ShapeMismatch, "input has " + std::to_string(inputs.rows()) +
                                        " rows, expected " +
                                        std::to_string(model.spec.input_dim));
  Eigen::MatrixXd out(model.spec.output_dim, inputs.cols());
  for (long start = 0; start < inputs.cols(); start += batch_size) {
    const long count = std::min<long>(batch_size, inputs.cols() - start);
    out.middleCols(start, count) =
        forward(model, inputs.middleCols(start, count), false, 0);
  }
  return out;
}

void save_model(const std::string& path, const MlpModel& model,
                const std::vector<std::pair<std::string, std::string>>& extra_meta) {
  TensorFile tf;
  tf.set_meta("kind", "mlp");
  tf.set_meta("input_dim", std::to_string(model.spec.input_dim));
  tf.set_meta("output_dim", std::to_string(model.spec.output_dim));
  std::vector<std::string> hid, rates;
  for (int h : model.spec.hidden_dims) hid.push_back(std::to_string(h));
  for (double r : model.spec.dropout_rates) rates.push_back(format_exact(r));
  tf.set_meta("hidden_dims", hid.empty() ? "-" : join(hid, ","));
  tf.set_meta("dropout_rates", rates.empty() ? "-" : join(rates, ","));
  tf.set_meta("output_activation",
              model.spec.output_activation == OutputActivation::Sigmoid ? "sigmoid" : "identity");
  for (const auto& [k, v] : extra_meta) tf.set_meta(k, v);

  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    const auto& w = model.weights[l];
    Tensor tw;
    tw.name = "layers." + std::to_string(l) + ".weight";
    tw.shape = {w.rows(), w.cols()};
    tw.data.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) tw.data.push_back(static_cast<float>(w(r, c)));
    tf.add(std::move(tw));

    const auto& b = model.biases[l];
    Tensor tb;
    tb.name = "layers." + std::to_string(l) + ".bias";
    tb.shape = {b.size()};
    for (Eigen::Index r = 0; r < b.size(); ++r) tb.data.push_back(static_cast<float>(b(r)));
    tf.add(std::move(tb));
  }
  tf.save(path);
}

MlpModel load_model(const std::string& path) {
  const TensorFile tf = TensorFile::load(path);
  if (!tf.has_meta("kind") || tf.meta("kind") != "mlp")
    throw Error(Err::IoError, "'" + path + "' does not hold an mlp model");

  NetworkSpec spec;
  spec.input_dim = std::stoi(tf.meta("input_dim"));
  spec.output_dim = std::stoi(tf.meta("output_dim"));
  if (tf.meta("hidden_dims") != "-")
    for (const auto& tok : split(tf.meta("hidden_dims"), ','))
      spec.hidden_dims.push_back(std::stoi(std::string(tok)));
  if (tf.meta("dropout_rates") != "-")
    for (const auto& tok : split(tf.meta("dropout_rates"), ','))
      spec.dropout_rates.push_back(std::stod(std::string(tok)));
  const std::string act = tf.meta("output_activation");
  if (act == "sigmoid")
    spec.output_activation = OutputActivation::Sigmoid;
  else if (act == "identity")
    spec.output_activation = OutputActivation::Identity;
  else
    throw Error(Err::IoError, "unknown output activation '" + act + "'");
  spec.validate();

  MlpModel model;
  model.spec = spec;
  const std::size_t n_layers = spec.hidden_dims.size() + 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Tensor& tw = tf.get("layers." + std::to_string(l) + ".weight");
    const Tensor& tb = tf.get("layers." + std::to_string(l) + ".bias");
    if (tw.shape.size() != 2 || tb.shape.size() != 1)
      throw Error(Err::ShapeMismatch, "unexpected tensor rank in '" + path + "'");
    Eigen::MatrixXd w(tw.shape[0], tw.shape[1]);
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = tw.data[i++];
    Eigen::VectorXd b(tb.shape[0]);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = tb.data[static_cast<std::size_t>(r)];
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }

  const auto dims = layer_dims(spec);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    if (model.weights[l].rows() != dims[l + 1] || model.weights[l].cols() != dims[l] ||
        model.biases[l].size() != dims[l + 1])
      throw Error(Err::ShapeMismatch, "tensor shapes disagree with header dims in '" + path + "'");
  return model;
}

}  // namespace codex::nn
