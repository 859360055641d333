#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ptp/data.hpp"
#include "ptp/model.hpp"
#include "ptp/perturb.hpp"
#include "ptp/rng.hpp"
#include "ptp/tensor.hpp"

namespace ptp {

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double learning_rate = 5e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::optional<PerturbationSpec> perturbation;
  bool frozen = true;
  std::uint64_t seed = 1;
  std::size_t patience = 10;

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (perturbation) validate_spec(*perturbation);
  }
};

/// SGD or Adam over an explicit parameter list. Gradients are consumed from
/// the tensors' grad buffers; call zero_grad() after each step.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps,
            std::vector<Tensor> params)
      : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), params_(std::move(params)) {
    if (kind_ == OptimizerKind::kAdam) {
      m_.resize(params_.size());
      v_.resize(params_.size());
      for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].size(), 0.0);
        v_[i].assign(params_[i].size(), 0.0);
      }
    }
  }

  static Optimizer from_config(const TrainConfig& cfg, std::vector<Tensor> params) {
    return Optimizer(cfg.optimizer, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                     std::move(params));
  }

  const std::vector<Tensor>& params() const { return params_; }
  std::size_t step_count() const { return steps_; }

  void step() {
    ++steps_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      std::vector<double>& g = p.grad();
      std::vector<double>& val = p.values();
      if (kind_ == OptimizerKind::kSgd) {
        for (std::size_t j = 0; j < val.size(); ++j) val[j] -= lr_ * g[j];
      } else {
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
        for (std::size_t j = 0; j < val.size(); ++j) {
          m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
          v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
          const double mhat = m_[i][j] / bc1;
          const double vhat = v_[i][j] / bc2;
          val[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
      }
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Accuracy and macro-F1 from a prediction/label pairing. Classes with an
/// empty F1 denominator contribute zero.
inline Metrics metrics_from_predictions(const std::vector<int>& preds, const std::vector<int>& labels,
                                        int num_classes) {
  if (preds.empty() || preds.size() != labels.size())
    throw std::invalid_argument("metrics_from_predictions: bad prediction/label lists");
  const auto k = static_cast<std::size_t>(num_classes);
  std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == labels[i]) {
      ++correct;
      ++tp[static_cast<std::size_t>(preds[i])];
    } else {
      ++fp[static_cast<std::size_t>(preds[i])];
      ++fn[static_cast<std::size_t>(labels[i])];
    }
  }
  Metrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
  }
  m.macro_f1 = f1_sum / static_cast<double>(k);
  return m;
}

/// Accuracy and macro-F1 of argmax predictions over a split.
inline Metrics evaluate(const ModelState& state, const PromptState& prompt,
                        const std::vector<Example>& split) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<int> preds, labels;
  preds.reserve(split.size());
  labels.reserve(split.size());
  for (const Example& ex : split) {
    preds.push_back(predict(state, prompt, ex.tokens));
    labels.push_back(ex.label);
  }
  return metrics_from_predictions(preds, labels, state.num_classes());
}

namespace detail {

/// One item of a (possibly perturbed) training batch: token ids, or an
/// embedding-space override of E_s.
struct BatchItem {
  std::vector<int> tokens;
  Tensor es_override;  // undefined -> embed from tokens
  int label = 0;
};

}  // namespace detail

/// Drives updates for one run: owns the optimizer, the update counter, and
/// the perturbation RNG stream. The trainable set is the prompt parameters
/// when the model is frozen, otherwise prompts plus the full backbone.
class Trainer {
 public:
  Trainer(ModelState& model, PromptState& prompt, const TrainConfig& cfg,
          std::vector<Tensor> trainable_override = {})
      : model_(model),
        prompt_(prompt),
        cfg_(cfg),
        optimizer_(Optimizer::from_config(cfg, trainable_override.empty()
                                                   ? default_trainable(model, prompt, cfg)
                                                   : std::move(trainable_override))),
        perturb_rng_(make_rng(cfg.seed, RngStream::kPerturb)) {}

  std::size_t update_count() const { return optimizer_.step_count(); }
  Rng& perturb_rng() { return perturb_rng_; }

  /// Forward, cross-entropy, backward, one optimizer update. Returns the
  /// pre-update mean batch loss.
  double standard_step(std::span<const Example> batch) {
    if (batch.empty()) throw std::invalid_argument("standard_step: empty batch");
    std::vector<detail::BatchItem> items(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      items[i].tokens = batch[i].tokens;
      items[i].label = batch[i].label;
    }
    return update_on(items);
  }

  /// One clean update followed by one update on perturbed inputs with the
  /// original labels. Returns (clean loss, perturbed loss), each pre-update.
  std::pair<double, double> ptp_step(std::span<const Example> batch, const PerturbationSpec& spec) {
    validate_spec(spec);
    const double clean_loss = standard_step(batch);

    // Perturbation generation: parameters are read-only here; the operators
    // zero any gradient they accumulate before returning.
    std::vector<detail::BatchItem> items(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Example& ex = batch[i];
      Perturbation p = apply_perturbation(model_, prompt_, ex.tokens, ex.label, spec, perturb_rng_);
      items[i].label = ex.label;
      if (p.space == Perturbation::Space::kText) {
        items[i].tokens = p.tokens;
      } else {
        Tape tape(/*recording=*/false);
        Tensor es = embed(tape, model_, ex.tokens);
        std::vector<double> vals = es.values();
        for (std::size_t j = 0; j < vals.size(); ++j) vals[j] += p.delta.values()[j];
        items[i].tokens = ex.tokens;
        items[i].es_override = Tensor::from_data(es.shape(), std::move(vals));
      }
    }
    const double perturbed_loss = update_on(items);
    return {clean_loss, perturbed_loss};
  }

  /// Mean batch loss at the current parameters, no update.
  double batch_loss(std::span<const Example> batch) const {
    double total = 0.0;
    for (const Example& ex : batch) total += example_loss(model_, prompt_, ex.tokens, ex.label);
    return total / static_cast<double>(batch.size());
  }

 private:
  static std::vector<Tensor> default_trainable(ModelState& model, PromptState& prompt,
                                               const TrainConfig& cfg) {
    std::vector<Tensor> params = prompt.params();
    if (!cfg.frozen)
      for (auto& t : model.backbone_params()) params.push_back(t);
    return params;
  }

  double update_on(const std::vector<detail::BatchItem>& items) {
    Tape tape;
    Tensor total;
    for (const auto& item : items) {
      Tensor es = item.es_override.defined() ? item.es_override : embed(tape, model_, item.tokens);
      Tensor logits = forward(tape, model_, compose(tape, model_, prompt_, es));
      Tensor loss = softmax_cross_entropy(tape, logits, item.label);
      total = total.defined() ? add(tape, total, loss) : loss;
    }
    Tensor mean_loss = scale(tape, total, 1.0 / static_cast<double>(items.size()));
    const double loss_value = mean_loss.item();
    if (!std::isfinite(loss_value))
      throw std::runtime_error("non-finite training loss (" + std::to_string(loss_value) + ")");
    tape.backward(mean_loss);
    optimizer_.step();
    optimizer_.zero_grad();
    return loss_value;
  }

  ModelState& model_;
  PromptState& prompt_;
  TrainConfig cfg_;
  Optimizer optimizer_;
  Rng perturb_rng_;
};

struct TrainResult {
  ModelState model;          // trained model (backbone unchanged when frozen)
  PromptState final_prompt;
  PromptState best_prompt;   // checkpoint at the best dev epoch
  std::vector<double> train_loss;
  std::vector<double> dev_accuracy;
  std::vector<double> dev_macro_f1;
  double best_dev_accuracy = 0.0;
  std::size_t best_epoch = 0;  // 1-based
  std::size_t epochs_completed = 0;
  std::size_t update_count = 0;
  double wall_clock_sec = 0.0;
};

/// Full training run from a prebuilt model: prompt initialized from the run
/// seed, epochs of (perturbed) steps, per-epoch dev evaluation, best-dev
/// checkpointing, early stopping. Fully reproducible from the seed.
inline TrainResult train_run(const ModelState& base_model, const TrainConfig& cfg,
                             const DatasetSplit& data) {
  cfg.validate();
  if (data.train.empty() || data.dev.empty()) throw std::invalid_argument("train_run: empty split");
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult result;
  result.model = base_model.clone();
  result.model.set_frozen(cfg.frozen);
  PromptState prompt =
      PromptState::init(result.model.prompt_config(), result.model.backbone_config(), cfg.seed);
  Trainer trainer(result.model, prompt, cfg);
  Rng shuffle_rng = make_rng(cfg.seed, RngStream::kShuffle);

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0, batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Example> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(data.train[order[i]]);
      try {
        double loss = cfg.perturbation ? trainer.ptp_step(batch, *cfg.perturbation).first
                                       : trainer.standard_step(batch);
        loss_sum += loss * static_cast<double>(batch.size());
        seen += batch.size();
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("train_run aborted at epoch " + std::to_string(epoch) + " batch " +
                                 std::to_string(batch_index) + ": " + e.what());
      }
    }
    result.train_loss.push_back(loss_sum / static_cast<double>(seen));
    const Metrics dev = evaluate(result.model, prompt, data.dev);
    result.dev_accuracy.push_back(dev.accuracy);
    result.dev_macro_f1.push_back(dev.macro_f1);
    result.epochs_completed = epoch;
    if (epoch == 1 || dev.accuracy > result.best_dev_accuracy) {
      result.best_dev_accuracy = dev.accuracy;
      result.best_epoch = epoch;
      result.best_prompt = prompt.clone();
    }
    if (epoch - result.best_epoch >= cfg.patience) break;
  }
  result.final_prompt = prompt;
  result.update_count = trainer.update_count();
  result.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

struct CalibrationConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double learning_rate = 5e-3;

  bool operator==(const CalibrationConfig&) const = default;
};

/// Stand-in for pretraining: starting from the seeded random init, briefly
/// train the classification head jointly with a throwaway prompt on the
/// task's train split, then freeze everything but the prompts. Deterministic
/// in the backbone seed alone, so every run of a task shares one backbone.
inline ModelState build_calibrated_model(const BackboneConfig& bcfg, const PromptConfig& pcfg,
                                         std::size_t vocab_size, int num_classes,
                                         const DatasetSplit& data, const CalibrationConfig& ccfg) {
  ModelState model = ModelState::init(bcfg, pcfg, vocab_size, num_classes);
  if (ccfg.epochs == 0) return model;
  PromptState calib_prompt = PromptState::init(pcfg, bcfg, bcfg.seed ^ 0x9e3779b97f4a7c15ULL);

  TrainConfig tc;
  tc.epochs = ccfg.epochs;
  tc.batch_size = ccfg.batch_size;
  tc.learning_rate = ccfg.learning_rate;
  tc.seed = bcfg.seed;

  std::vector<Tensor> trainable = calib_prompt.params();
  trainable.push_back(model.head_w);
  trainable.push_back(model.head_b);
  Trainer trainer(model, calib_prompt, tc, std::move(trainable));
  Rng shuffle_rng = make_rng(bcfg.seed, RngStream::kShuffle);

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 1; epoch <= ccfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::vector<Example> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(data.train[order[i]]);
      trainer.standard_step(batch);
    }
  }
  return model;
}

}  // namespace ptp
