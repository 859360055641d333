#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptp/data.hpp"
#include "ptp/train.hpp"

namespace ptp {

/// Raised for malformed or out-of-range experiment configs (maps to the
/// CLI's usage exit code).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TaskConfig {
  std::string name = "keyword";  // keyword | xor
  int num_classes = 2;
  std::size_t sentence_len = 20;
  std::size_t vocab_words = 196;
  std::size_t train_size = 256;
  std::size_t dev_size = 64;
  std::size_t test_size = 128;
  bool few_shot = false;  // 32-example train and dev splits
  std::uint64_t seed = 7;

  bool operator==(const TaskConfig&) const = default;

  void validate() const {
    if (name != "keyword" && name != "xor") throw ConfigError("task.name must be 'keyword' or 'xor'");
    if (name == "xor" && num_classes != 2) throw ConfigError("task: xor is a binary task");
    if (num_classes < 2) throw ConfigError("task.num_classes must be >= 2");
    if (sentence_len < 6 || sentence_len > 48) throw ConfigError("task.sentence_len must be in [6, 48]");
    if (vocab_words < 24 || vocab_words > 196) throw ConfigError("task.vocab_words must be in [24, 196]");
    if (train_size == 0 || dev_size == 0 || test_size == 0)
      throw ConfigError("task split sizes must be positive");
    if (few_shot && (train_size != 32 || dev_size != 32))
      throw ConfigError("task: few_shot requires train_size = dev_size = 32");
  }
};

/// Complete declarative description of one experiment.
struct ExperimentConfig {
  int version = 1;
  TaskConfig task;
  BackboneConfig backbone;
  CalibrationConfig calibration;
  PromptConfig prompt;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output_dir = "out";

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const {
    if (version != 1) throw ConfigError("config version must be 1");
    task.validate();
    try {
      backbone.validate();
      prompt.validate();
      train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (task.sentence_len + 1 + prompt.length > backbone.max_len)
      throw ConfigError("backbone.max_len too small for sentence_len + [CLS] + prompt length");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
  }
};

// ---------------------------------------------------------------------------
// JSON codec (strict: unknown keys are rejected, all fields type-checked).
// ---------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* ctx) {
  if (!j.is_object()) throw ConfigError(std::string(ctx) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(std::string(ctx) + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get_field(const json& j, const char* key, const T& fallback, const char* ctx) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(ctx) + "." + key + ": wrong type");
  }
}

}  // namespace detail

inline nlohmann::json to_json(const PerturbationSpec& spec) {
  nlohmann::json j;
  if (const auto* rg = std::get_if<RgSpec>(&spec)) {
    j = {{"kind", "rg"}, {"sigma", rg->sigma}, {"count", rg->count}};
  } else if (const auto* rm = std::get_if<RmSpec>(&spec)) {
    j = {{"kind", "rm"}, {"count", rm->count}};
  } else if (const auto* pgd = std::get_if<PgdSpec>(&spec)) {
    j = {{"kind", "pgd"}, {"alpha", pgd->alpha}, {"eps", pgd->eps}, {"iters", pgd->iters},
         {"use_sign", pgd->use_sign}};
  } else if (const auto* a2t = std::get_if<A2tSpec>(&spec)) {
    j = {{"kind", "a2t"}, {"min_cos", a2t->min_cos}, {"max_swap_frac", a2t->max_swap_frac},
         {"knn", a2t->knn}};
  }
  return j;
}

inline std::optional<PerturbationSpec> perturbation_from_json(const nlohmann::json& j) {
  using detail::get_field;
  const auto kind = get_field<std::string>(j, "kind", "none", "perturbation");
  if (kind == "none") {
    detail::check_keys(j, {"kind"}, "perturbation");
    return std::nullopt;
  }
  if (kind == "rg") {
    detail::check_keys(j, {"kind", "sigma", "count"}, "perturbation");
    RgSpec s;
    s.sigma = get_field<double>(j, "sigma", s.sigma, "perturbation");
    s.count = get_field<std::size_t>(j, "count", s.count, "perturbation");
    return PerturbationSpec{s};
  }
  if (kind == "rm") {
    detail::check_keys(j, {"kind", "count"}, "perturbation");
    RmSpec s;
    s.count = get_field<std::size_t>(j, "count", s.count, "perturbation");
    return PerturbationSpec{s};
  }
  if (kind == "pgd") {
    detail::check_keys(j, {"kind", "alpha", "eps", "iters", "use_sign"}, "perturbation");
    PgdSpec s;
    s.alpha = get_field<double>(j, "alpha", s.alpha, "perturbation");
    s.eps = get_field<double>(j, "eps", s.eps, "perturbation");
    s.iters = get_field<std::size_t>(j, "iters", s.iters, "perturbation");
    s.use_sign = get_field<bool>(j, "use_sign", s.use_sign, "perturbation");
    return PerturbationSpec{s};
  }
  if (kind == "a2t") {
    detail::check_keys(j, {"kind", "min_cos", "max_swap_frac", "knn"}, "perturbation");
    A2tSpec s;
    s.min_cos = get_field<double>(j, "min_cos", s.min_cos, "perturbation");
    s.max_swap_frac = get_field<double>(j, "max_swap_frac", s.max_swap_frac, "perturbation");
    s.knn = get_field<std::size_t>(j, "knn", s.knn, "perturbation");
    return PerturbationSpec{s};
  }
  throw ConfigError("perturbation.kind must be one of none|rg|rm|pgd|a2t");
}

inline nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["version"] = cfg.version;
  j["task"] = {{"name", cfg.task.name},
               {"num_classes", cfg.task.num_classes},
               {"sentence_len", cfg.task.sentence_len},
               {"vocab_words", cfg.task.vocab_words},
               {"train_size", cfg.task.train_size},
               {"dev_size", cfg.task.dev_size},
               {"test_size", cfg.task.test_size},
               {"few_shot", cfg.task.few_shot},
               {"seed", cfg.task.seed}};
  j["backbone"] = {{"layers", cfg.backbone.layers},
                   {"dim", cfg.backbone.dim},
                   {"heads", cfg.backbone.heads},
                   {"ffn_mult", cfg.backbone.ffn_mult},
                   {"max_len", cfg.backbone.max_len},
                   {"use_positions", cfg.backbone.use_positions},
                   {"init_std", cfg.backbone.init_std},
                   {"seed", cfg.backbone.seed}};
  j["calibration"] = {{"epochs", cfg.calibration.epochs},
                      {"batch_size", cfg.calibration.batch_size},
                      {"learning_rate", cfg.calibration.learning_rate}};
  j["prompt"] = {{"mode", cfg.prompt.mode == PromptMode::kPerLayerPrefix ? "per_layer_prefix"
                                                                         : "input_prepend"},
                 {"length", cfg.prompt.length},
                 {"reparam", cfg.prompt.reparam == ReparamKind::kMlp ? "mlp" : "identity"},
                 {"reparam_hidden", cfg.prompt.reparam_hidden}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"learning_rate", cfg.train.learning_rate},
                {"optimizer", cfg.train.optimizer == OptimizerKind::kSgd ? "sgd" : "adam"},
                {"adam_beta1", cfg.train.adam_beta1},
                {"adam_beta2", cfg.train.adam_beta2},
                {"adam_eps", cfg.train.adam_eps},
                {"perturbation", cfg.train.perturbation ? to_json(*cfg.train.perturbation)
                                                        : nlohmann::json{{"kind", "none"}}},
                {"frozen", cfg.train.frozen},
                {"seed", cfg.train.seed},
                {"patience", cfg.train.patience}};
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  return j;
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::get_field;
  check_keys(j, {"version", "task", "backbone", "calibration", "prompt", "train", "seeds", "output_dir"},
             "config");
  ExperimentConfig cfg;
  cfg.version = get_field<int>(j, "version", cfg.version, "config");

  if (j.contains("task")) {
    const auto& t = j.at("task");
    check_keys(t, {"name", "num_classes", "sentence_len", "vocab_words", "train_size", "dev_size",
                   "test_size", "few_shot", "seed"},
               "task");
    cfg.task.name = get_field<std::string>(t, "name", cfg.task.name, "task");
    cfg.task.num_classes = get_field<int>(t, "num_classes", cfg.task.num_classes, "task");
    cfg.task.sentence_len = get_field<std::size_t>(t, "sentence_len", cfg.task.sentence_len, "task");
    cfg.task.vocab_words = get_field<std::size_t>(t, "vocab_words", cfg.task.vocab_words, "task");
    cfg.task.train_size = get_field<std::size_t>(t, "train_size", cfg.task.train_size, "task");
    cfg.task.dev_size = get_field<std::size_t>(t, "dev_size", cfg.task.dev_size, "task");
    cfg.task.test_size = get_field<std::size_t>(t, "test_size", cfg.task.test_size, "task");
    cfg.task.few_shot = get_field<bool>(t, "few_shot", cfg.task.few_shot, "task");
    cfg.task.seed = get_field<std::uint64_t>(t, "seed", cfg.task.seed, "task");
  }
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    check_keys(b, {"layers", "dim", "heads", "ffn_mult", "max_len", "use_positions", "init_std", "seed"},
               "backbone");
    cfg.backbone.layers = get_field<std::size_t>(b, "layers", cfg.backbone.layers, "backbone");
    cfg.backbone.dim = get_field<std::size_t>(b, "dim", cfg.backbone.dim, "backbone");
    cfg.backbone.heads = get_field<std::size_t>(b, "heads", cfg.backbone.heads, "backbone");
    cfg.backbone.ffn_mult = get_field<std::size_t>(b, "ffn_mult", cfg.backbone.ffn_mult, "backbone");
    cfg.backbone.max_len = get_field<std::size_t>(b, "max_len", cfg.backbone.max_len, "backbone");
    cfg.backbone.use_positions = get_field<bool>(b, "use_positions", cfg.backbone.use_positions, "backbone");
    cfg.backbone.init_std = get_field<double>(b, "init_std", cfg.backbone.init_std, "backbone");
    cfg.backbone.seed = get_field<std::uint64_t>(b, "seed", cfg.backbone.seed, "backbone");
  }
  if (j.contains("calibration")) {
    const auto& c = j.at("calibration");
    check_keys(c, {"epochs", "batch_size", "learning_rate"}, "calibration");
    cfg.calibration.epochs = get_field<std::size_t>(c, "epochs", cfg.calibration.epochs, "calibration");
    cfg.calibration.batch_size =
        get_field<std::size_t>(c, "batch_size", cfg.calibration.batch_size, "calibration");
    cfg.calibration.learning_rate =
        get_field<double>(c, "learning_rate", cfg.calibration.learning_rate, "calibration");
  }
  if (j.contains("prompt")) {
    const auto& p = j.at("prompt");
    check_keys(p, {"mode", "length", "reparam", "reparam_hidden"}, "prompt");
    const auto mode = get_field<std::string>(p, "mode", "input_prepend", "prompt");
    if (mode == "input_prepend")
      cfg.prompt.mode = PromptMode::kInputPrepend;
    else if (mode == "per_layer_prefix")
      cfg.prompt.mode = PromptMode::kPerLayerPrefix;
    else
      throw ConfigError("prompt.mode must be input_prepend or per_layer_prefix");
    cfg.prompt.length = get_field<std::size_t>(p, "length", cfg.prompt.length, "prompt");
    const auto rep = get_field<std::string>(p, "reparam", "identity", "prompt");
    if (rep == "identity")
      cfg.prompt.reparam = ReparamKind::kIdentity;
    else if (rep == "mlp")
      cfg.prompt.reparam = ReparamKind::kMlp;
    else
      throw ConfigError("prompt.reparam must be identity or mlp");
    cfg.prompt.reparam_hidden = get_field<std::size_t>(p, "reparam_hidden", cfg.prompt.reparam_hidden, "prompt");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, {"epochs", "batch_size", "learning_rate", "optimizer", "adam_beta1", "adam_beta2",
                   "adam_eps", "perturbation", "frozen", "seed", "patience"},
               "train");
    cfg.train.epochs = get_field<std::size_t>(t, "epochs", cfg.train.epochs, "train");
    cfg.train.batch_size = get_field<std::size_t>(t, "batch_size", cfg.train.batch_size, "train");
    cfg.train.learning_rate = get_field<double>(t, "learning_rate", cfg.train.learning_rate, "train");
    const auto opt = get_field<std::string>(t, "optimizer", "adam", "train");
    if (opt == "adam")
      cfg.train.optimizer = OptimizerKind::kAdam;
    else if (opt == "sgd")
      cfg.train.optimizer = OptimizerKind::kSgd;
    else
      throw ConfigError("train.optimizer must be adam or sgd");
    cfg.train.adam_beta1 = get_field<double>(t, "adam_beta1", cfg.train.adam_beta1, "train");
    cfg.train.adam_beta2 = get_field<double>(t, "adam_beta2", cfg.train.adam_beta2, "train");
    cfg.train.adam_eps = get_field<double>(t, "adam_eps", cfg.train.adam_eps, "train");
    if (t.contains("perturbation")) cfg.train.perturbation = perturbation_from_json(t.at("perturbation"));
    cfg.train.frozen = get_field<bool>(t, "frozen", cfg.train.frozen, "train");
    cfg.train.seed = get_field<std::uint64_t>(t, "seed", cfg.train.seed, "train");
    cfg.train.patience = get_field<std::size_t>(t, "patience", cfg.train.patience, "train");
  }
  cfg.seeds = get_field<std::vector<std::uint64_t>>(j, "seeds", cfg.seeds, "config");
  cfg.output_dir = get_field<std::string>(j, "output_dir", cfg.output_dir, "config");
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in '" + path + "': " + e.what());
  }
  return experiment_from_json(j);
}

inline void save_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write config file '" + path + "'");
  os << to_json(cfg).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Config -> runnable pieces
// ---------------------------------------------------------------------------

inline DatasetSplit build_dataset(const ExperimentConfig& cfg) {
  const TaskSizes sizes{cfg.task.few_shot ? 32 : cfg.task.train_size,
                        cfg.task.few_shot ? 32 : cfg.task.dev_size, cfg.task.test_size};
  return gen_task(cfg.task.name, cfg.task.seed, sizes, cfg.task.num_classes, cfg.task.sentence_len,
                  cfg.task.vocab_words);
}

inline ModelState build_calibrated_model(const ExperimentConfig& cfg, const DatasetSplit& data) {
  return build_calibrated_model(cfg.backbone, cfg.prompt, data.info.vocab.size(),
                                data.info.num_classes, data, cfg.calibration);
}

/// Train config for one member run of a seed sweep.
inline TrainConfig train_config_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  return tc;
}

inline TrainResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const DatasetSplit data = build_dataset(cfg);
  const ModelState model = build_calibrated_model(cfg, data);
  return train_run(model, cfg.train, data);
}

/// Short description used in reports (method column).
inline std::string method_name(const ExperimentConfig& cfg) {
  if (!cfg.train.perturbation) return "vanilla_pt";
  return "ptp_" + spec_kind(*cfg.train.perturbation);
}

}  // namespace ptp
