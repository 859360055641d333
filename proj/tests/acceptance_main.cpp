// Acceptance suite: one pass/fail line per criterion, exit code 0 only if
// every criterion passes. Heavier directional experiments (stability,
// performance, landscape smoothing) run on the xor/keyword tasks at the
// 32-example few-shot scale.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ptp/cli.hpp"
#include "support/finite_diff.hpp"

using namespace ptp;

namespace {

struct Criterion {
  int id;
  std::string name;
  std::function<bool(std::string&)> run;
};

// ---------------------------------------------------------------------------
// Shared experiment configs
// ---------------------------------------------------------------------------

ExperimentConfig base_experiment(const std::string& task) {
  ExperimentConfig cfg;
  cfg.task.name = task;
  cfg.task.num_classes = 2;
  cfg.task.sentence_len = 12;
  cfg.task.vocab_words = 196;
  cfg.task.train_size = 32;
  cfg.task.dev_size = 32;
  cfg.task.test_size = 128;
  cfg.task.few_shot = true;
  cfg.task.seed = 7;
  cfg.backbone.layers = 2;
  cfg.backbone.dim = 32;
  cfg.backbone.heads = 2;
  cfg.backbone.ffn_mult = 4;
  cfg.backbone.max_len = 64;
  cfg.backbone.seed = 42;
  cfg.calibration.epochs = 6;
  cfg.calibration.batch_size = 8;
  cfg.calibration.learning_rate = 5e-3;
  cfg.prompt.length = 6;
  cfg.train.epochs = 30;
  cfg.train.batch_size = 8;
  cfg.train.learning_rate = 5e-3;
  cfg.train.frozen = true;
  cfg.train.patience = 30;
  return cfg;
}

PgdSpec canonical_pgd() {
  PgdSpec spec;  // few-shot sweet spot: alpha 1e-3, 4 iterations
  spec.alpha = 1e-3;
  spec.eps = 1e-2;
  spec.iters = 4;
  spec.use_sign = true;
  return spec;
}

constexpr std::size_t kWorkers = 2;

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("ptp_acceptance_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// ---------------------------------------------------------------------------
// 1. Gradient correctness
// ---------------------------------------------------------------------------

bool primitive_grad_config(std::uint64_t seed, std::string& why) {
  Rng rng = make_rng(seed);
  const std::size_t r = 2 + rand_index(rng, 3);
  const std::size_t c = 2 * (1 + rand_index(rng, 2));
  Tensor a = Tensor::randn({r, c}, rng, 1.0, true);
  Tensor w = Tensor::randn({c, c}, rng, 1.0, true);
  Tensor bias = Tensor::randn({c}, rng, 1.0, true);
  Tensor gamma = Tensor::randn({c}, rng, 0.5, true);
  Tensor beta = Tensor::randn({c}, rng, 0.5, true);
  Tensor table = Tensor::randn({4, c}, rng, 1.0, true);

  auto build = [&](Tape& tape) {
    Tensor x = add_bias(tape, matmul(tape, a, w), bias);
    x = layer_norm(tape, x, gamma, beta);
    x = gelu(tape, x);
    Tensor lo = slice_cols(tape, x, 0, c / 2);
    Tensor hi = slice_cols(tape, x, c / 2, c);
    Tensor joined = concat_cols(tape, hi, lo);
    Tensor emb = embedding_lookup(tape, table, {0, 3});
    Tensor stacked = concat_rows(tape, joined, emb);
    Tensor probs = softmax_rows(tape, stacked);
    Tensor tr = transpose(tape, probs);
    Tensor flat = reshape(tape, tr, {tr.size() / 2, 2});
    Tensor top = slice_rows(tape, flat, 0, flat.shape()[0] / 2);
    Tensor prod = mul(tape, top, scale(tape, top, 0.5));
    return add(tape, sum(tape, prod), mean(tape, flat));
  };

  Tape tape;
  Tensor loss = build(tape);
  tape.backward(loss);
  for (Tensor t : {a, w, bias, gamma, beta, table}) {
    auto f = [&](const std::vector<double>& vals) {
      std::vector<double> saved = t.values();
      Tensor handle = t;
      handle.values() = vals;
      Tape fresh;
      const double out = build(fresh).item();
      handle.values() = saved;
      return out;
    };
    const auto fd = ptp::testing::finite_diff(f, t.values());
    const double err = ptp::testing::max_rel_err(t.grad(), fd, 1e-6);
    if (err > 1e-4) {
      why = "primitive config seed " + std::to_string(seed) + " rel err " + std::to_string(err);
      return false;
    }
  }
  return true;
}

bool model_grad_config(std::uint64_t seed, PromptMode mode, ReparamKind reparam, std::size_t layers,
                       std::size_t dim, std::size_t heads, std::string& why) {
  BackboneConfig bcfg;
  bcfg.layers = layers;
  bcfg.dim = dim;
  bcfg.heads = heads;
  bcfg.ffn_mult = 2;
  bcfg.max_len = 12;
  bcfg.seed = seed;
  PromptConfig pcfg;
  pcfg.mode = mode;
  pcfg.length = 2;
  pcfg.reparam = reparam;
  pcfg.reparam_hidden = 3;
  ModelState model = ModelState::init(bcfg, pcfg, 12, 2);
  PromptState prompt = PromptState::init(pcfg, bcfg, seed + 1);
  Rng rng = make_rng(seed, 9);
  std::vector<int> ids = {Vocabulary::kCls};
  for (int i = 0; i < 3; ++i) ids.push_back(static_cast<int>(4 + rand_index(rng, 8)));
  const int label = static_cast<int>(rand_index(rng, 2));

  auto loss_of = [&] {
    Tape tape(false);
    Tensor es = embed(tape, model, ids);
    Tensor logits = forward(tape, model, compose(tape, model, prompt, es));
    return softmax_cross_entropy(tape, logits, label).item();
  };

  Tape tape;
  Tensor es = embed(tape, model, ids);
  Tensor logits = forward(tape, model, compose(tape, model, prompt, es));
  Tensor loss = softmax_cross_entropy(tape, logits, label);
  tape.backward(loss);

  auto check_params = [&](const std::vector<std::pair<std::string, Tensor>>& params) {
    for (const auto& [name, t] : params) {
      const auto fd = ptp::testing::finite_diff_param(loss_of, t);
      const double err = ptp::testing::max_rel_err(t.grad(), fd, 1e-6);
      if (err > 1e-4) {
        why = "model config seed " + std::to_string(seed) + " param " + name + " rel err " +
              std::to_string(err);
        return false;
      }
    }
    return true;
  };
  return check_params(model.named_backbone_params()) && check_params(prompt.named_params());
}

bool criterion_gradients(std::string& why) {
  int configs = 0;
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    if (!primitive_grad_config(seed, why)) return false;
    ++configs;
  }
  const struct {
    PromptMode mode;
    ReparamKind reparam;
    std::size_t layers, dim, heads;
  } model_cases[] = {
      {PromptMode::kInputPrepend, ReparamKind::kIdentity, 1, 4, 1},
      {PromptMode::kInputPrepend, ReparamKind::kIdentity, 2, 4, 2},
      {PromptMode::kInputPrepend, ReparamKind::kMlp, 1, 6, 2},
      {PromptMode::kInputPrepend, ReparamKind::kMlp, 2, 4, 1},
      {PromptMode::kPerLayerPrefix, ReparamKind::kIdentity, 1, 4, 2},
      {PromptMode::kPerLayerPrefix, ReparamKind::kIdentity, 2, 6, 2},
      {PromptMode::kPerLayerPrefix, ReparamKind::kMlp, 2, 4, 2},
      {PromptMode::kPerLayerPrefix, ReparamKind::kMlp, 1, 8, 2},
  };
  std::uint64_t seed = 100;
  for (const auto& mc : model_cases) {
    if (!model_grad_config(seed++, mc.mode, mc.reparam, mc.layers, mc.dim, mc.heads, why)) return false;
    ++configs;
  }
  why = std::to_string(configs) + " random configurations, rel err <= 1e-4";
  return true;
}

// ---------------------------------------------------------------------------
// 2. PGD contract suite
// ---------------------------------------------------------------------------

bool criterion_pgd(std::string& why) {
  BackboneConfig bcfg;
  bcfg.layers = 2;
  bcfg.dim = 8;
  bcfg.heads = 2;
  bcfg.ffn_mult = 2;
  bcfg.max_len = 16;
  bcfg.seed = 5;
  PromptConfig pcfg;
  pcfg.length = 2;
  ModelState model = ModelState::init(bcfg, pcfg, 24, 2);
  PromptState prompt = PromptState::init(pcfg, bcfg, 71);
  const std::vector<int> ids = {Vocabulary::kCls, 5, 9, 17};
  Tape tape0(false);
  Tensor es = embed(tape0, model, ids);

  // Feasibility after every iteration.
  {
    PgdSpec spec;
    spec.alpha = 0.02;
    spec.eps = 0.03;
    spec.iters = 8;
    bool ok = true;
    std::size_t iters_seen = 0;
    pgd_perturb(model, prompt, es, 1, spec, [&](std::size_t, const Tensor& delta) {
      ++iters_seen;
      for (double v : delta.values()) ok = ok && std::abs(v) <= spec.eps;
    });
    if (!ok || iters_seen != spec.iters) {
      why = "l-inf feasibility violated during iterations";
      return false;
    }
  }
  // Single signed step vs finite-difference gradient sign.
  {
    PgdSpec spec;
    spec.alpha = 1e-3;
    spec.eps = 1.0;
    spec.iters = 1;
    Tensor out = pgd_perturb(model, prompt, es, 1, spec);
    auto loss_at = [&](const std::vector<double>& vals) {
      Tape t(false);
      Tensor e = Tensor::from_data(es.shape(), vals);
      return softmax_cross_entropy(t, forward(t, model, compose(t, model, prompt, e)), 1).item();
    };
    const auto fd = ptp::testing::finite_diff(loss_at, es.values());
    std::size_t checked = 0, agree = 0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      if (std::abs(fd[i]) <= 1e-8) continue;
      ++checked;
      const double step = out.values()[i] - es.values()[i];
      if (step != 0.0 && (step > 0) == (fd[i] > 0)) ++agree;
    }
    if (checked == 0 || static_cast<double>(agree) < 0.99 * static_cast<double>(checked)) {
      why = "signed step agrees with FD sign on only " + std::to_string(agree) + "/" +
            std::to_string(checked) + " coordinates";
      return false;
    }
  }
  // Strict ascent on the concave quadratic toy until boundary/stationarity.
  {
    Rng rng = make_rng(12);
    Tensor target = Tensor::randn({2, 3}, rng, 1.0);
    Tensor e0 = Tensor::randn({2, 3}, rng, 1.0);
    auto loss_fn = [&](Tape& t, const Tensor& e) {
      Tensor diff = add(t, e, scale(t, target, -1.0));
      return scale(t, sum(t, mul(t, diff, diff)), -1.0);
    };
    auto value_at = [&](const std::vector<double>& delta) {
      std::vector<double> vals = e0.values();
      for (std::size_t i = 0; i < vals.size(); ++i) vals[i] += delta[i];
      Tape t(false);
      return loss_fn(t, Tensor::from_data(e0.shape(), vals)).item();
    };
    PgdSpec spec;
    spec.alpha = 0.1;
    spec.eps = 0.15;
    spec.iters = 15;
    spec.use_sign = false;
    double prev = value_at(std::vector<double>(e0.size(), 0.0));
    std::vector<double> prev_delta(e0.size(), 0.0);
    bool pinned = false, ok = true;
    pgd_ascend(loss_fn, e0, spec, [&](std::size_t, const Tensor& delta) {
      const double cur = value_at(delta.values());
      if (delta.values() == prev_delta) pinned = true;
      if (!pinned && cur <= prev) ok = false;
      if (cur < prev - 1e-12) ok = false;
      prev = cur;
      prev_delta = delta.values();
    });
    if (!ok) {
      why = "quadratic toy ascent not strictly increasing before the boundary";
      return false;
    }
  }
  // eps = 0 identity.
  {
    PgdSpec spec;
    spec.eps = 0.0;
    spec.iters = 3;
    Tensor out = pgd_perturb(model, prompt, es, 1, spec);
    if (out.values() != es.values()) {
      why = "eps=0 did not return E_s unchanged";
      return false;
    }
  }
  why = "feasibility, sign-match, strict ascent, eps=0 identity";
  return true;
}

// ---------------------------------------------------------------------------
// 3. Operator support invariants
// ---------------------------------------------------------------------------

bool criterion_operators(std::string& why) {
  BackboneConfig bcfg;
  bcfg.layers = 1;
  bcfg.dim = 8;
  bcfg.heads = 2;
  bcfg.ffn_mult = 2;
  bcfg.max_len = 24;
  bcfg.seed = 6;
  PromptConfig pcfg;
  pcfg.length = 2;
  ModelState model = ModelState::init(bcfg, pcfg, 40, 2);
  PromptState prompt = PromptState::init(pcfg, bcfg, 8);
  Rng data_rng = make_rng(44);

  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> ids = {Vocabulary::kCls};
    for (int i = 0; i < 8; ++i) ids.push_back(static_cast<int>(4 + rand_index(data_rng, 36)));
    Tape t0(false);
    Tensor es = embed(t0, model, ids);

    // RG support: exactly i rows differ, the rest bitwise equal.
    {
      Rng rng = make_rng(1000 + static_cast<std::uint64_t>(trial));
      RgSpec spec;
      spec.sigma = 1e-3;
      spec.count = 1 + static_cast<std::size_t>(trial % 5);
      Tensor out = rg_perturb(es, spec, rng);
      std::size_t changed = 0;
      for (std::size_t r = 0; r < es.shape()[0]; ++r) {
        bool same = true;
        for (std::size_t j = 0; j < es.shape()[1]; ++j) same = same && out.at(r, j) == es.at(r, j);
        changed += same ? 0 : 1;
      }
      if (changed != spec.count) {
        why = "rg changed " + std::to_string(changed) + " rows, expected " + std::to_string(spec.count);
        return false;
      }
      Rng rng0 = make_rng(5);
      RgSpec zero = spec;
      zero.sigma = 0.0;
      if (rg_perturb(es, zero, rng0).values() != es.values()) {
        why = "rg sigma=0 identity violated";
        return false;
      }
    }
    // RM support: exactly i mask ids, [CLS] intact, i=0 identity.
    {
      Rng rng = make_rng(2000 + static_cast<std::uint64_t>(trial));
      RmSpec spec;
      spec.count = 1 + static_cast<std::size_t>(trial % 6);
      const auto out = rm_perturb(ids, spec, rng);
      std::size_t masks = 0;
      for (int tk : out) masks += tk == Vocabulary::kMask ? 1 : 0;
      if (masks != spec.count || out[0] != Vocabulary::kCls) {
        why = "rm mask count or [CLS] position violated";
        return false;
      }
      RmSpec zero;
      zero.count = 0;
      Rng rng0 = make_rng(5);
      if (rm_perturb(ids, zero, rng0) != ids) {
        why = "rm count=0 identity violated";
        return false;
      }
    }
    // A2T: similarity constraint independently recomputed; min_cos=1 identity.
    {
      A2tSpec spec;
      spec.min_cos = 0.7;
      spec.max_swap_frac = 0.4;
      const auto out = a2t_perturb(model, prompt, ids, 1, spec);
      const Tensor& table = model.token_embedding();
      const std::size_t d = table.shape()[1];
      auto pooled = [&](const std::vector<int>& seq) {
        std::vector<double> m(d, 0.0);
        std::size_t n = 0;
        for (int tk : seq) {
          if (tk == Vocabulary::kCls) continue;
          for (std::size_t j = 0; j < d; ++j) m[j] += table.at(static_cast<std::size_t>(tk), j);
          ++n;
        }
        for (double& x : m) x /= static_cast<double>(n);
        return m;
      };
      const auto ma = pooled(ids), mb = pooled(out);
      double dot = 0, na = 0, nb = 0;
      for (std::size_t j = 0; j < d; ++j) {
        dot += ma[j] * mb[j];
        na += ma[j] * ma[j];
        nb += mb[j] * mb[j];
      }
      const double cos = dot / (std::sqrt(na) * std::sqrt(nb));
      if (cos < spec.min_cos) {
        why = "a2t similarity " + std::to_string(cos) + " below min_cos";
        return false;
      }
      A2tSpec identity;
      identity.min_cos = 1.0;
      identity.max_swap_frac = 0.4;
      if (a2t_perturb(model, prompt, ids, 1, identity) != ids) {
        why = "a2t min_cos=1.0 identity violated";
        return false;
      }
    }
  }
  why = "rg/rm support exact, a2t constraint recomputed, identities exact";
  return true;
}

// ---------------------------------------------------------------------------
// 4. Training-loop mechanics
// ---------------------------------------------------------------------------

bool criterion_mechanics(std::string& why) {
  ExperimentConfig cfg = base_experiment("keyword");
  cfg.task.sentence_len = 8;
  cfg.backbone.dim = 16;
  cfg.train.epochs = 3;
  cfg.train.perturbation = PerturbationSpec{canonical_pgd()};
  const DatasetSplit data = build_dataset(cfg);
  const ModelState base = build_calibrated_model(cfg, data);

  // Update counter: exactly two optimizer steps per minibatch.
  {
    ModelState model = base.clone();
    PromptState prompt = PromptState::init(cfg.prompt, cfg.backbone, 1);
    TrainConfig tc = cfg.train;
    Trainer trainer(model, prompt, tc);
    const std::size_t batches = 3;
    for (std::size_t i = 0; i < batches; ++i)
      trainer.ptp_step(std::span<const Example>(data.train.data() + i * 8, 8), *tc.perturbation);
    if (trainer.update_count() != 2 * batches) {
      why = "update counter " + std::to_string(trainer.update_count()) + " != 2 x " +
            std::to_string(batches);
      return false;
    }
  }
  // Parameters bitwise frozen during generation, for every operator.
  {
    ModelState model = base.clone();
    PromptState prompt = PromptState::init(cfg.prompt, cfg.backbone, 1);
    Rng rng = make_rng(9);
    for (const PerturbationSpec& spec :
         {PerturbationSpec{RgSpec{}}, PerturbationSpec{RmSpec{}}, PerturbationSpec{canonical_pgd()},
          PerturbationSpec{A2tSpec{}}}) {
      const std::uint64_t mb = model.backbone_digest(), pb = prompt.digest();
      apply_perturbation(model, prompt, data.train[0].tokens, data.train[0].label, spec, rng);
      if (model.backbone_digest() != mb || prompt.digest() != pb) {
        why = "parameters changed during " + spec_kind(spec) + " generation";
        return false;
      }
    }
  }
  // Backbone bitwise frozen across a full run; identical seeds identical results.
  {
    const std::uint64_t before = base.backbone_digest();
    const TrainResult a = train_run(base, cfg.train, data);
    const TrainResult b = train_run(base, cfg.train, data);
    if (a.model.backbone_digest() != before) {
      why = "backbone changed during a frozen run";
      return false;
    }
    const bool identical = a.train_loss == b.train_loss && a.dev_accuracy == b.dev_accuracy &&
                           a.dev_macro_f1 == b.dev_macro_f1 &&
                           a.best_dev_accuracy == b.best_dev_accuracy &&
                           a.final_prompt.digest() == b.final_prompt.digest() &&
                           a.best_prompt.digest() == b.best_prompt.digest() &&
                           a.update_count == b.update_count;
    if (!identical) {
      why = "identical config+seed produced different TrainResults";
      return false;
    }
  }
  why = "update counter, generation freeze, run freeze, bitwise determinism";
  return true;
}

// ---------------------------------------------------------------------------
// 5. Landscape instrument
// ---------------------------------------------------------------------------

bool criterion_landscape(std::string& why) {
  ExperimentConfig cfg = base_experiment("keyword");
  cfg.task.sentence_len = 8;
  cfg.backbone.dim = 16;
  const DatasetSplit data = build_dataset(cfg);
  const ModelState model = build_calibrated_model(cfg, data);
  PromptState prompt = PromptState::init(cfg.prompt, cfg.backbone, 21);
  const std::vector<Example> batch(data.dev.begin(), data.dev.begin() + 16);

  const LandscapeGrid grid = landscape_grid(model, prompt, batch, 0.5, 9, 5);
  const std::size_t mid = 4;
  double clean = 0.0;
  for (const Example& ex : batch) clean += example_loss(model, prompt, ex.tokens, ex.label);
  clean /= static_cast<double>(batch.size());
  if (std::abs(grid.loss[mid][mid] - clean) > 1e-12) {
    why = "grid center differs from the clean loss";
    return false;
  }
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < grid.u.size(); ++i) {
    dot += grid.u.values()[i] * grid.v.values()[i];
    nu += grid.u.values()[i] * grid.u.values()[i];
    nv += grid.v.values()[i] * grid.v.values()[i];
  }
  if (std::abs(dot) > 1e-10 || std::abs(std::sqrt(nu) - 1.0) > 1e-12 ||
      std::abs(std::sqrt(nv) - 1.0) > 1e-12) {
    why = "basis orthonormality out of tolerance";
    return false;
  }
  // First-order Taylor agreement at x <= 1e-4.
  {
    const LandscapeGrid tiny = landscape_grid(model, prompt, batch, 1e-4, 3, 5);
    const double measured = tiny.loss[2][1] - tiny.loss[1][1];
    const double predicted = 1e-4 * tiny.grad_norm;
    if (std::abs(measured - predicted) > 0.1 * std::abs(predicted)) {
      why = "Taylor check off by more than 10%";
      return false;
    }
  }
  // Roughness equals the exhaustive adjacent-pair scan.
  {
    const double dx = grid.x_mags[1] - grid.x_mags[0];
    double expected = 0.0;
    for (std::size_t ix = 0; ix < grid.x_mags.size(); ++ix)
      for (std::size_t iy = 0; iy < grid.y_mags.size(); ++iy) {
        if (ix > 0)
          expected = std::max(expected, std::abs(grid.loss[ix][iy] - grid.loss[ix - 1][iy]) / dx);
        if (iy > 0)
          expected = std::max(expected, std::abs(grid.loss[ix][iy] - grid.loss[ix][iy - 1]) / dx);
      }
    if (roughness(grid).value != expected) {
      why = "roughness differs from the exhaustive scan";
      return false;
    }
  }
  why = "center, orthonormal basis, Taylor 10%, roughness oracle";
  return true;
}

// ---------------------------------------------------------------------------
// 6. Stability direction (seed variance)
// ---------------------------------------------------------------------------

bool criterion_stability(std::string& why) {
  ExperimentConfig vanilla = base_experiment("xor");
  ExperimentConfig pgd = vanilla;
  pgd.train.perturbation = PerturbationSpec{canonical_pgd()};

  std::size_t wins = 0;
  std::size_t positive_vanilla = 0;
  std::ostringstream detail;
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = 1; s <= 5; ++s) seeds.push_back(100 * rep + s);
    const RunReport rv = seed_sweep(vanilla, seeds, kWorkers);
    const RunReport rp = seed_sweep(pgd, seeds, kWorkers);
    for (const SeedRun& r : rv.runs)
      if (!r.ok) {
        why = "vanilla run failed: " + r.error;
        return false;
      }
    for (const SeedRun& r : rp.runs)
      if (!r.ok) {
        why = "pgd run failed: " + r.error;
        return false;
      }
    if (rv.variance > 0.0) ++positive_vanilla;
    if (rp.variance <= rv.variance) ++wins;
    detail << (rep ? " " : "") << "rep" << rep << ":" << rv.variance << "/" << rp.variance;
  }
  if (positive_vanilla < 5) {
    why = "vanilla variance not strictly positive in every repetition (" + detail.str() + ")";
    return false;
  }
  if (wins < 4) {
    why = "pgd variance <= vanilla in only " + std::to_string(wins) + "/5 repetitions (" +
          detail.str() + ")";
    return false;
  }
  why = "pgd variance <= vanilla in " + std::to_string(wins) + "/5 reps; " + detail.str();
  return true;
}

// ---------------------------------------------------------------------------
// 7. Performance direction (mean best-dev accuracy)
// ---------------------------------------------------------------------------

bool criterion_performance(std::string& why) {
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::ostringstream detail;
  for (const std::string task : {std::string("keyword"), std::string("xor")}) {
    ExperimentConfig vanilla = base_experiment(task);
    ExperimentConfig pgd = vanilla;
    pgd.train.perturbation = PerturbationSpec{canonical_pgd()};
    ExperimentConfig rg = vanilla;
    RgSpec rg_spec;  // canonical: sigma 1e-3, 5 perturbed embeddings
    rg_spec.sigma = 1e-3;
    rg_spec.count = 5;
    rg.train.perturbation = PerturbationSpec{rg_spec};
    ExperimentConfig rm = vanilla;
    RmSpec rm_spec;
    rm_spec.count = 3;
    rm.train.perturbation = PerturbationSpec{rm_spec};

    const RunReport mv = seed_sweep(vanilla, seeds, kWorkers);
    const RunReport mp = seed_sweep(pgd, seeds, kWorkers);
    const RunReport mr = seed_sweep(rg, seeds, kWorkers);
    const RunReport mm = seed_sweep(rm, seeds, kWorkers);
    detail << task << ": vanilla=" << mv.mean << " pgd=" << mp.mean << " rg=" << mr.mean
           << " rm=" << mm.mean << "; ";
    if (mp.mean < mv.mean) {
      why = task + ": pgd mean " + std::to_string(mp.mean) + " < vanilla " + std::to_string(mv.mean);
      return false;
    }
    if (mr.mean < mv.mean - 0.5) {
      why = task + ": rg mean " + std::to_string(mr.mean) + " < vanilla - 0.5";
      return false;
    }
    if (mm.mean < mv.mean - 0.5) {
      why = task + ": rm mean " + std::to_string(mm.mean) + " < vanilla - 0.5";
      return false;
    }
  }
  why = detail.str();
  return true;
}

// ---------------------------------------------------------------------------
// 8. Landscape smoothing direction
// ---------------------------------------------------------------------------

bool criterion_smoothing(std::string& why) {
  ExperimentConfig vanilla = base_experiment("xor");
  ExperimentConfig pgd = vanilla;
  pgd.train.perturbation = PerturbationSpec{canonical_pgd()};
  const DatasetSplit data = build_dataset(vanilla);
  const ModelState base = build_calibrated_model(vanilla, data);
  const std::vector<Example> batch(data.test.begin(), data.test.begin() + 32);

  std::size_t wins = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TrainResult rv = train_run(base, train_config_for_seed(vanilla, seed), data);
    const TrainResult rp = train_run(base, train_config_for_seed(pgd, seed), data);
    const LandscapeGrid gv = landscape_grid(rv.model, rv.best_prompt, batch, 1.0, 21, seed);
    const LandscapeGrid gp = landscape_grid(rp.model, rp.best_prompt, batch, 1.0, 21, seed);
    const double rough_v = roughness(gv).value;
    const double rough_p = roughness(gp).value;
    if (rough_p <= rough_v) ++wins;
    detail << (seed > 1 ? " " : "") << "s" << seed << ":" << rough_v << "/" << rough_p;
  }
  if (wins < 4) {
    why = "pgd roughness <= vanilla in only " + std::to_string(wins) + "/5 pairs (" + detail.str() + ")";
    return false;
  }
  why = std::to_string(wins) + "/5 pairs smoother; " + detail.str();
  return true;
}

// ---------------------------------------------------------------------------
// 9. Sweep fidelity
// ---------------------------------------------------------------------------

bool criterion_sweeps(std::string& why) {
  TempDir dir;
  ExperimentConfig cfg;
  cfg.task.name = "keyword";
  cfg.task.sentence_len = 21;  // rg sweeps perturb up to 20 embedding rows
  cfg.task.vocab_words = 120;
  cfg.task.train_size = 8;
  cfg.task.dev_size = 8;
  cfg.task.test_size = 8;
  cfg.backbone.layers = 1;
  cfg.backbone.dim = 8;
  cfg.backbone.heads = 2;
  cfg.backbone.ffn_mult = 2;
  cfg.backbone.max_len = 32;
  cfg.calibration.epochs = 1;
  cfg.prompt.length = 2;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 8;
  cfg.seeds = {1, 2};
  cfg.output_dir = dir.file("out");
  const std::string cfg_path = dir.file("cfg.json");
  save_config(cfg_path, cfg);

  const struct {
    const char* kind;
    std::size_t cells;
  } kinds[] = {{"rg", 12}, {"pgd", 15}, {"rm", 10}, {"a2t", 4}};
  for (const auto& k : kinds) {
    if (run_cli({"sweep", "--kind", k.kind, "--config", cfg_path, "--workers",
                 std::to_string(kWorkers)}) != 0) {
      why = std::string("sweep ") + k.kind + " failed";
      return false;
    }
    const CsvFile cells = read_csv(cfg.output_dir + "/sweep_" + std::string(k.kind) + "_cells.csv");
    std::size_t cell_rows = 0;
    bool has_baseline = false;
    for (const auto& row : cells.rows) {
      if (row[0] == "baseline") has_baseline = true;
      if (row[0] == k.kind) ++cell_rows;
    }
    if (!has_baseline || cell_rows != k.cells) {
      why = std::string("sweep ") + k.kind + " enumerated " + std::to_string(cell_rows) +
            " cells, expected " + std::to_string(k.cells);
      return false;
    }
  }
  if (run_cli({"report", "--in", cfg.output_dir}) != 0) {
    why = "report failed";
    return false;
  }
  auto table_shape = [&](const std::string& kind, std::size_t& rows, std::size_t& cols) {
    std::ifstream is(cfg.output_dir + "/report_" + kind + ".txt");
    std::string line;
    std::vector<std::vector<std::string>> lines;
    while (std::getline(is, line)) lines.push_back(split_csv_line(line));
    rows = 0;
    cols = 0;
    for (std::size_t i = 2; i + 1 < lines.size(); ++i) {  // skip title+header, stop before baseline
      ++rows;
      cols = lines[i].size() - 1;
    }
    return !lines.empty();
  };
  std::size_t rows = 0, cols = 0;
  table_shape("rg", rows, cols);
  if (rows != 3 || cols != 4) {
    why = "rg report is " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected 3x4";
    return false;
  }
  table_shape("pgd", rows, cols);
  if (rows != 3 || cols != 5) {
    why = "pgd report is " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected 3x5";
    return false;
  }
  table_shape("rm", rows, cols);
  if (rows != 1 || cols != 10) {
    why = "rm report is " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected 1x10";
    return false;
  }
  table_shape("a2t", rows, cols);
  if (rows != 1 || cols != 4) {
    why = "a2t report is " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected 1x4";
    return false;
  }
  why = "grids 3x4, 3x5, 1..10, {0.2,0.4,0.6,0.8}; report shapes match";
  return true;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness (finite differences)", criterion_gradients},
      {2, "pgd contract suite", criterion_pgd},
      {3, "operator support invariants", criterion_operators},
      {4, "training-loop mechanics", criterion_mechanics},
      {5, "landscape instrument", criterion_landscape},
      {6, "stability: pgd variance <= vanilla", criterion_stability},
      {7, "performance: perturbed variants vs vanilla", criterion_performance},
      {8, "landscape smoothing under pgd training", criterion_smoothing},
      {9, "sweep fidelity and report shapes", criterion_sweeps},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool pass = false;
    try {
      pass = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d: %s [%.1fs] %s\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), secs,
                detail.c_str());
    std::fflush(stdout);
    failures += pass ? 0 : 1;
  }
  if (failures) {
    std::printf("acceptance: %d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("acceptance: all %zu criteria passed\n", criteria.size());
  return 0;
}
