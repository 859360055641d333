#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ptp/digest.hpp"
#include "ptp/experiment.hpp"
#include "ptp/model.hpp"
#include "ptp/perturb.hpp"
#include "ptp/rng.hpp"
#include "ptp/train.hpp"

namespace ptp {

inline double population_mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double population_variance(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  const double mu = population_mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - mu) * (x - mu);
  return s / static_cast<double>(xs.size());
}

// ---------------------------------------------------------------------------
// Loss-landscape slices
// ---------------------------------------------------------------------------

/// 2-D slice of the batch loss over input-embedding space: x axis follows the
/// normalized batch gradient, y axis a random orthogonal direction.
struct LandscapeGrid {
  std::vector<double> x_mags;              // gradient-direction magnitudes
  std::vector<double> y_mags;              // orthogonal-direction magnitudes
  std::vector<std::vector<double>> loss;   // [ix][iy]
  Tensor u, v;                             // basis directions, unit Frobenius norm
  std::string batch_digest;
  double clean_loss = 0.0;
  double grad_norm = 0.0;  // Frobenius norm of the un-normalized batch gradient
};

namespace detail {

inline double frobenius_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double frobenius_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

/// Builds the grid around a fixed batch: u = normalized d(batch loss)/d(E_s)
/// at the clean inputs, v = seeded random direction Gram-Schmidt
/// orthogonalized against u. Parameters are held fixed; only the input
/// embeddings move. Resolution must be odd so (0, 0) is a grid point.
inline LandscapeGrid landscape_grid(const ModelState& state, const PromptState& prompt,
                                    const std::vector<Example>& batch, double extent,
                                    std::size_t resolution, std::uint64_t seed) {
  if (batch.empty()) throw std::invalid_argument("landscape_grid: empty batch");
  if (extent <= 0.0) throw std::invalid_argument("landscape_grid: extent must be > 0");
  if (resolution < 3 || resolution % 2 == 0)
    throw std::invalid_argument("landscape_grid: resolution must be odd and >= 3");
  const std::size_t n = batch[0].tokens.size();
  for (const Example& ex : batch)
    if (ex.tokens.size() != n)
      throw std::invalid_argument("landscape_grid: batch examples must share one sequence length");
  const std::size_t d = state.backbone_config().dim;

  // Clean input embeddings and the batch gradient w.r.t. them.
  std::vector<std::vector<double>> clean(batch.size());
  std::vector<double> g(n * d, 0.0);
  {
    Tape tape;
    std::vector<Tensor> leaves;
    Tensor total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Tape lookup_tape(/*recording=*/false);
      clean[i] = embed(lookup_tape, state, batch[i].tokens).values();
      Tensor es = Tensor::from_data({n, d}, clean[i], /*requires_grad=*/true);
      leaves.push_back(es);
      Tensor logits = forward(tape, state, compose(tape, state, prompt, es));
      Tensor loss = softmax_cross_entropy(tape, logits, batch[i].label);
      total = total.defined() ? add(tape, total, loss) : loss;
    }
    Tensor mean_loss = scale(tape, total, 1.0 / static_cast<double>(batch.size()));
    tape.backward(mean_loss);
    for (const Tensor& es : leaves)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += es.grad()[i];
  }
  const double gnorm = detail::frobenius_norm(g);
  if (gnorm < 1e-12)
    throw std::runtime_error("landscape_grid: degenerate direction (batch gradient norm < 1e-12)");
  for (double& x : g) x /= gnorm;
  LandscapeGrid grid;
  grid.grad_norm = gnorm;

  // Random orthogonal companion direction.
  Rng rng = make_rng(seed, RngStream::kLandscape);
  std::vector<double> v(n * d);
  while (true) {
    for (double& x : v) x = rand_normal(rng);
    const double proj = detail::frobenius_dot(v, g);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * g[i];
    const double vnorm = detail::frobenius_norm(v);
    if (vnorm > 1e-8) {
      for (double& x : v) x /= vnorm;
      break;
    }
  }

  grid.u = Tensor::from_data({n, d}, g);
  grid.v = Tensor::from_data({n, d}, v);
  {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Example& ex : batch) {
      h = fnv1a64(ex.tokens.data(), ex.tokens.size() * sizeof(int), h);
      h = fnv1a64(&ex.label, sizeof(ex.label), h);
    }
    grid.batch_digest = digest_hex(h);
  }
  grid.x_mags.resize(resolution);
  grid.y_mags.resize(resolution);
  const std::size_t mid = resolution / 2;
  for (std::size_t i = 0; i < resolution; ++i) {
    grid.x_mags[i] = extent * (static_cast<double>(i) - static_cast<double>(mid)) / static_cast<double>(mid);
    grid.y_mags[i] = grid.x_mags[i];
  }
  grid.x_mags[mid] = 0.0;
  grid.y_mags[mid] = 0.0;

  auto batch_loss_at = [&](double x, double y) {
    double total = 0.0;
    std::vector<double> vals(n * d);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t k = 0; k < vals.size(); ++k) vals[k] = clean[i][k] + x * g[k] + y * v[k];
      Tape tape(/*recording=*/false);
      Tensor es = Tensor::from_data({n, d}, vals);
      Tensor logits = forward(tape, state, compose(tape, state, prompt, es));
      total += softmax_cross_entropy(tape, logits, batch[i].label).item();
    }
    return total / static_cast<double>(batch.size());
  };

  grid.loss.assign(resolution, std::vector<double>(resolution, 0.0));
  for (std::size_t ix = 0; ix < resolution; ++ix)
    for (std::size_t iy = 0; iy < resolution; ++iy)
      grid.loss[ix][iy] = batch_loss_at(grid.x_mags[ix], grid.y_mags[iy]);
  grid.clean_loss = grid.loss[mid][mid];
  return grid;
}

struct RoughnessStats {
  double value = 0.0;     // max |adjacent-cell difference| / grid spacing
  double loss_min = 0.0;
  double loss_max = 0.0;
};

/// Max absolute 4-neighbor difference normalized by grid spacing, plus the
/// loss range over the grid.
inline RoughnessStats roughness(const LandscapeGrid& grid) {
  const std::size_t nx = grid.x_mags.size(), ny = grid.y_mags.size();
  if (nx < 2 || ny < 2) throw std::invalid_argument("roughness: grid too small");
  const double dx = grid.x_mags[1] - grid.x_mags[0];
  const double dy = grid.y_mags[1] - grid.y_mags[0];
  RoughnessStats stats;
  stats.loss_min = grid.loss[0][0];
  stats.loss_max = grid.loss[0][0];
  for (std::size_t ix = 0; ix < nx; ++ix) {
    for (std::size_t iy = 0; iy < ny; ++iy) {
      const double l = grid.loss[ix][iy];
      stats.loss_min = std::min(stats.loss_min, l);
      stats.loss_max = std::max(stats.loss_max, l);
      if (ix + 1 < nx) stats.value = std::max(stats.value, std::abs(grid.loss[ix + 1][iy] - l) / dx);
      if (iy + 1 < ny) stats.value = std::max(stats.value, std::abs(grid.loss[ix][iy + 1] - l) / dy);
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Multi-seed stability harness
// ---------------------------------------------------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  double score = 0.0;  // best dev accuracy, percentage points
  bool ok = false;
  std::string error;
};

struct RunReport {
  std::string task;
  std::string method;
  std::vector<SeedRun> runs;
  double mean = 0.0;
  double variance = 0.0;  // population variance over successful runs
};

/// Runs the experiment once per seed (only the run seed varies) and reports
/// per-seed best-dev scores with their mean and population variance. Failed
/// runs are recorded without aborting the siblings.
inline RunReport seed_sweep(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                            std::size_t workers = 1) {
  cfg.validate();
  if (seeds.size() < 2) throw std::invalid_argument("seed_sweep: need at least 2 seeds");
  for (std::size_t i = 0; i < seeds.size(); ++i)
    for (std::size_t j = i + 1; j < seeds.size(); ++j)
      if (seeds[i] == seeds[j])
        throw std::invalid_argument("seed_sweep: duplicate seed " + std::to_string(seeds[i]));

  const DatasetSplit data = build_dataset(cfg);
  const ModelState base = build_calibrated_model(cfg, data);

  RunReport report;
  report.task = cfg.task.name;
  report.method = method_name(cfg);
  report.runs.resize(seeds.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= seeds.size()) break;
      SeedRun run;
      run.seed = seeds[i];
      try {
        const TrainResult r = train_run(base, train_config_for_seed(cfg, seeds[i]), data);
        run.score = 100.0 * r.best_dev_accuracy;
        run.ok = true;
      } catch (const std::exception& e) {
        run.ok = false;
        run.error = e.what();
      }
      report.runs[i] = run;
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<double> scores;
  for (const SeedRun& r : report.runs)
    if (r.ok) scores.push_back(r.score);
  report.mean = population_mean(scores);
  report.variance = population_variance(scores);
  return report;
}

// ---------------------------------------------------------------------------
// Ablation sweeps over the canonical hyperparameter grids
// ---------------------------------------------------------------------------

enum class SweepKind { kRgGrid, kPgdGrid, kRmLine, kA2tLine };

inline std::string sweep_kind_name(SweepKind kind) {
  switch (kind) {
    case SweepKind::kRgGrid: return "rg";
    case SweepKind::kPgdGrid: return "pgd";
    case SweepKind::kRmLine: return "rm";
    case SweepKind::kA2tLine: return "a2t";
  }
  throw std::invalid_argument("sweep_kind_name: bad kind");
}

inline SweepKind sweep_kind_from_name(const std::string& name) {
  if (name == "rg") return SweepKind::kRgGrid;
  if (name == "pgd") return SweepKind::kPgdGrid;
  if (name == "rm") return SweepKind::kRmLine;
  if (name == "a2t") return SweepKind::kA2tLine;
  throw std::invalid_argument("sweep kind must be one of rg|pgd|rm|a2t");
}

/// Axis labels for the two swept parameters of each kind.
inline std::pair<std::string, std::string> sweep_param_names(SweepKind kind) {
  switch (kind) {
    case SweepKind::kRgGrid: return {"sigma", "count"};
    case SweepKind::kPgdGrid: return {"alpha", "iters"};
    case SweepKind::kRmLine: return {"count", ""};
    case SweepKind::kA2tLine: return {"min_cos", ""};
  }
  throw std::invalid_argument("sweep_param_names: bad kind");
}

struct SweepCellSpec {
  double p1 = 0.0;
  double p2 = 0.0;
  bool has_p2 = false;
  PerturbationSpec spec{RgSpec{}};
};

/// Enumerates the canonical grid for one sweep kind. Non-swept fields come
/// from the base config's spec when it has the matching kind.
inline std::vector<SweepCellSpec> sweep_cells(SweepKind kind, const ExperimentConfig& base) {
  std::vector<SweepCellSpec> cells;
  switch (kind) {
    case SweepKind::kRgGrid: {
      const double sigmas[] = {1e-4, 1e-3, 1e-2};
      const std::size_t counts[] = {1, 5, 10, 20};
      for (double s : sigmas)
        for (std::size_t c : counts) {
          RgSpec spec;
          spec.sigma = s;
          spec.count = c;
          cells.push_back({s, static_cast<double>(c), true, PerturbationSpec{spec}});
        }
      break;
    }
    case SweepKind::kPgdGrid: {
      PgdSpec proto;
      if (base.train.perturbation)
        if (const auto* p = std::get_if<PgdSpec>(&*base.train.perturbation)) proto = *p;
      const double alphas[] = {1e-4, 1e-3, 1e-2};
      for (double a : alphas)
        for (std::size_t t = 1; t <= 5; ++t) {
          PgdSpec spec = proto;
          spec.alpha = a;
          spec.iters = t;
          cells.push_back({a, static_cast<double>(t), true, PerturbationSpec{spec}});
        }
      break;
    }
    case SweepKind::kRmLine: {
      for (std::size_t c = 1; c <= 10; ++c) {
        RmSpec spec;
        spec.count = c;
        cells.push_back({static_cast<double>(c), 0.0, false, PerturbationSpec{spec}});
      }
      break;
    }
    case SweepKind::kA2tLine: {
      A2tSpec proto;
      if (base.train.perturbation)
        if (const auto* p = std::get_if<A2tSpec>(&*base.train.perturbation)) proto = *p;
      for (double c : {0.2, 0.4, 0.6, 0.8}) {
        A2tSpec spec = proto;
        spec.min_cos = c;
        cells.push_back({c, 0.0, false, PerturbationSpec{spec}});
      }
      break;
    }
  }
  return cells;
}

struct SweepCellResult {
  SweepCellSpec cell;
  RunReport report;
  double delta_vs_baseline = 0.0;
};

struct SweepResult {
  SweepKind kind = SweepKind::kRgGrid;
  RunReport baseline;  // no-perturbation runs over the same seeds
  std::vector<SweepCellResult> cells;
};

/// Full in-memory sweep: baseline seed sweep plus one seed sweep per grid
/// cell. The CLI layer adds file emission and cell-level idempotency on top.
inline SweepResult ablation_sweep(SweepKind kind, const ExperimentConfig& base, std::size_t workers = 1) {
  base.validate();
  SweepResult result;
  result.kind = kind;
  ExperimentConfig baseline_cfg = base;
  baseline_cfg.train.perturbation.reset();
  result.baseline = seed_sweep(baseline_cfg, base.seeds, workers);
  for (const SweepCellSpec& cell : sweep_cells(kind, base)) {
    ExperimentConfig cell_cfg = base;
    cell_cfg.train.perturbation = cell.spec;
    SweepCellResult r;
    r.cell = cell;
    r.report = seed_sweep(cell_cfg, base.seeds, workers);
    r.delta_vs_baseline = r.report.mean - result.baseline.mean;
    result.cells.push_back(std::move(r));
  }
  return result;
}

}  // namespace ptp
