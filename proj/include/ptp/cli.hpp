#pragma once

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ptp/analysis.hpp"
#include "ptp/experiment.hpp"
#include "ptp/report.hpp"

namespace ptp {

inline std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::string field;
  std::istringstream is(csv);
  while (std::getline(is, field, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(field, &used));
      if (used != field.size()) throw std::invalid_argument(field);
    } catch (const std::exception&) {
      throw ConfigError("invalid seed '" + field + "' in seed list");
    }
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

/// Stable id for one (config, run seed) combination.
inline std::string config_run_id(const ExperimentConfig& cfg) {
  const std::string dump = to_json(cfg).dump();
  return digest_hex(fnv1a64(dump.data(), dump.size()));
}

namespace cli_detail {

struct CommonFlags {
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t workers = 1;
};

inline void add_common(CLI::App* sub, CommonFlags& flags) {
  sub->add_option("--out", flags.out, "Output directory (overrides config output_dir)");
  sub->add_option("--seed", flags.seed, "Seed override")->each([&flags](const std::string&) {
    flags.seed_set = true;
  });
  sub->add_option("--workers", flags.workers, "Parallel worker count")->check(CLI::PositiveNumber);
}

inline ExperimentConfig load_with_overrides(const std::string& config_path, const CommonFlags& flags) {
  ExperimentConfig cfg = load_config(config_path);
  if (!flags.out.empty()) cfg.output_dir = flags.out;
  return cfg;
}

inline int cmd_train(const std::string& config_path, const CommonFlags& flags) {
  ExperimentConfig cfg = load_with_overrides(config_path, flags);
  if (flags.seed_set) cfg.train.seed = flags.seed;
  const std::string run_id = config_run_id(cfg);
  ensure_dir(cfg.output_dir);
  const std::string result_path = cfg.output_dir + "/result_" + run_id + ".json";
  if (file_exists(result_path)) {
    std::cout << "train: run " << run_id << " already complete: " << result_path << "\n";
    return 0;
  }

  const DatasetSplit data = build_dataset(cfg);
  const ModelState base = build_calibrated_model(cfg, data);
  const TrainResult result = train_run(base, cfg.train, data);

  CsvAppender metrics(cfg.output_dir + "/metrics.csv", metrics_header());
  append_metrics(metrics, run_id, result);

  const std::string ckpt_path = cfg.output_dir + "/checkpoint_" + run_id + ".bin";
  save_checkpoint(ckpt_path, result.model, result.best_prompt);

  const Metrics test = evaluate(result.model, result.best_prompt, data.test);
  nlohmann::json rj;
  rj["run_id"] = run_id;
  rj["task"] = cfg.task.name;
  rj["method"] = method_name(cfg);
  rj["best_dev_accuracy"] = result.best_dev_accuracy;
  rj["best_epoch"] = result.best_epoch;
  rj["epochs_completed"] = result.epochs_completed;
  rj["update_count"] = result.update_count;
  rj["test_accuracy"] = test.accuracy;
  rj["test_macro_f1"] = test.macro_f1;
  rj["wall_clock_sec"] = result.wall_clock_sec;
  rj["checkpoint"] = ckpt_path;
  rj["config"] = to_json(cfg);
  std::ofstream os(result_path);
  os << rj.dump(2) << "\n";
  if (!os) throw std::runtime_error("train: cannot write '" + result_path + "'");

  std::cout << "train: run " << run_id << " " << cfg.task.name << "/" << method_name(cfg)
            << " best_dev_acc=" << fmt_short(result.best_dev_accuracy)
            << " test_acc=" << fmt_short(test.accuracy) << " epochs=" << result.epochs_completed
            << " -> " << result_path << "\n";
  return 0;
}

inline int cmd_landscape(const std::string& config_path, const std::string& checkpoint_path,
                         const std::string& split_name, std::size_t batch_size, double extent,
                         std::size_t resolution, const std::string& grid_file, const CommonFlags& flags) {
  ExperimentConfig cfg = load_with_overrides(config_path, flags);
  const DatasetSplit data = build_dataset(cfg);
  auto [model, prompt] = load_checkpoint(checkpoint_path);
  if (model.vocab_size() != data.info.vocab.size())
    throw std::runtime_error("landscape: checkpoint vocabulary (" + std::to_string(model.vocab_size()) +
                             ") does not match task vocabulary (" +
                             std::to_string(data.info.vocab.size()) + ")");

  const std::vector<Example>* split = &data.dev;
  if (split_name == "train")
    split = &data.train;
  else if (split_name == "test")
    split = &data.test;
  else if (split_name != "dev")
    throw ConfigError("landscape: --split must be train|dev|test");
  if (split->empty()) throw std::runtime_error("landscape: empty split");
  const std::size_t n = std::min(batch_size, split->size());
  const std::vector<Example> batch(split->begin(), split->begin() + static_cast<std::ptrdiff_t>(n));

  const std::uint64_t dir_seed = flags.seed_set ? flags.seed : cfg.train.seed;
  const LandscapeGrid grid = landscape_grid(model, prompt, batch, extent, resolution, dir_seed);
  ensure_dir(cfg.output_dir);
  const std::string path = !grid_file.empty()
                               ? grid_file
                               : cfg.output_dir + "/grid_" + grid.batch_digest + "_r" +
                                     std::to_string(resolution) + ".csv";
  write_grid_file(path, grid);
  const RoughnessStats stats = roughness(grid);
  std::cout << "landscape: " << path << " clean_loss=" << fmt_short(grid.clean_loss)
            << " roughness=" << fmt_short(stats.value) << " range=["
            << fmt_short(stats.loss_min) << "," << fmt_short(stats.loss_max) << "]\n";
  return 0;
}

inline int cmd_seeds(const std::string& config_path, const std::string& seeds_csv,
                     const CommonFlags& flags) {
  ExperimentConfig cfg = load_with_overrides(config_path, flags);
  const std::vector<std::uint64_t> seeds = seeds_csv.empty() ? cfg.seeds : parse_seed_list(seeds_csv);
  const RunReport report = seed_sweep(cfg, seeds, flags.workers);
  ensure_dir(cfg.output_dir);

  // Append only rows not already present (re-runnable).
  const std::string runs_path = cfg.output_dir + "/seeds_runs.csv";
  CsvAppender runs(runs_path, seed_runs_header());
  CsvFile existing;
  if (file_exists(runs_path)) existing = read_csv(runs_path);
  for (const SeedRun& r : report.runs) {
    bool present = false;
    for (const auto& row : existing.rows)
      if (row.size() >= 3 && row[0] == report.task && row[1] == report.method &&
          row[2] == std::to_string(r.seed)) {
        present = true;
        break;
      }
    if (!present)
      runs.append({report.task, report.method, std::to_string(r.seed), fmt_double(r.score),
                   r.ok ? "1" : "0", r.error});
  }
  CsvAppender summary(cfg.output_dir + "/seeds_summary.csv", seed_summary_header());
  summary.append({report.task, report.method, std::to_string(report.runs.size()),
                  fmt_double(report.mean), fmt_double(report.variance)});

  for (const SeedRun& r : report.runs) {
    std::cout << "seed " << r.seed << ": ";
    if (r.ok)
      std::cout << fmt_short(r.score) << "\n";
    else
      std::cout << "FAILED (" << r.error << ")\n";
  }
  std::cout << "seeds: " << report.task << "/" << report.method << " n=" << report.runs.size()
            << " mean=" << fmt_short(report.mean) << " variance=" << fmt_short(report.variance) << "\n";
  return 0;
}

inline int cmd_sweep(const std::string& kind_name, const std::string& config_path,
                     const CommonFlags& flags) {
  ExperimentConfig cfg = load_with_overrides(config_path, flags);
  SweepKind kind;
  try {
    kind = sweep_kind_from_name(kind_name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  ensure_dir(cfg.output_dir);
  const std::string kname = sweep_kind_name(kind);
  const std::string cells_path = cfg.output_dir + "/sweep_" + kname + "_cells.csv";
  const std::string runs_path = cfg.output_dir + "/sweep_" + kname + "_runs.csv";
  CsvAppender cells_sink(cells_path, sweep_cells_header());
  CsvAppender runs_sink(runs_path, sweep_runs_header());

  auto run_and_emit = [&](const std::string& row_kind, const std::string& p1, const std::string& p2,
                          const ExperimentConfig& cell_cfg, double baseline_mean) -> double {
    const RunReport report = seed_sweep(cell_cfg, cfg.seeds, flags.workers);
    for (const SeedRun& r : report.runs)
      runs_sink.append({row_kind, p1, p2, std::to_string(r.seed), fmt_double(r.score), r.ok ? "1" : "0",
                        r.error});
    const double delta = row_kind == "baseline" ? 0.0 : report.mean - baseline_mean;
    cells_sink.append({row_kind, p1, p2, fmt_double(report.mean), fmt_double(report.variance),
                       fmt_double(delta), std::to_string(report.runs.size())});
    std::cout << "sweep " << kname << ": " << row_kind << (p1.empty() ? "" : " " + p1)
              << (p2.empty() ? "" : "," + p2) << " mean=" << fmt_short(report.mean)
              << " variance=" << fmt_short(report.variance) << "\n";
    return report.mean;
  };

  // Baseline (no perturbation) first; later cells report deltas against it.
  double baseline_mean = 0.0;
  if (!sweep_cell_done(cells_path, "baseline", "", "")) {
    ExperimentConfig baseline_cfg = cfg;
    baseline_cfg.train.perturbation.reset();
    baseline_mean = run_and_emit("baseline", "", "", baseline_cfg, 0.0);
  } else {
    const CsvFile existing = read_csv(cells_path);
    for (const auto& row : existing.rows)
      if (row.size() >= 4 && row[0] == "baseline") baseline_mean = std::stod(row[3]);
    std::cout << "sweep " << kname << ": baseline already done (mean=" << fmt_short(baseline_mean)
              << ")\n";
  }

  std::size_t ran = 0, skipped = 0;
  for (const SweepCellSpec& cell : sweep_cells(kind, cfg)) {
    const std::string p1 = fmt_double(cell.p1);
    const std::string p2 = cell.has_p2 ? fmt_double(cell.p2) : "";
    if (sweep_cell_done(cells_path, kname, p1, p2)) {
      ++skipped;
      continue;
    }
    ExperimentConfig cell_cfg = cfg;
    cell_cfg.train.perturbation = cell.spec;
    run_and_emit(kname, p1, p2, cell_cfg, baseline_mean);
    ++ran;
  }
  std::cout << "sweep " << kname << ": " << ran << " cells run, " << skipped
            << " already present -> " << cells_path << "\n";
  return 0;
}

inline int cmd_report(const std::string& in_dir) {
  bool found = false;
  for (const char* kind : {"rg", "pgd", "rm", "a2t"}) {
    const std::string cells_path = in_dir + "/sweep_" + std::string(kind) + "_cells.csv";
    if (!file_exists(cells_path)) continue;
    found = true;
    const auto [p1_name, p2_name] = sweep_param_names(sweep_kind_from_name(kind));
    const std::string table = render_sweep_table(read_csv(cells_path), kind, p1_name, p2_name);
    std::cout << table << "\n";
    const std::string out_path = in_dir + "/report_" + std::string(kind) + ".txt";
    std::ofstream os(out_path);
    os << table;
    if (!os) throw std::runtime_error("report: cannot write '" + out_path + "'");
  }
  const std::string summary_path = in_dir + "/seeds_summary.csv";
  if (file_exists(summary_path)) {
    found = true;
    const std::string table = render_seed_summary(read_csv(summary_path));
    std::cout << table << "\n";
    const std::string out_path = in_dir + "/report_seeds.txt";
    std::ofstream os(out_path);
    os << table;
    if (!os) throw std::runtime_error("report: cannot write '" + out_path + "'");
  }
  if (!found) throw std::runtime_error("report: no report inputs found in '" + in_dir + "'");
  return 0;
}

}  // namespace cli_detail

/// Entry point shared by the binary and the tests. Returns the process exit
/// code: 0 success, 1 runtime failure, 2 usage/config error.
inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Perturbation-regularized prompt tuning lab"};
  app.require_subcommand(1);

  cli_detail::CommonFlags train_flags, landscape_flags, seeds_flags, sweep_flags, report_flags;
  std::string train_config, landscape_config, seeds_config, sweep_config;
  std::string checkpoint_path, split_name = "dev", grid_file, seeds_csv, sweep_kind, report_dir;
  std::size_t batch_size = 32, resolution = 41;
  double extent = 1.0;

  CLI::App* train = app.add_subcommand("train", "Run one training experiment from a config");
  train->add_option("--config", train_config, "Experiment config (JSON)")->required();
  cli_detail::add_common(train, train_flags);

  CLI::App* landscape = app.add_subcommand("landscape", "Loss-landscape slice around a checkpoint");
  landscape->add_option("--config", landscape_config, "Experiment config (JSON)")->required();
  landscape->add_option("--checkpoint", checkpoint_path, "Model checkpoint file")->required();
  landscape->add_option("--split", split_name, "Split providing the batch (train|dev|test)");
  landscape->add_option("--batch-size", batch_size, "Batch size for the landscape loss");
  landscape->add_option("--extent", extent, "Half-width of the slice")->check(CLI::PositiveNumber);
  landscape->add_option("--resolution", resolution, "Grid resolution (odd)");
  landscape->add_option("--grid-file", grid_file, "Explicit output grid path");
  cli_detail::add_common(landscape, landscape_flags);

  CLI::App* seeds = app.add_subcommand("seeds", "Multi-seed stability report");
  seeds->add_option("--config", seeds_config, "Experiment config (JSON)")->required();
  seeds->add_option("--seeds", seeds_csv, "Comma-separated seed list (default: config seeds)");
  cli_detail::add_common(seeds, seeds_flags);

  CLI::App* sweep = app.add_subcommand("sweep", "Ablation sweep over a canonical grid");
  sweep->add_option("--kind", sweep_kind, "rg|pgd|rm|a2t")->required();
  sweep->add_option("--config", sweep_config, "Base experiment config (JSON)")->required();
  cli_detail::add_common(sweep, sweep_flags);

  CLI::App* report = app.add_subcommand("report", "Aggregate emitted rows into summary tables");
  report->add_option("--in", report_dir, "Directory with emitted result files")->required();
  cli_detail::add_common(report, report_flags);

  std::vector<std::string> full = {"ptp_lab"};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<char*> argv;
  argv.reserve(full.size());
  for (std::string& s : full) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (*train) return cli_detail::cmd_train(train_config, train_flags);
    if (*landscape)
      return cli_detail::cmd_landscape(landscape_config, checkpoint_path, split_name, batch_size, extent,
                                       resolution, grid_file, landscape_flags);
    if (*seeds) return cli_detail::cmd_seeds(seeds_config, seeds_csv, seeds_flags);
    if (*sweep) return cli_detail::cmd_sweep(sweep_kind, sweep_config, sweep_flags);
    if (*report) return cli_detail::cmd_report(report_dir);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ptp
