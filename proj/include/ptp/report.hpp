#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ptp/analysis.hpp"
#include "ptp/digest.hpp"

namespace ptp {

inline void ensure_dir(const std::string& dir) {
  if (!dir.empty()) std::filesystem::create_directories(dir);
}

inline bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

/// Round-trip decimal formatting for report rows.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Short formatting for human-facing tables.
inline std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

namespace detail {

inline std::string sanitize_field(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

}  // namespace detail

struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline CsvFile read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_csv: cannot open '" + path + "'");
  CsvFile out;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      out.header = split_csv_line(line);
      first = false;
    } else {
      out.rows.push_back(split_csv_line(line));
    }
  }
  return out;
}

/// Append-only CSV sink; writes the header once on creation. Appends are
/// serialized so parallel producers can share one writer.
class CsvAppender {
 public:
  CsvAppender(std::string path, std::vector<std::string> header)
      : path_(std::move(path)), header_(std::move(header)) {}

  void append(const std::vector<std::string>& row) {
    std::lock_guard<std::mutex> lock(mu_);
    const bool fresh = !file_exists(path_);
    std::ofstream os(path_, std::ios::app);
    if (!os) throw std::runtime_error("CsvAppender: cannot open '" + path_ + "'");
    if (fresh) os << join(header_) << "\n";
    os << join(row) << "\n";
  }

  const std::string& path() const { return path_; }

 private:
  static std::string join(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += detail::sanitize_field(fields[i]);
    }
    return out;
  }

  std::string path_;
  std::vector<std::string> header_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Per-run metrics rows: run_id,epoch,split,metric,value
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& metrics_header() {
  static const std::vector<std::string> h = {"run_id", "epoch", "split", "metric", "value"};
  return h;
}

inline void append_metrics(CsvAppender& sink, const std::string& run_id, const TrainResult& result) {
  for (std::size_t e = 0; e < result.epochs_completed; ++e) {
    const std::string epoch = std::to_string(e + 1);
    sink.append({run_id, epoch, "train", "loss", fmt_double(result.train_loss[e])});
    sink.append({run_id, epoch, "dev", "accuracy", fmt_double(result.dev_accuracy[e])});
    sink.append({run_id, epoch, "dev", "macro_f1", fmt_double(result.dev_macro_f1[e])});
  }
}

// ---------------------------------------------------------------------------
// Landscape grid files: plain tabular text, one row per (x, y, loss), header
// carries the basis checksums.
// ---------------------------------------------------------------------------

inline void write_grid_file(const std::string& path, const LandscapeGrid& grid) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_grid_file: cannot open '" + path + "'");
  os << "# landscape_grid v1\n";
  os << "# batch " << grid.batch_digest << "\n";
  os << "# u_checksum " << digest_hex(digest_doubles(grid.u.values())) << "\n";
  os << "# v_checksum " << digest_hex(digest_doubles(grid.v.values())) << "\n";
  os << "# clean_loss " << fmt_double(grid.clean_loss) << "\n";
  os << "x,y,loss\n";
  for (std::size_t ix = 0; ix < grid.x_mags.size(); ++ix)
    for (std::size_t iy = 0; iy < grid.y_mags.size(); ++iy)
      os << fmt_double(grid.x_mags[ix]) << ',' << fmt_double(grid.y_mags[iy]) << ','
         << fmt_double(grid.loss[ix][iy]) << "\n";
  if (!os) throw std::runtime_error("write_grid_file: write failed for '" + path + "'");
}

struct GridFile {
  LandscapeGrid grid;  // u, v are not reconstructed from disk
  std::string u_checksum, v_checksum;
};

inline GridFile read_grid_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_grid_file: cannot open '" + path + "'");
  GridFile out;
  std::string line;
  std::vector<std::tuple<double, double, double>> points;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key, value;
      hs >> key >> value;
      if (key == "batch") out.grid.batch_digest = value;
      if (key == "u_checksum") out.u_checksum = value;
      if (key == "v_checksum") out.v_checksum = value;
      if (key == "clean_loss") out.grid.clean_loss = std::stod(value);
      continue;
    }
    if (line.rfind("x,", 0) == 0) continue;  // column header
    const auto f = split_csv_line(line);
    if (f.size() != 3) throw std::runtime_error("read_grid_file: malformed row '" + line + "'");
    points.emplace_back(std::stod(f[0]), std::stod(f[1]), std::stod(f[2]));
  }
  for (const auto& [x, y, l] : points) {
    if (out.grid.x_mags.empty() || x != out.grid.x_mags.back()) out.grid.x_mags.push_back(x);
  }
  const std::size_t ny = points.size() / out.grid.x_mags.size();
  out.grid.y_mags.resize(ny);
  out.grid.loss.assign(out.grid.x_mags.size(), std::vector<double>(ny, 0.0));
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::size_t ix = i / ny, iy = i % ny;
    out.grid.y_mags[iy] = std::get<1>(points[i]);
    out.grid.loss[ix][iy] = std::get<2>(points[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Seed-sweep report files
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& seed_runs_header() {
  static const std::vector<std::string> h = {"task", "method", "seed", "score", "ok", "error"};
  return h;
}

inline const std::vector<std::string>& seed_summary_header() {
  static const std::vector<std::string> h = {"task", "method", "n_seeds", "mean", "variance"};
  return h;
}

inline void append_seed_report(const std::string& runs_path, const std::string& summary_path,
                               const RunReport& report) {
  CsvAppender runs(runs_path, seed_runs_header());
  for (const SeedRun& r : report.runs)
    runs.append({report.task, report.method, std::to_string(r.seed), fmt_double(r.score),
                 r.ok ? "1" : "0", r.error});
  CsvAppender summary(summary_path, seed_summary_header());
  summary.append({report.task, report.method, std::to_string(report.runs.size()),
                  fmt_double(report.mean), fmt_double(report.variance)});
}

// ---------------------------------------------------------------------------
// Sweep result files. One row per cell plus a baseline row; reruns of a
// finished cell are no-ops keyed on (kind, param1, param2).
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& sweep_cells_header() {
  static const std::vector<std::string> h = {"kind",     "param1", "param2",
                                             "mean",     "variance", "delta_vs_baseline",
                                             "n_seeds"};
  return h;
}

inline const std::vector<std::string>& sweep_runs_header() {
  static const std::vector<std::string> h = {"kind", "param1", "param2", "seed", "score", "ok", "error"};
  return h;
}

inline bool sweep_cell_done(const std::string& cells_path, const std::string& kind,
                            const std::string& p1, const std::string& p2) {
  if (!file_exists(cells_path)) return false;
  const CsvFile csv = read_csv(cells_path);
  for (const auto& row : csv.rows)
    if (row.size() >= 3 && row[0] == kind && row[1] == p1 && row[2] == p2) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Aggregate tables (report subcommand)
// ---------------------------------------------------------------------------

/// Pivot a sweep cells file into the canonical table layout: grid sweeps get
/// one row per param1 value and one column per param2 value; line sweeps get
/// a single header row of swept values with a "mean" row beneath. A baseline
/// line follows the table either way.
inline std::string render_sweep_table(const CsvFile& cells, const std::string& kind,
                                      const std::string& p1_name, const std::string& p2_name) {
  std::vector<double> p1s, p2s;
  std::map<std::pair<double, double>, std::pair<double, double>> mean_delta;
  std::string baseline_line = "baseline,n/a";
  bool has_p2 = false;
  for (const auto& row : cells.rows) {
    if (row.size() < 7) continue;
    if (row[0] == "baseline") {
      baseline_line = "baseline," + row[3];
      continue;
    }
    if (row[0] != kind) continue;
    const double p1 = std::stod(row[1]);
    const double p2 = row[2].empty() ? 0.0 : std::stod(row[2]);
    if (!row[2].empty()) has_p2 = true;
    if (std::find(p1s.begin(), p1s.end(), p1) == p1s.end()) p1s.push_back(p1);
    if (std::find(p2s.begin(), p2s.end(), p2) == p2s.end()) p2s.push_back(p2);
    mean_delta[{p1, p2}] = {std::stod(row[3]), std::stod(row[5])};
  }
  std::sort(p1s.begin(), p1s.end());
  std::sort(p2s.begin(), p2s.end());

  auto cell_text = [&](double p1, double p2) -> std::string {
    auto it = mean_delta.find({p1, p2});
    if (it == mean_delta.end()) return "n/a";
    return fmt_short(it->second.first) + "(" + (it->second.second >= 0 ? "+" : "") +
           fmt_short(it->second.second) + ")";
  };

  std::ostringstream os;
  os << "sweep: " << kind << "\n";
  if (has_p2) {
    os << p1_name << "\\" << p2_name;
    for (double p2 : p2s) os << ',' << fmt_short(p2);
    os << "\n";
    for (double p1 : p1s) {
      os << fmt_short(p1);
      for (double p2 : p2s) os << ',' << cell_text(p1, p2);
      os << "\n";
    }
  } else {
    os << p1_name;
    for (double p1 : p1s) os << ',' << fmt_short(p1);
    os << "\n";
    os << "mean";
    for (double p1 : p1s) os << ',' << cell_text(p1, 0.0);
    os << "\n";
  }
  os << baseline_line << "\n";
  return os.str();
}

/// Stability summary across methods (one line per seed-sweep summary row).
inline std::string render_seed_summary(const CsvFile& summary) {
  std::ostringstream os;
  os << "task,method,n_seeds,mean,variance\n";
  for (const auto& row : summary.rows) {
    if (row.size() < 5) continue;
    os << row[0] << ',' << row[1] << ',' << row[2] << ',' << fmt_short(std::stod(row[3])) << ','
       << fmt_short(std::stod(row[4])) << "\n";
  }
  return os.str();
}

}  // namespace ptp
