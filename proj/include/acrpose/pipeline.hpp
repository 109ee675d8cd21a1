#pragma once

// Experiment orchestration: training with structured logs and checkpoints,
// evaluation through the full pose pipeline, the ablation ladder and plot
// export.

#include "acrpose/checkpoint.hpp"
#include "acrpose/config.hpp"
#include "acrpose/dataset_io.hpp"
#include "acrpose/evalmetrics.hpp"
#include "acrpose/pose_solver.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace acrpose {

// ------------------------------------------------------------------- logging

enum class LogLevel { quiet = 0, error = 1, warn = 2, info = 3, debug = 4 };

// Verbosity of the console stream, from ACRPOSE_LOG (quiet, error, warn,
// info, debug). Structured records always go to the log file.
inline LogLevel log_level_from_env() {
  const char* v = std::getenv("ACRPOSE_LOG");
  if (v == nullptr) return LogLevel::info;
  std::string s(v);
  if (s == "quiet") return LogLevel::quiet;
  if (s == "error") return LogLevel::error;
  if (s == "warn") return LogLevel::warn;
  if (s == "debug") return LogLevel::debug;
  return LogLevel::info;
}

inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// One record per line: "step=<n> term=<name> value=<v>".
inline std::string log_record(long step, const std::string& term, double value) {
  return "step=" + std::to_string(step) + " term=" + term + " value=" + format_value(value);
}

struct LogRecord {
  long step = 0;
  std::string term;
  double value = 0.0;
};

inline LogRecord parse_log_record(const std::string& line) {
  LogRecord r;
  std::istringstream is(line);
  std::string tok;
  int seen = 0;
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw std::runtime_error("log: malformed record: " + line);
    std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "step") r.step = std::stol(val), seen |= 1;
    else if (key == "term") r.term = val, seen |= 2;
    else if (key == "value") r.value = std::stod(val), seen |= 4;
  }
  if (seen != 7) throw std::runtime_error("log: incomplete record: " + line);
  return r;
}

class Logger {
 public:
  Logger() : level_(log_level_from_env()) {}
  explicit Logger(LogLevel level) : level_(level) {}

  void open(const std::filesystem::path& path, bool append) {
    file_ = std::make_unique<std::ofstream>(path, append ? std::ios::app : std::ios::trunc);
    if (!*file_) throw IoError("cannot open log " + path.string());
  }
  void close() { file_.reset(); }

  void record(long step, const std::string& term, double value) {
    std::string line = log_record(step, term, value);
    if (file_) *file_ << line << "\n";
    if (level_ >= LogLevel::debug) std::cerr << line << "\n";
  }
  void flush() {
    if (file_) file_->flush();
  }

  void info(const std::string& msg) const {
    if (level_ >= LogLevel::info) std::cerr << msg << "\n";
  }
  void warn(const std::string& msg) const {
    if (level_ >= LogLevel::warn) std::cerr << "warning: " << msg << "\n";
  }
  void error(const std::string& msg) const {
    if (level_ >= LogLevel::error) std::cerr << "error: " << msg << "\n";
  }

  LogLevel level() const { return level_; }

 private:
  LogLevel level_;
  std::unique_ptr<std::ofstream> file_;
};

// ------------------------------------------------------------------ datasets

inline bool dataset_exists(const std::filesystem::path& dir) { return std::filesystem::exists(dir / "manifest"); }

inline Dataset load_dataset(const RunConfig& cfg) {
  if (!dataset_exists(cfg.dataset)) {
    throw IoError("dataset not found at " + cfg.dataset + " (run gen-data first)");
  }
  Dataset ds = read_dataset(cfg.dataset);
  const auto& d = ds.config;
  if (d.n_points != cfg.model.n_points || d.n_prior != cfg.model.n_prior || d.appearance_dim != cfg.model.appearance_dim) {
    throw ConfigError("dataset " + cfg.dataset + " has N_p=" + std::to_string(d.n_points) + " N_c=" +
                      std::to_string(d.n_prior) + " A=" + std::to_string(d.appearance_dim) +
                      ", which does not match the model config");
  }
  return ds;
}

inline std::vector<std::shared_ptr<const Matrix>> shared_priors(const Dataset& ds) {
  std::vector<std::shared_ptr<const Matrix>> out;
  for (const auto& c : ds.categories) out.push_back(std::make_shared<const Matrix>(c.prior));
  return out;
}

inline std::vector<TrainingExample> training_examples(const Reconstructor& net, const Dataset& ds,
                                                      const std::vector<std::shared_ptr<const Matrix>>& priors) {
  std::vector<TrainingExample> out;
  out.reserve(ds.train.size());
  for (const auto& r : ds.train) {
    out.push_back({net.geometry(r.observed), r.appearance, r.gt_nocs, r.canonical_model,
                   priors[static_cast<std::size_t>(r.category)]});
  }
  return out;
}

// Sample order of epoch `epoch`, a pure function of (seed, epoch).
inline std::vector<int> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0xE90C00ULL + static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// ---------------------------------------------------------------- evaluation

struct SamplePrediction {
  Matrix nocs;
  Matrix deformed;
  PoseSolution solution;
};

// Oracle mode feeds the ground-truth canonical coordinates and model in
// place of the network outputs.
inline SamplePrediction predict(const Reconstructor& net, const PimGeometry& geom, const SampleRecord& r,
                                const Matrix& prior, bool oracle, SizeMode mode) {
  SamplePrediction p;
  if (oracle) {
    p.nocs = r.gt_nocs;
    p.deformed = r.canonical_model;
    p.solution.pose = umeyama(p.nocs, r.observed);
    p.solution.size.extents = canonical_size(p.deformed, mode);
    p.solution.size.metric = p.solution.pose.scale * p.solution.size.extents;
    return p;
  }
  ad::Tape t(false);
  auto out = net.forward(t, geom, r.appearance, prior);
  p.nocs = out.nocs.value();
  p.deformed = out.deformed.value();
  p.solution = solve_pose(r.observed, p.nocs, prior, out.deformation.value(), mode);
  return p;
}

struct Evaluation {
  std::vector<EvalResult> results;
  std::vector<double> nocs_chamfer;  // P_nocs vs ground-truth NOCS, per sample
  MetricReport report;

  double accuracy_10deg5cm() const { return report.accuracy("10deg5cm"); }
  double mean_nocs_chamfer() const {
    return nocs_chamfer.empty() ? 0.0
                                : std::accumulate(nocs_chamfer.begin(), nocs_chamfer.end(), 0.0) /
                                      static_cast<double>(nocs_chamfer.size());
  }
};

inline Evaluation evaluate(const Reconstructor& net, const Dataset& ds, const std::vector<SampleRecord>& split,
                           const RunConfig& cfg, bool oracle = false) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  Evaluation ev;
  const SizeMode mode = cfg.size_mode == "mean_abs" ? SizeMode::mean_abs : SizeMode::extents;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const SampleRecord& r = split[i];
    const CategorySpec& cat = ds.categories.at(static_cast<std::size_t>(r.category));
    SamplePrediction p = predict(net, net.geometry(r.observed), r, cat.prior, oracle, mode);
    EvalResult er;
    er.category = r.category;
    er.error.rot_deg = rotation_error(p.solution.pose.rotation, r.gt_pose.rotation, cat.symmetric);
    er.error.trans = translation_error(p.solution.pose.translation, r.gt_pose.translation);
    Eigen::Vector3d gt_size = r.gt_pose.scale * canonical_size(r.canonical_model, mode);
    er.iou = iou3d(OrientedBox::from_pose(p.solution.pose, p.solution.size.metric),
                   OrientedBox::from_pose(r.gt_pose, gt_size), cfg.iou_samples, derive_seed(cfg.seed, i));
    er.chamfer = chamfer_distance(p.deformed, r.canonical_model);
    ev.results.push_back(er);
    ev.nocs_chamfer.push_back(chamfer_distance(p.nocs, r.gt_nocs));
  }
  ev.report = build_report(ev.results, cfg.grids, cfg.meter);
  return ev;
}

inline std::string evaluation_text(const Evaluation& ev) {
  std::ostringstream os;
  os << ev.report.table();
  os << "nocs_chamfer = " << format_value(ev.mean_nocs_chamfer()) << "\n";
  return os.str();
}

// ------------------------------------------------------------------ training

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  int epochs_done = 0;
  long steps = 0;
  std::filesystem::path checkpoint;
  std::filesystem::path log;
};

inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kLogFile = "train.log";

// Keeps the log lines with step <= `step`, so a resumed run's log matches an
// uninterrupted one.
inline void truncate_log(const std::filesystem::path& path, long step) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::ostringstream kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (parse_log_record(line).step <= step) kept << line << "\n";
  }
  in.close();
  write_text(path, kept.str());
}

struct TrainHooks {
  std::function<void(int epoch, const TrainState&)> after_epoch;
  // Test hook: called before each step; a thrown NumericError aborts like a
  // non-finite loss would.
  std::function<void(long step)> before_step;
};

// Trains in `out_dir` (created if needed), resuming from its checkpoint when
// one exists and `resume` is set. Checkpoints are written atomically after
// every `checkpoint_every` epochs and at the end, so a NaN abort leaves the
// last good one in place.
inline TrainResult train(const RunConfig& cfg, const Dataset& ds, const std::filesystem::path& out_dir, Logger& log,
                         bool resume = true, const TrainHooks& hooks = {}) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  DirectoryLock lock(out_dir);
  TrainResult res;
  res.checkpoint = out_dir / kCheckpointFile;
  res.log = out_dir / kLogFile;

  TrainState state(cfg.model, cfg.schedule, cfg.train_options(), cfg.seed);
  int start_epoch = 0;
  if (resume && std::filesystem::exists(res.checkpoint)) {
    Checkpoint ck = read_checkpoint(res.checkpoint);
    restore(state, ck);
    start_epoch = ck.epoch;
    truncate_log(res.log, ck.step);
    log.info("resuming from " + res.checkpoint.string() + " at epoch " + std::to_string(start_epoch) + ", step " +
             std::to_string(ck.step));
  }
  write_text(out_dir / "config.ini", to_ini(cfg));
  log.open(res.log, start_epoch > 0);

  auto priors = shared_priors(ds);
  std::vector<TrainingExample> examples = training_examples(state.reconstructor, ds, priors);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    state.set_epoch(epoch);
    std::vector<int> order = epoch_order(examples.size(), cfg.seed, epoch);
    for (std::size_t b = 0; b < order.size(); b += batch) {
      std::vector<const TrainingExample*> items;
      for (std::size_t i = b; i < std::min(order.size(), b + batch); ++i) items.push_back(&examples[static_cast<std::size_t>(order[i])]);
      StepMetrics m;
      try {
        if (hooks.before_step) hooks.before_step(state.step + 1);
        m = train_step(state, items);
      } catch (const ad::NumericError& e) {
        log.record(state.step + 1, "abort", std::numeric_limits<double>::quiet_NaN());
        log.flush();
        log.close();
        log.error(std::string(e.what()) + "; last good checkpoint kept at " + res.checkpoint.string());
        throw TrainingAborted(e.what());
      }
      for (std::size_t i = 0; i < 6; ++i) log.record(m.step, kLossTermNames[i], m.parts.values[i]);
      log.record(m.step, "total", m.total);
    }
    res.epochs_done = epoch + 1;
    log.flush();
    if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs) {
      write_checkpoint(res.checkpoint, make_checkpoint(cfg, state, epoch + 1));
    }
    log.info("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) + " done, step " +
             std::to_string(state.step));
    if (hooks.after_epoch) hooks.after_epoch(epoch, state);
  }
  if (cfg.epochs == start_epoch) write_checkpoint(res.checkpoint, make_checkpoint(cfg, state, start_epoch));
  res.epochs_done = std::max(res.epochs_done, start_epoch);
  res.steps = state.step;
  log.close();
  return res;
}

// Rebuilds the trained reconstructor from a checkpoint.
inline TrainState load_state(const Checkpoint& ck) {
  RunConfig cfg = checkpoint_config(ck);
  TrainState s(cfg.model, cfg.schedule, cfg.train_options(), cfg.seed);
  restore(s, ck);
  return s;
}

// Writes the report table and the plot CSV next to each other.
inline void write_evaluation(const Evaluation& ev, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  write_text(dir / (stem + ".txt"), evaluation_text(ev));
  write_text(dir / (stem + ".csv"), ev.report.csv());
}

// -------------------------------------------------------------------- ablate

struct AblationRow {
  std::string name;
  RunConfig config;
};

// baseline -> +instance -> +PIM -> +adversarial -> +deformation -> +assignment,
// each row adding one design to the previous.
inline std::vector<AblationRow> ablation_ladder(const RunConfig& base) {
  std::vector<AblationRow> rows;
  RunConfig c = base;
  c.model.use_pim = false;
  c.model.use_instance_branch = false;
  c.model.use_deformation_branch = false;
  c.model.use_assignment_branch = false;
  c.model.use_adversarial = false;
  rows.push_back({"baseline", c});
  c.model.use_instance_branch = true;
  rows.push_back({"+instance", c});
  c.model.use_pim = true;
  rows.push_back({"+PIM", c});
  c.model.use_adversarial = true;
  rows.push_back({"+adversarial", c});
  c.model.use_deformation_branch = true;
  rows.push_back({"+deformation", c});
  c.model.use_assignment_branch = true;
  rows.push_back({"+assignment", c});
  return rows;
}

inline std::string row_dirname(const std::string& name) {
  std::string s;
  for (char ch : name) s += (std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_');
  return s;
}

struct AblationResult {
  std::vector<std::string> names;
  std::vector<Evaluation> evaluations;

  std::string table() const {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-14s", "row");
    os << buf;
    if (!evaluations.empty()) {
      for (const auto& [n, v] : evaluations.front().report.accuracies) {
        std::snprintf(buf, sizeof(buf), "%10s", n.c_str());
        os << buf;
      }
    }
    os << "  nocs_chamfer\n";
    for (std::size_t i = 0; i < names.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%-14s", names[i].c_str());
      os << buf;
      for (const auto& [n, v] : evaluations[i].report.accuracies) {
        std::snprintf(buf, sizeof(buf), "%10.1f", 100.0 * v);
        os << buf;
      }
      std::snprintf(buf, sizeof(buf), "  %.6f\n", evaluations[i].mean_nocs_chamfer());
      os << buf;
    }
    return os.str();
  }
};

inline AblationResult ablate(const RunConfig& base, const Dataset& ds, const std::filesystem::path& out_dir, Logger& log) {
  AblationResult res;
  for (const auto& row : ablation_ladder(base)) {
    log.info("ablation row " + row.name);
    std::filesystem::path dir = out_dir / row_dirname(row.name);
    Logger row_log(log.level());
    train(row.config, ds, dir, row_log, /*resume=*/true);
    TrainState s = load_state(read_checkpoint(dir / kCheckpointFile));
    Evaluation ev = evaluate(s.reconstructor, ds, ds.val, row.config);
    write_evaluation(ev, dir, "eval_val");
    res.names.push_back(row.name);
    res.evaluations.push_back(std::move(ev));
  }
  write_text(out_dir / "ablation.txt", res.table());
  return res;
}

// --------------------------------------------------------------- plot export

// Splits a metric,threshold,accuracy CSV into one two-column file per
// metric, ready for gnuplot or a spreadsheet.
inline std::vector<std::filesystem::path> export_plots(const std::filesystem::path& csv, const std::filesystem::path& out_dir) {
  auto curves = MetricReport::parse_csv(read_text(csv));
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& [metric, points] : curves) {
    std::ostringstream os;
    os << "threshold,accuracy\n";
    for (const auto& p : points) os << format_value(p.threshold) << "," << format_value(p.accuracy) << "\n";
    std::filesystem::path path = out_dir / ("curve_" + metric + ".csv");
    write_text(path, os.str());
    written.push_back(path);
  }
  std::ostringstream gp;
  gp << "set datafile separator ','\nset key autotitle columnhead\nset yrange [0:1]\n";
  for (const auto& [metric, points] : curves) {
    gp << "set terminal pngcairo size 640,480\nset output 'curve_" << metric << ".png'\n";
    gp << "set xlabel '" << metric << " threshold'\nset ylabel 'accuracy'\n";
    gp << "plot 'curve_" << metric << ".csv' using 1:2 with lines title '" << metric << "'\n";
  }
  write_text(out_dir / "curves.gp", gp.str());
  written.push_back(out_dir / "curves.gp");
  return written;
}

}  // namespace acrpose
