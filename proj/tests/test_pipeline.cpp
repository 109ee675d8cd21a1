#include "acrpose/pipeline.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <unistd.h>

using namespace acrpose;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("acrpose_test_pipeline_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small enough that a training epoch takes well under a second.
RunConfig tiny_run(const fs::path& data_dir) {
  RunConfig c = desk_preset();
  c.dataset = data_dir.string();
  c.data.n_train = 32;
  c.data.n_val = 6;
  c.data.n_points = 32;
  c.data.n_prior = 24;
  c.data.appearance_dim = 4;
  c.data.model_points = 128;
  c.model.n_points = 32;
  c.model.n_prior = 24;
  c.model.appearance_dim = 4;
  c.model.channels = 4;
  c.model.k = 4;
  c.model.kernel_channels = 2;
  c.model.head_hidden = 8;
  c.model.disc_hidden = 4;
  c.batch_size = 8;
  c.epochs = 1;
  c.iou_samples = 2000;
  c.schedule.decay_epochs = {2};
  c.schedule.decay_factors = {0.5};
  return c;
}

const Dataset& tiny_dataset() {
  static const Dataset ds = [] {
    fs::path dir = scratch_dir("data");
    RunConfig c = tiny_run(dir);
    write_dataset(generate_stored_dataset(c.data), dir);
    return load_dataset(c);
  }();
  return ds;
}

RunConfig tiny_config() { return tiny_run(fs::temp_directory_path() / ("acrpose_test_pipeline_" + std::to_string(::getpid())) / "data"); }

std::vector<LogRecord> read_log(const fs::path& p) {
  std::vector<LogRecord> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) out.push_back(parse_log_record(line));
  return out;
}

Logger quiet() { return Logger(LogLevel::quiet); }

// ------------------------------------------------------------------- config

TEST(Config, PaperPresetFullScaleValues) {
  RunConfig p = paper_preset();
  EXPECT_EQ(p.weights.gamma, (std::array<double, 6>{0.1, 0.1, 1.0, 5.0, 0.0001, 0.01}));
  EXPECT_EQ(p.model.k, 36);
  EXPECT_EQ(p.model.channels, 64);
  EXPECT_EQ(p.model.n_points, 1024);
  EXPECT_EQ(p.model.n_prior, 1024);
  EXPECT_EQ(p.schedule.reconstructor_lr, 1e-4);
  EXPECT_EQ(p.schedule.discriminator_lr, 1e-5);
  EXPECT_EQ(p.batch_size, 96);
  EXPECT_NO_THROW(p.validate());
}

TEST(Config, DeskPresetIsTheSmallProfile) {
  RunConfig d = desk_preset();
  EXPECT_EQ(d.model.n_points, 256);
  EXPECT_EQ(d.model.n_prior, 256);
  EXPECT_EQ(d.model.channels, 16);
  EXPECT_EQ(d.model.k, 8);
  EXPECT_EQ(d.batch_size, 16);
  EXPECT_EQ(d.data.n_train, 600);
  EXPECT_EQ(d.data.n_val, 100);
  EXPECT_EQ(d.data.families.size(), 3u);
  EXPECT_LE(d.epochs, 30);
  EXPECT_EQ(d.weights.gamma, paper_preset().weights.gamma);
  EXPECT_NO_THROW(d.validate());
  EXPECT_THROW(preset("huge"), ConfigError);
}

TEST(Config, IniRoundTripReproducesEveryField) {
  RunConfig c = tiny_config();
  c.model.use_pim = false;
  c.weights.gamma[4] = 3.25e-5;
  c.data.families = {Family::handled, Family::box};
  c.grids.rot = {1, 2, 3.5};
  c.seed = 12345678901234ULL;
  RunConfig back;
  apply_ini_text(back, to_ini(c));
  EXPECT_EQ(to_ini(back), to_ini(c));
  EXPECT_EQ(back.weights.gamma, c.weights.gamma);
  EXPECT_EQ(back.data.families, c.data.families);
  EXPECT_FALSE(back.model.use_pim);
  EXPECT_EQ(back.seed, c.seed);
}

TEST(Config, PrecedenceIsCliOverFileOverPreset) {
  fs::path dir = scratch_dir("config");
  fs::path file = dir / "run.ini";
  write_text(file, "[run]\npreset = paper\nseed = 5\n\n[model]\nk = 12\nchannels = 32\n");
  ConfigSources src;
  src.file = file.string();
  RunConfig a = resolve_config(src);
  EXPECT_EQ(a.preset, "paper");
  EXPECT_EQ(a.model.n_points, 1024);
  EXPECT_EQ(a.model.k, 12);
  EXPECT_EQ(a.seed, 5u);

  src.preset = "desk";
  src.overrides = {{"model.k", "6"}, {"run.seed", "9"}};
  RunConfig b = resolve_config(src);
  EXPECT_EQ(b.preset, "desk");
  EXPECT_EQ(b.model.n_points, 256);
  EXPECT_EQ(b.model.channels, 32);
  EXPECT_EQ(b.model.k, 6);
  EXPECT_EQ(b.seed, 9u);
}

TEST(Config, BadInputIsReported) {
  RunConfig c = desk_preset();
  EXPECT_THROW(set_option(c, "model.nope", "1"), ConfigError);
  EXPECT_THROW(set_option(c, "model.k", "eight"), ConfigError);
  EXPECT_THROW(set_option(c, "model.use_pim", "maybe"), ConfigError);
  EXPECT_THROW(apply_ini_text(c, "[model]\nk = 3x\n"), ConfigError);
  EXPECT_THROW(apply_ini_text(c, "[model\nk = 3\n"), ConfigError);
  ConfigSources missing;
  missing.file = "/nonexistent/run.ini";
  EXPECT_THROW(resolve_config(missing), ConfigError);

  RunConfig bad = desk_preset();
  bad.model.n_points = 128;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = desk_preset();
  bad.model.k = 256;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = desk_preset();
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Config, ListsAndFlagsParse) {
  RunConfig c = desk_preset();
  set_option(c, "train.decay_epochs", "3, 7,9");
  EXPECT_EQ(c.schedule.decay_epochs, (std::vector<int>{3, 7, 9}));
  set_option(c, "model.use_adversarial", "off");
  EXPECT_FALSE(c.model.use_adversarial);
  set_option(c, "data.families", "box, revolution");
  EXPECT_EQ(get_option(c, "data.families"), "box, revolution");
  EXPECT_EQ(get_option(c, "model.use_adversarial"), "false");
}

// ---------------------------------------------------------------------- log

TEST(Log, RecordsAreStructuredAndParseBack) {
  EXPECT_EQ(log_record(12, "L_cd", 0.125), "step=12 term=L_cd value=0.125");
  LogRecord r = parse_log_record(log_record(7, "total", 1.0 / 3.0));
  EXPECT_EQ(r.step, 7);
  EXPECT_EQ(r.term, "total");
  EXPECT_EQ(r.value, std::stod(format_value(1.0 / 3.0)));
  EXPECT_THROW(parse_log_record("step=1 value=2"), std::runtime_error);
  EXPECT_THROW(parse_log_record("garbage"), std::runtime_error);
}

TEST(Log, VerbosityFromEnvironment) {
  ::setenv("ACRPOSE_LOG", "quiet", 1);
  EXPECT_EQ(log_level_from_env(), LogLevel::quiet);
  ::setenv("ACRPOSE_LOG", "debug", 1);
  EXPECT_EQ(log_level_from_env(), LogLevel::debug);
  ::unsetenv("ACRPOSE_LOG");
  EXPECT_EQ(log_level_from_env(), LogLevel::info);
}

// ------------------------------------------------------------ checkpoints

TEST(Checkpoint, RoundTripReproducesForwardOutputs) {
  const Dataset& ds = tiny_dataset();
  RunConfig cfg = tiny_config();
  TrainState s(cfg.model, cfg.schedule, cfg.train_options(), 3);
  auto examples = training_examples(s.reconstructor, ds, shared_priors(ds));
  std::vector<const TrainingExample*> batch = {&examples[0], &examples[1], &examples[2]};
  train_step(s, batch);
  train_step(s, batch);

  fs::path dir = scratch_dir("ckpt");
  write_checkpoint(dir / "c.bin", make_checkpoint(cfg, s, 1));
  Checkpoint ck = read_checkpoint(dir / "c.bin");
  EXPECT_EQ(ck.epoch, 1);
  EXPECT_EQ(ck.step, 2);
  TrainState loaded = load_state(ck);
  EXPECT_EQ(loaded.step, 2);
  EXPECT_EQ(loaded.reconstructor_opt.step, s.reconstructor_opt.step);

  // the same weights rounded to f32 in memory
  TrainState rounded(cfg.model, cfg.schedule, cfg.train_options(), 3);
  for (std::size_t i = 0; i < s.reconstructor.parameters().size(); ++i) {
    ad::Tensor p = rounded.reconstructor.parameters().entries()[i].tensor;
    p.mutable_value() = io::round_f32(s.reconstructor.parameters().entries()[i].tensor.value());
  }
  const TrainingExample& ex = examples[4];
  ad::Tape t(false);
  Matrix orig = s.reconstructor.forward(t, ex.geometry, ex.appearance, *ex.prior).nocs.value();
  Matrix back = loaded.reconstructor.forward(t, ex.geometry, ex.appearance, *ex.prior).nocs.value();
  Matrix ref32 = rounded.reconstructor.forward(t, ex.geometry, ex.appearance, *ex.prior).nocs.value();
  EXPECT_TRUE(back == ref32);
  EXPECT_LT((back - orig).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Checkpoint, EvaluationSurvivesSaveAndLoad) {
  const Dataset& ds = tiny_dataset();
  RunConfig cfg = tiny_config();
  fs::path dir = scratch_dir("ckpt_eval");
  Logger log = quiet();
  TrainState live(cfg.model, cfg.schedule, cfg.train_options(), cfg.seed);
  TrainHooks hooks;
  hooks.after_epoch = [&](int, const TrainState& s) {
    for (std::size_t i = 0; i < s.reconstructor.parameters().size(); ++i) {
      ad::Tensor p = live.reconstructor.parameters().entries()[i].tensor;
      p.mutable_value() = s.reconstructor.parameters().entries()[i].tensor.value();
    }
  };
  TrainResult r = train(cfg, ds, dir, log, false, hooks);
  Evaluation before = evaluate(live.reconstructor, ds, ds.val, cfg);
  Evaluation after = evaluate(load_state(read_checkpoint(r.checkpoint)).reconstructor, ds, ds.val, cfg);
  for (std::size_t i = 0; i < before.report.accuracies.size(); ++i) {
    EXPECT_NEAR(before.report.accuracies[i].second, after.report.accuracies[i].second, 1e-6);
  }
  EXPECT_NEAR(before.mean_nocs_chamfer(), after.mean_nocs_chamfer(), 1e-6);
  for (std::size_t i = 0; i < before.results.size(); ++i) {
    EXPECT_NEAR(before.results[i].error.rot_deg, after.results[i].error.rot_deg, 1e-3);
    EXPECT_NEAR(before.results[i].error.trans, after.results[i].error.trans,
                1e-6 * std::max(1.0, before.results[i].error.trans));
  }
}

TEST(Checkpoint, VersionAndShapeMismatchesAreErrors) {
  RunConfig cfg = tiny_config();
  TrainState s(cfg.model, cfg.schedule, cfg.train_options(), 1);
  fs::path dir = scratch_dir("ckpt_bad");
  write_checkpoint(dir / "c.bin", make_checkpoint(cfg, s, 0));
  std::string bytes = read_text(dir / "c.bin");
  std::string newer = bytes;
  newer[8] = 2;
  write_text(dir / "v2.bin", newer);
  try {
    read_checkpoint(dir / "v2.bin");
    FAIL() << "version 2 accepted";
  } catch (const VersionError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  write_text(dir / "short.bin", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(dir / "short.bin"), IoError);

  RunConfig other = cfg;
  other.model.use_pim = false;
  TrainState t(other.model, other.schedule, other.train_options(), 1);
  EXPECT_THROW(restore(t, read_checkpoint(dir / "c.bin")), IoError);
}

TEST(Checkpoint, AblationFlagsGiveDistinctParameterNames) {
  RunConfig cfg = tiny_config();
  std::vector<std::set<std::string>> names;
  for (const auto& row : ablation_ladder(cfg)) {
    TrainState s(row.config.model, row.config.schedule, row.config.train_options(), 1);
    std::set<std::string> n;
    for (const auto& t : make_checkpoint(row.config, s, 0).reconstructor) n.insert(t.name);
    names.push_back(n);
  }
  for (std::size_t i = 1; i < names.size(); ++i) {
    if (i == 3) {
      EXPECT_EQ(names[i], names[i - 1]);  // +adversarial only adds the discriminator phase
    } else {
      EXPECT_NE(names[i], names[i - 1]) << i;
    }
  }
}

TEST(Checkpoint, DirectoryLockIsExclusive) {
  fs::path dir = scratch_dir("lock");
  {
    DirectoryLock held(dir);
    EXPECT_THROW(DirectoryLock again(dir), IoError);
    Logger log = quiet();
    EXPECT_THROW(train(tiny_config(), tiny_dataset(), dir, log), IoError);
  }
  EXPECT_FALSE(fs::exists(dir / "LOCK"));
  EXPECT_NO_THROW(DirectoryLock again(dir));
}

// ----------------------------------------------------------------- training

TEST(Train, SmokeRunLogsEveryTermAndWritesALoadableCheckpoint) {
  fs::path dir = scratch_dir("smoke");
  Logger log = quiet();
  TrainResult r = train(tiny_config(), tiny_dataset(), dir, log);
  EXPECT_EQ(r.epochs_done, 1);
  EXPECT_EQ(r.steps, 4);  // 32 samples, batch 8
  EXPECT_TRUE(fs::exists(dir / "config.ini"));
  EXPECT_FALSE(fs::exists(dir / "LOCK"));
  auto recs = read_log(r.log);
  ASSERT_EQ(recs.size(), 4u * 7u);
  std::vector<std::string> want = {"L_d", "L_g", "L_corr", "L_cd", "L_entro", "L_reg", "total"};
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].step, static_cast<long>(i / 7 + 1));
    EXPECT_EQ(recs[i].term, want[i % 7]);
    EXPECT_TRUE(std::isfinite(recs[i].value));
  }
  Checkpoint ck = read_checkpoint(r.checkpoint);
  EXPECT_EQ(ck.epoch, 1);
  EXPECT_EQ(ck.step, 4);
  EXPECT_NO_THROW(load_state(ck));
}

TEST(Train, PartialLastBatchIsIncluded) {
  RunConfig cfg = tiny_config();
  cfg.batch_size = 10;
  fs::path dir = scratch_dir("partial");
  Logger log = quiet();
  EXPECT_EQ(train(cfg, tiny_dataset(), dir, log).steps, 4);
}

TEST(Train, SameConfigAndSeedGiveIdenticalLogsAndMetrics) {
  RunConfig cfg = tiny_config();
  cfg.epochs = 2;
  Logger log = quiet();
  fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
  train(cfg, tiny_dataset(), a, log);
  train(cfg, tiny_dataset(), b, log);
  EXPECT_EQ(read_text(a / kLogFile), read_text(b / kLogFile));
  EXPECT_EQ(read_text(a / kCheckpointFile), read_text(b / kCheckpointFile));
  const Dataset& ds = tiny_dataset();
  Evaluation ea = evaluate(load_state(read_checkpoint(a / kCheckpointFile)).reconstructor, ds, ds.val, cfg);
  Evaluation eb = evaluate(load_state(read_checkpoint(b / kCheckpointFile)).reconstructor, ds, ds.val, cfg);
  EXPECT_EQ(evaluation_text(ea), evaluation_text(eb));
  EXPECT_EQ(ea.report.csv(), eb.report.csv());
}

TEST(Train, ResumeContinuesTheStepCounterAndTrace) {
  RunConfig cfg = tiny_config();
  cfg.epochs = 3;
  Logger log = quiet();
  fs::path full = scratch_dir("resume_full"), part = scratch_dir("resume_part");
  train(cfg, tiny_dataset(), full, log);
  RunConfig first = cfg;
  first.epochs = 1;
  train(first, tiny_dataset(), part, log);
  TrainResult r = train(cfg, tiny_dataset(), part, log);
  EXPECT_EQ(r.steps, 12);
  EXPECT_EQ(r.epochs_done, 3);
  auto a = read_log(full / kLogFile);
  auto b = read_log(part / kLogFile);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].step, b[i].step);
    EXPECT_EQ(a[i].term, b[i].term);
    if (a[i].step <= 4) {
      EXPECT_EQ(a[i].value, b[i].value);
    } else {
      // resumed from f32 weights and moments
      EXPECT_NEAR(a[i].value, b[i].value, 1e-4 * std::max(1.0, std::abs(a[i].value))) << a[i].term << " " << a[i].step;
    }
  }
}

TEST(Train, NonFiniteLossAbortsAndKeepsTheLastGoodCheckpoint) {
  RunConfig cfg = tiny_config();
  cfg.epochs = 3;
  fs::path dir = scratch_dir("abort");
  Logger log = quiet();
  TrainHooks hooks;
  hooks.before_step = [](long step) {
    if (step == 6) throw ad::NumericError("non-finite loss term L_corr");
  };
  EXPECT_THROW(train(cfg, tiny_dataset(), dir, log, true, hooks), TrainingAborted);
  EXPECT_FALSE(fs::exists(dir / "LOCK"));
  Checkpoint ck = read_checkpoint(dir / kCheckpointFile);
  EXPECT_EQ(ck.epoch, 1);
  EXPECT_EQ(ck.step, 4);
  auto recs = read_log(dir / kLogFile);
  ASSERT_FALSE(recs.empty());
  EXPECT_EQ(recs.back().term, "abort");
  EXPECT_EQ(recs.back().step, 6);
  // a later run resumes from the retained checkpoint
  TrainResult r = train(cfg, tiny_dataset(), dir, log);
  EXPECT_EQ(r.steps, 12);
  EXPECT_EQ(read_log(dir / kLogFile).size(), 12u * 7u);
}

TEST(Train, MissingDatasetIsReported) {
  RunConfig cfg = tiny_config();
  cfg.dataset = "/nonexistent/dataset";
  EXPECT_THROW(load_dataset(cfg), IoError);
  tiny_dataset();  // the stored dataset must exist for the shape check
  RunConfig wrong = tiny_config();
  wrong.model.n_points = wrong.data.n_points = 40;
  EXPECT_THROW(load_dataset(wrong), ConfigError);
}

TEST(Train, EpochOrderIsAPermutationDeterminedBySeedAndEpoch) {
  auto a = epoch_order(50, 3, 0);
  EXPECT_EQ(a, epoch_order(50, 3, 0));
  EXPECT_NE(a, epoch_order(50, 3, 1));
  EXPECT_NE(a, epoch_order(50, 4, 0));
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

// --------------------------------------------------------------- evaluation

TEST(Eval, OracleModeIsNearlyPerfect) {
  const Dataset& ds = tiny_dataset();
  RunConfig cfg = tiny_config();
  TrainState s(cfg.model, cfg.schedule, cfg.train_options(), 1);
  Evaluation ev = evaluate(s.reconstructor, ds, ds.val, cfg, true);
  for (const auto& [name, acc] : ev.report.accuracies) EXPECT_EQ(acc, 1.0) << name;
  EXPECT_EQ(ev.mean_nocs_chamfer(), 0.0);
  for (const auto& r : ev.results) EXPECT_GT(r.iou, 0.9);
}

TEST(Eval, UntrainedNetworkStillYieldsValidPoses) {
  const Dataset& ds = tiny_dataset();
  RunConfig cfg = tiny_config();
  TrainState s(cfg.model, cfg.schedule, cfg.train_options(), 1);
  for (const auto& r : ds.val) {
    SamplePrediction p = predict(s.reconstructor, s.reconstructor.geometry(r.observed), r,
                                 ds.categories[static_cast<std::size_t>(r.category)].prior, false, SizeMode::extents);
    EXPECT_TRUE(p.solution.pose.valid(1e-9));
    EXPECT_TRUE((p.solution.size.metric.array() >= 0.0).all());
  }
}

TEST(Eval, WrittenCsvParsesBackAndExportsCurves) {
  const Dataset& ds = tiny_dataset();
  RunConfig cfg = tiny_config();
  TrainState s(cfg.model, cfg.schedule, cfg.train_options(), 1);
  Evaluation ev = evaluate(s.reconstructor, ds, ds.val, cfg);
  fs::path dir = scratch_dir("eval_out");
  write_evaluation(ev, dir, "eval_val");
  auto parsed = MetricReport::parse_csv(read_text(dir / "eval_val.csv"));
  for (const auto& [name, curve] : ev.report.curves) {
    ASSERT_EQ(parsed.at(name).size(), curve.size());
    for (std::size_t i = 0; i < curve.size(); ++i) {
      EXPECT_EQ(parsed.at(name)[i].threshold, curve[i].threshold);
      EXPECT_EQ(parsed.at(name)[i].accuracy, curve[i].accuracy);
    }
  }
  auto files = export_plots(dir / "eval_val.csv", dir / "plots");
  EXPECT_EQ(files.size(), 4u);
  std::string rot = read_text(dir / "plots" / "curve_rot.csv");
  EXPECT_EQ(rot.substr(0, rot.find('\n')), "threshold,accuracy");
  EXPECT_TRUE(fs::exists(dir / "plots" / "curves.gp"));
}

// ----------------------------------------------------------------- ablation

TEST(Ablation, LadderHasSixRowsAddingOneDesignEach) {
  RunConfig base = tiny_config();
  auto rows = ablation_ladder(base);
  ASSERT_EQ(rows.size(), 6u);
  std::vector<std::string> names = {"baseline", "+instance", "+PIM", "+adversarial", "+deformation", "+assignment"};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(rows[i].name, names[i]);
  const ModelConfig& b = rows[0].config.model;
  EXPECT_FALSE(b.use_pim || b.use_instance_branch || b.use_deformation_branch || b.use_assignment_branch ||
               b.use_adversarial);
  EXPECT_EQ(to_ini(rows[5].config), to_ini(base));
  EXPECT_FALSE(rows[0].config.train_options().adversarial);
}

TEST(Ablation, FullRowMatchesAPlainTrainingRunExactly) {
  RunConfig cfg = tiny_config();
  Logger log = quiet();
  fs::path dir = scratch_dir("ablate");
  AblationResult res = ablate(cfg, tiny_dataset(), dir, log);
  ASSERT_EQ(res.names.size(), 6u);
  std::string table = read_text(dir / "ablation.txt");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 7);
  EXPECT_NE(table.find("+assignment"), std::string::npos);

  fs::path solo = scratch_dir("ablate_solo");
  train(cfg, tiny_dataset(), solo, log);
  const Dataset& ds = tiny_dataset();
  Evaluation ev = evaluate(load_state(read_checkpoint(solo / kCheckpointFile)).reconstructor, ds, ds.val, cfg);
  EXPECT_EQ(evaluation_text(ev), evaluation_text(res.evaluations.back()));
  EXPECT_EQ(read_text(solo / kLogFile), read_text(dir / row_dirname("+assignment") / kLogFile));
}

}  // namespace
