// acrpose: gen-data, train, eval, ablate, export-plots.

#include "acrpose/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

using namespace acrpose;

namespace {

struct CommonFlags {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string data;
  std::vector<std::string> set;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "INI config file");
  cmd->add_option("--preset", f.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--data", f.data, "dataset directory");
  cmd->add_option("--set", f.set, "override, section.key=value (repeatable)");
}

RunConfig resolve(const CommonFlags& f) {
  ConfigSources src;
  if (!f.preset.empty()) src.preset = f.preset;
  if (!f.config.empty()) src.file = f.config;
  if (f.seed) src.overrides.emplace_back("run.seed", std::to_string(*f.seed));
  if (!f.data.empty()) src.overrides.emplace_back("run.dataset", f.data);
  for (const auto& kv : f.set) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
    src.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return resolve_config(src);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Category-level pose estimation with adversarial canonical reconstruction"};
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, ablate_f;
  std::string gen_out, train_out = "runs/train", ablate_out = "runs/ablate";
  bool fresh = false;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_common(gen, gen_f);
  gen->add_option("--out", gen_out, "dataset directory (defaults to run.dataset)");

  auto* tr = app.add_subcommand("train", "train the reconstructor and discriminator");
  add_common(tr, train_f);
  tr->add_option("--out", train_out, "run directory for checkpoint and log");
  tr->add_flag("--fresh", fresh, "ignore an existing checkpoint in --out");

  std::string ckpt, split = "val", eval_out, eval_data;
  bool oracle = false;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  ev->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));
  ev->add_option("--data", eval_data, "dataset directory (defaults to the checkpoint's)");
  ev->add_option("--out", eval_out, "directory for the report and plot CSV");
  ev->add_flag("--oracle", oracle, "feed ground-truth NOCS instead of the network");

  auto* ab = app.add_subcommand("ablate", "train and evaluate the six-row ablation ladder");
  add_common(ab, ablate_f);
  ab->add_option("--out", ablate_out, "directory for the ladder runs");

  std::string csv, plots_out = "plots";
  auto* ex = app.add_subcommand("export-plots", "split an eval CSV into per-metric curve files");
  ex->add_option("--csv", csv, "CSV written by eval")->required();
  ex->add_option("--out", plots_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  Logger log;
  try {
    if (gen->parsed()) {
      RunConfig cfg = resolve(gen_f);
      std::string dir = gen_out.empty() ? cfg.dataset : gen_out;
      Dataset ds = generate_stored_dataset(cfg.data);
      write_dataset(ds, dir);
      std::cout << "wrote " << dir << ": " << ds.train.size() << " train, " << ds.val.size() << " val, "
                << ds.categories.size() << " categories, N_p=" << cfg.data.n_points << " N_c=" << cfg.data.n_prior
                << " A=" << cfg.data.appearance_dim << " seed=" << cfg.data.seed << "\n";
    } else if (tr->parsed()) {
      RunConfig cfg = resolve(train_f);
      Dataset ds = load_dataset(cfg);
      TrainResult r = train(cfg, ds, train_out, log, !fresh);
      TrainState s = load_state(read_checkpoint(r.checkpoint));
      Evaluation e = evaluate(s.reconstructor, ds, ds.val.empty() ? ds.train : ds.val, cfg);
      write_evaluation(e, train_out, "eval_val");
      std::cout << evaluation_text(e);
      std::cout << "checkpoint: " << r.checkpoint.string() << "\nlog: " << r.log.string() << "\n";
    } else if (ev->parsed()) {
      Checkpoint ck = read_checkpoint(ckpt);
      RunConfig cfg = checkpoint_config(ck);
      if (!eval_data.empty()) cfg.dataset = eval_data;
      Dataset ds = load_dataset(cfg);
      TrainState s = load_state(ck);
      const auto& samples = split == "train" ? ds.train : ds.val;
      Evaluation e = evaluate(s.reconstructor, ds, samples, cfg, oracle);
      std::cout << evaluation_text(e);
      if (!eval_out.empty()) {
        std::string stem = "eval_" + split + (oracle ? "_oracle" : "");
        write_evaluation(e, eval_out, stem);
        std::cout << "wrote " << eval_out << "/" << stem << ".{txt,csv}\n";
      }
    } else if (ab->parsed()) {
      RunConfig cfg = resolve(ablate_f);
      Dataset ds = load_dataset(cfg);
      AblationResult r = ablate(cfg, ds, ablate_out, log);
      std::cout << r.table();
    } else if (ex->parsed()) {
      for (const auto& p : export_plots(csv, plots_out)) std::cout << "wrote " << p.string() << "\n";
    }
  } catch (const std::exception& e) {
    log.error(e.what());
    return 1;
  }
  return 0;
}
