#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pmil/bagio.hpp"
#include "pmil/checkpoint.hpp"
#include "pmil/config.hpp"
#include "pmil/errors.hpp"
#include "pmil/experiment.hpp"
#include "pmil/report.hpp"

namespace fs = std::filesystem;
using namespace pmil;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string mode;
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
  auto* c = cmd->add_option("--config", opts.config_path, "experiment config file");
  if (config_required) c->required();
  cmd->add_option("--out", opts.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", opts.seed, "run seed (overrides config)");
  cmd->add_option("--mode", opts.mode, "prompt | conventional | full")
      ->check(CLI::IsMember({"prompt", "conventional", "full"}));
}

ExperimentConfig load_config(const CommonOpts& opts) {
  ExperimentConfig cfg =
      opts.config_path.empty() ? default_config() : parse_config_file(opts.config_path);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(opts.seed);
  if (opts.mode == "prompt") cfg.mode = TrainMode::PromptMIL;
  else if (opts.mode == "conventional") cfg.mode = TrainMode::ConventionalMIL;
  else if (opts.mode == "full") cfg.mode = TrainMode::FullFineTune;
  return cfg;
}

std::vector<Bag> bench_bags(const ExperimentConfig& cfg, const std::vector<int>& sizes) {
  std::vector<Bag> bags;
  for (int n : sizes) {
    GenSpec spec = cfg.data;
    spec.n_min = n;
    spec.n_max = n;
    spec.train_bags = 1;
    spec.val_bags = 1;
    spec.test_bags = 1;
    bags.push_back(generate_dataset(spec).train[0]);
  }
  return bags;
}

int cmd_gen_data(const CommonOpts& opts) {
  ExperimentConfig cfg = load_config(opts);
  if (cfg.out_dir.empty()) throw ConfigError("gen-data: no output directory");
  cfg.data.validate();
  Dataset ds = generate_dataset(cfg.data);
  write_dataset(ds, cfg.out_dir);
  std::cout << "wrote " << ds.train.size() << " train / " << ds.val.size() << " val / "
            << ds.test.size() << " test bags to " << cfg.out_dir << "\n";
  std::cout << "data_fingerprint " << hex_u64(dataset_fingerprint(ds)) << "\n";
  return kExitOk;
}

int cmd_train(const CommonOpts& opts) {
  ExperimentConfig cfg = load_config(opts);
  cfg.normalize_and_validate();
  fs::create_directories(cfg.out_dir);

  std::ofstream report(fs::path(cfg.out_dir) / "report.jsonl");
  if (!report) throw DataError("cannot write report under " + cfg.out_dir);

  Checkpoint best;
  ExperimentResult res = run_experiment(cfg, &report, &best);
  write_checkpoint(best, (fs::path(cfg.out_dir) / "checkpoint.pmck").string());

  std::cout << "mode " << train_mode_name(cfg.mode) << "  seed " << cfg.train.seed
            << "  prompt_params " << res.census.prompt << "  head_params "
            << res.census.head << "\n";
  std::cout << "best_val_accuracy " << res.best_val_accuracy << " (epoch "
            << res.best_epoch << ")\n";
  std::cout << "test accuracy " << res.test_accuracy << "  auroc " << res.test_auroc
            << "  loss " << res.test_loss << "\n";
  std::cout << "report " << (fs::path(cfg.out_dir) / "report.jsonl").string() << "\n";
  return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_path,
             const std::string& data_dir, const std::string& split) {
  std::string ckpt_path = checkpoint_path;
  if (ckpt_path.empty()) {
    ExperimentConfig cfg = load_config(opts);
    ckpt_path = (fs::path(cfg.out_dir) / "checkpoint.pmck").string();
  }
  Checkpoint ckpt = read_checkpoint(ckpt_path);
  ExperimentConfig cfg = parse_config(ckpt.config_ini);
  if (!data_dir.empty()) cfg.data_path = data_dir;

  Dataset ds = cfg.data_path.empty() ? generate_dataset(cfg.data)
                                     : load_dataset(cfg.data_path);
  PromptVit model(cfg.model, cfg.train.seed, cfg.train.precision);
  MILHead head(cfg.head_kind, cfg.model.embed_dim, cfg.task, cfg.train.seed,
               cfg.train.precision);
  restore_params(ckpt, model, head);
  Trainer trainer(model, head, cfg.train, cfg.mode);

  const std::vector<Bag>& bags =
      split == "train" ? ds.train : (split == "val" ? ds.val : ds.test);
  Trainer::EvalResult r = trainer.evaluate(bags);
  append_record(std::cout, Json{{"record", "eval"},
                                {"split", split},
                                {"loss", r.loss},
                                {"accuracy", r.acc},
                                {"auroc", r.auc},
                                {"n_bags", bags.size()}});
  return kExitOk;
}

int cmd_bench_mem(const CommonOpts& opts, std::vector<int> sizes) {
  ExperimentConfig cfg = load_config(opts);
  cfg.normalize_and_validate();
  if (sizes.empty()) sizes = {64, 128, 256};

  PromptVit model = build_model(cfg);
  MILHead head(cfg.head_kind, cfg.model.embed_dim, cfg.task, cfg.train.seed,
               cfg.train.precision);
  Trainer trainer(model, head, cfg.train, cfg.mode);

  std::vector<Bag> bags = bench_bags(cfg, sizes);
  std::vector<BenchRow> rows = bench_strategies(trainer, bags);

  std::ofstream file_report;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    file_report.open(fs::path(cfg.out_dir) / "bench.jsonl");
  }

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const BenchRow& row = rows[i];
    Json rec{{"record", "bench"},
             {"strategy", strategy_name(row.strategy)},
             {"n_instances", row.n_instances},
             {"peak_act_elems", row.peak_act_elems},
             {"secs_per_bag", row.secs_per_bag},
             {"loss", row.loss}};
    if (row.strategy == Strategy::ThreeStep && i > 0) {
      const BenchRow& full = rows[i - 1];
      rec["mem_reduction_pct"] =
          100.0 * (1.0 - static_cast<double>(row.peak_act_elems) /
                             static_cast<double>(full.peak_act_elems));
      rec["time_reduction_pct"] =
          100.0 * (1.0 - row.secs_per_bag / full.secs_per_bag);
    }
    append_record(std::cout, rec);
    if (file_report) append_record(file_report, rec);
  }
  return kExitOk;
}

int cmd_ablate_k(const CommonOpts& opts, std::vector<int> ks) {
  ExperimentConfig base = load_config(opts);
  if (ks.empty()) ks = {1, 2, 3};
  for (int k : ks)
    if (k < 1) throw ConfigError("ablate-k: k values must be >= 1");

  std::ofstream file_report;
  if (!base.out_dir.empty()) {
    fs::create_directories(base.out_dir);
    file_report.open(fs::path(base.out_dir) / "ablate.jsonl");
  }

  std::cout << "k\taccuracy\tauroc\tdata_fingerprint\tseed\n";
  for (int k : ks) {
    ExperimentConfig cfg = base;
    cfg.mode = TrainMode::PromptMIL;
    cfg.model.num_prompts = k;
    cfg.out_dir = (fs::path(base.out_dir) / ("k" + std::to_string(k))).string();
    cfg.normalize_and_validate();
    fs::create_directories(cfg.out_dir);

    std::ofstream sub_report(fs::path(cfg.out_dir) / "report.jsonl");
    Checkpoint best;
    ExperimentResult res = run_experiment(cfg, &sub_report, &best);
    write_checkpoint(best, (fs::path(cfg.out_dir) / "checkpoint.pmck").string());

    Json rec{{"record", "ablate"},
             {"k", k},
             {"accuracy", res.test_accuracy},
             {"auroc", res.test_auroc},
             {"data_fingerprint", hex_u64(res.data_fingerprint)},
             {"seed", cfg.train.seed}};
    if (file_report) append_record(file_report, rec);
    std::cout << k << "\t" << res.test_accuracy << "\t" << res.test_auroc << "\t"
              << hex_u64(res.data_fingerprint) << "\t" << cfg.train.seed << "\n";
  }
  return kExitOk;
}

int cmd_print_config(const CommonOpts& opts) {
  ExperimentConfig cfg = load_config(opts);
  std::cout << to_ini(cfg);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prompt-tuned multiple-instance learning trainer"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, eval_opts, bench_opts, ablate_opts, print_opts;
  std::string eval_checkpoint, eval_data, eval_split = "test";
  std::vector<int> bench_sizes, ablate_ks;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic bag dataset");
  add_common(gen, gen_opts, true);

  CLI::App* train = app.add_subcommand("train", "train per the config");
  add_common(train, train_opts, true);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_opts, false);
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file");
  eval->add_option("--data", eval_data, "dataset directory override");
  eval->add_option("--split", eval_split, "train | val | test")
      ->check(CLI::IsMember({"train", "val", "test"}));

  CLI::App* bench = app.add_subcommand("bench-mem", "strategy memory/speed benchmark");
  add_common(bench, bench_opts, true);
  bench->add_option("--sizes", bench_sizes, "bag sizes")->delimiter(',');

  CLI::App* ablate = app.add_subcommand("ablate-k", "sweep the prompt token count");
  add_common(ablate, ablate_opts, true);
  ablate->add_option("--k", ablate_ks, "prompt token counts")->delimiter(',');

  CLI::App* print = app.add_subcommand("print-config", "print the effective config");
  add_common(print, print_opts, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_opts);
    if (train->parsed()) return cmd_train(train_opts);
    if (eval->parsed()) return cmd_eval(eval_opts, eval_checkpoint, eval_data, eval_split);
    if (bench->parsed()) return cmd_bench_mem(bench_opts, bench_sizes);
    if (ablate->parsed()) return cmd_ablate_k(ablate_opts, ablate_ks);
    if (print->parsed()) return cmd_print_config(print_opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
