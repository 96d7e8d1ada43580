// myow: batch CLI around the training engine. Subcommands: train,
// linear-eval, generate, split, inspect-mining.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "myow/checkpoint.hpp"
#include "myow/config.hpp"
#include "myow/data.hpp"
#include "myow/eval.hpp"
#include "myow/trainer.hpp"

namespace fs = std::filesystem;
using namespace myow;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNanLoss = 3;

std::uint64_t seed_with_env_override(std::uint64_t config_seed) {
  const char* env = std::getenv("MYOW_SEED");
  if (!env || !*env) return config_seed;
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(env, &pos);
    if (pos != std::string(env).size()) throw std::invalid_argument("junk");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("MYOW_SEED is not an integer: ") +
                                env);
  }
}

void require_empty_or_force(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir))
    throw std::invalid_argument("output path is not a directory: " +
                                dir.string());
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw std::invalid_argument("output dir not empty (use --force): " +
                                dir.string());
  fs::create_directories(dir);
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config_path;
  std::string preset;
  std::string data_path;
  std::string out_dir;
  std::string mode;  // "" | myow | byol
  std::string resume;
  long epochs_override = -1;
  bool force = false;
  bool audit = false;
};

int cmd_train(const TrainArgs& args) {
  RunConfig cfg;
  if (!args.resume.empty()) {
    cfg = RunConfig::parse_text(load_checkpoint(args.resume).config_text);
  } else if (!args.config_path.empty()) {
    cfg = RunConfig::load(args.config_path);
  } else if (!args.preset.empty()) {
    cfg = RunConfig::preset(args.preset);
  } else {
    throw std::invalid_argument("train: need --config, --preset, or --resume");
  }
  if (!args.data_path.empty()) cfg.data_path = args.data_path;
  if (cfg.data_path.empty())
    throw std::invalid_argument("train: no dataset (set data.path or --data)");
  if (args.mode == "byol") cfg.byol_mode = true;
  else if (args.mode == "myow") cfg.byol_mode = false;
  else if (!args.mode.empty())
    throw std::invalid_argument("train: --mode must be myow or byol");
  if (args.epochs_override > 0) cfg.epochs = args.epochs_override;
  cfg.seed = seed_with_env_override(cfg.seed);
  cfg.validate();

  const fs::path out(args.out_dir);
  require_empty_or_force(out, args.force || !args.resume.empty());

  BinnedDataset ds = load_dataset(cfg.data_path);
  Trainer trainer(cfg, std::move(ds));
  if (!args.resume.empty()) trainer.restore(load_checkpoint(args.resume));

  {
    std::ofstream cfg_out(out / "config.txt");
    cfg_out << cfg.canonical_text();
  }
  std::ofstream log(out / "loss.csv", std::ios::app);
  if (!log) throw std::runtime_error("train: cannot open loss.csv");
  trainer.set_log(&log);
  std::ofstream audit;
  if (args.audit && !cfg.byol_mode) {
    audit.open(out / "mining_audit.log", std::ios::app);
    trainer.set_audit(&audit);
  }

  trainer.run([&](const EpochStats& s) {
    if (cfg.checkpoint_every > 0 && (s.epoch + 1) % cfg.checkpoint_every == 0 &&
        s.epoch + 1 < cfg.epochs) {
      std::ostringstream name;
      name << "checkpoint_epoch" << (s.epoch + 1) << ".ckpt";
      save_checkpoint(trainer.make_checkpoint(), (out / name.str()).string());
    }
  });
  save_checkpoint(trainer.make_checkpoint(),
                  (out / "checkpoint_final.ckpt").string());
  std::cout << "trained " << trainer.total_steps() << " steps ("
            << cfg.epochs << " epochs), outputs in " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// linear-eval

struct EvalArgs {
  std::string checkpoint;
  std::string data_path;
  std::string split_path;
  std::string out_path;
  std::string task = "reach";
  std::string tag = "test";
  bool allow_train = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_linear_eval(const EvalArgs& args) {
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  RunConfig cfg = RunConfig::parse_text(ckpt.config_text);
  if (!args.data_path.empty()) cfg.data_path = args.data_path;
  BinnedDataset ds = load_dataset(cfg.data_path);
  SplitAssignment split = load_split(args.split_path, ds.num_bins());

  Trainer trainer(cfg, ds, split.indices(SplitTag::Train));
  trainer.restore(ckpt);  // width mismatch surfaces here
  Tensor reps = trainer.encode_dataset();

  ReadoutSpec spec;
  if (args.task == "reach") {
    spec.task = ReadoutSpec::Task::ReachAngle;
  } else if (args.task == "multiclass") {
    spec.task = ReadoutSpec::Task::Multiclass;
    int max_label = 0;
    for (int y : ds.labels) max_label = std::max(max_label, y);
    spec.num_classes = static_cast<std::size_t>(max_label) + 1;
  } else {
    throw std::invalid_argument("linear-eval: --task must be reach|multiclass");
  }
  if (args.tag == "test") spec.report_tag = SplitTag::Test;
  else if (args.tag == "val") spec.report_tag = SplitTag::Val;
  else if (args.tag == "train") {
    if (!args.allow_train)
      throw std::invalid_argument(
          "linear-eval: reporting on the train tag requires --allow-train");
    spec.report_tag = SplitTag::Train;
  } else {
    throw std::invalid_argument("linear-eval: --tag must be train|val|test");
  }

  const std::uint64_t seed = args.seed_set ? args.seed : cfg.seed;
  DecodeResult res = evaluate_readout(reps, ds.labels, split, spec, seed);

  std::ostringstream csv;
  char buf[64];
  auto row = [&](const char* metric, double value) {
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    csv << metric << ',' << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", res.chosen_weight_decay);
    csv << buf << ',' << seed << '\n';
  };
  csv << "metric,value,wd,seed\n";
  row("accuracy", res.accuracy);
  row("delta_accuracy", res.delta_accuracy);
  row("macro_f1", res.macro_f1);
  if (!args.out_path.empty()) {
    std::ofstream out(args.out_path);
    if (!out)
      throw std::runtime_error("linear-eval: cannot open " + args.out_path);
    out << csv.str();
  }
  std::cout << csv.str() << "\n"
            << "summary:\n"
            << "  task            " << args.task << " (reported on "
            << args.tag << " rows)\n"
            << "  accuracy        " << res.accuracy << "\n"
            << "  delta_accuracy  " << res.delta_accuracy << "\n"
            << "  macro_f1        " << res.macro_f1 << "\n"
            << "  weight_decay    " << res.chosen_weight_decay << "\n"
            << "  seed            " << seed << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string kind = "reach";
  std::uint64_t seed = 42;
  std::string out_path;
  std::string out_test;  // manifold
  long trials = -1;
  double rate = -1.0;
};

int cmd_generate(const GenerateArgs& args) {
  if (args.out_path.empty())
    throw std::invalid_argument("generate: --out is required");
  if (args.kind == "reach") {
    ReachSpec spec;
    if (args.trials > 0) spec.n_trials = static_cast<std::size_t>(args.trials);
    BinnedDataset ds = gen_reach_synthetic(spec, args.seed);
    save_dataset(ds, args.out_path);
    std::cout << "wrote " << ds.num_bins() << " bins x " << ds.d
              << " neurons to " << args.out_path << "\n";
  } else if (args.kind == "manifold") {
    if (args.out_test.empty())
      throw std::invalid_argument("generate: manifold needs --out-test");
    LatentManifoldSpec spec;
    if (args.rate > 0.0) spec.rate = args.rate;
    ManifoldPair pair = gen_latent_manifold(spec, args.seed);
    save_dataset(pair.train, args.out_path);
    save_dataset(pair.test, args.out_test);
    std::cout << "wrote " << pair.train.num_bins() << " train / "
              << pair.test.num_bins() << " test samples\n";
  } else {
    throw std::invalid_argument("generate: --kind must be reach|manifold");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// split

int cmd_split(const std::string& data_path, const std::string& out_path,
              const std::vector<double>& ratios) {
  BinnedDataset ds = load_dataset(data_path);
  std::array<double, 3> r = {0.7, 0.1, 0.2};
  if (!ratios.empty()) {
    if (ratios.size() != 3)
      throw std::invalid_argument("split: --ratios needs three values");
    r = {ratios[0], ratios[1], ratios[2]};
  }
  SplitAssignment split = temporal_split(ds, r);
  save_split(split, ds, out_path);
  std::cout << "wrote split (" << split.indices(SplitTag::Train).size()
            << " train / " << split.indices(SplitTag::Val).size() << " val / "
            << split.indices(SplitTag::Test).size() << " test) to " << out_path
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// inspect-mining

int cmd_inspect_mining(const std::string& audit_path,
                       const std::string& data_path) {
  BinnedDataset ds = load_dataset(data_path);
  std::ifstream in(audit_path);
  if (!in)
    throw std::invalid_argument("inspect-mining: cannot open " + audit_path);

  std::string line;
  if (!std::getline(in, line) || line != "#myow-mining-audit v1")
    throw std::invalid_argument("inspect-mining: bad audit header");
  if (!std::getline(in, line) || line.rfind("# mask=", 0) != 0)
    throw std::invalid_argument("inspect-mining: missing mask line");
  MaskPredicate mask = MaskPredicate::None;
  double window_s = 0.0;
  {
    std::istringstream meta(line.substr(2));
    std::string tok;
    while (meta >> tok) {
      if (tok.rfind("mask=", 0) == 0) {
        const std::string m = tok.substr(5);
        if (m == "none") mask = MaskPredicate::None;
        else if (m == "exclude-same-trial") mask = MaskPredicate::ExcludeSameTrial;
        else if (m == "exclude-time-window") mask = MaskPredicate::ExcludeTimeWindow;
        else throw std::invalid_argument("inspect-mining: unknown mask " + m);
      } else if (tok.rfind("window_s=", 0) == 0) {
        window_s = std::stod(tok.substr(9));
      }
    }
  }
  std::getline(in, line);  // column header

  std::map<long, std::pair<std::size_t, std::size_t>> per_epoch;  // agree, n
  std::size_t violations = 0, total = 0;
  long lineno = 3;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    long step, epoch;
    std::size_t anchor, candidate, rank;
    double distance;
    char c;
    if (!(row >> step >> c >> epoch >> c >> anchor >> c >> candidate >> c >>
          distance >> c >> rank))
      throw std::invalid_argument("inspect-mining: bad row at line " +
                                  std::to_string(lineno));
    if (anchor >= ds.num_bins() || candidate >= ds.num_bins())
      throw std::invalid_argument("inspect-mining: id out of range at line " +
                                  std::to_string(lineno));
    ++total;
    auto& [agree, n] = per_epoch[epoch];
    ++n;
    if (ds.labels[anchor] == ds.labels[candidate]) ++agree;
    SampleMeta a, b;
    a.timestamp = ds.timestamps[anchor];
    b.timestamp = ds.timestamps[candidate];
    if (ds.has_trials()) {
      a.trial_id = ds.trial_ids[anchor];
      b.trial_id = ds.trial_ids[candidate];
    }
    a.source_index = anchor;
    b.source_index = candidate;
    if (!mask_allows(a, b, mask, window_s)) ++violations;
  }

  std::cout << "epoch,pairs,label_agreement\n";
  double weighted = 0.0;
  for (const auto& [epoch, counts] : per_epoch) {
    const double rate =
        static_cast<double>(counts.first) / static_cast<double>(counts.second);
    std::cout << epoch << ',' << counts.second << ',' << rate << '\n';
    weighted += static_cast<double>(counts.first);
  }
  std::cout << "total pairs: " << total << "\n";
  if (total > 0)
    std::cout << "overall label agreement: "
              << weighted / static_cast<double>(total) << "\n";
  std::cout << "mask violations: " << violations << "\n";
  return violations == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MYOW training engine: mined-view self-supervised learning "
               "for binned neural activity"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Run self-supervised training");
  train->add_option("--config", train_args.config_path, "run config file");
  train->add_option("--preset", train_args.preset,
                    "named preset (neural-main, neural-appendix, manifold)");
  train->add_option("--data", train_args.data_path, "dataset file");
  train->add_option("--out", train_args.out_dir, "output directory")
      ->required();
  train->add_option("--mode", train_args.mode, "myow (default) or byol");
  train->add_option("--epochs", train_args.epochs_override,
                    "override run.epochs");
  train->add_option("--resume", train_args.resume, "checkpoint to resume");
  train->add_flag("--force", train_args.force, "write into a nonempty dir");
  train->add_flag("--audit", train_args.audit, "write the mining audit log");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand(
      "linear-eval", "Linear readout on frozen representations");
  eval->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval->add_option("--data", eval_args.data_path, "dataset override");
  eval->add_option("--split", eval_args.split_path, "split CSV")->required();
  eval->add_option("--out", eval_args.out_path, "metrics CSV path");
  eval->add_option("--task", eval_args.task, "reach (default) or multiclass");
  eval->add_option("--tag", eval_args.tag, "report split: test (default), val, train");
  eval->add_flag("--allow-train", eval_args.allow_train,
                 "permit reporting on the train tag");
  auto* seed_opt = eval->add_option("--seed", eval_args.seed,
                                    "readout init seed (default: run seed)");

  GenerateArgs gen_args;
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  gen->add_option("--kind", gen_args.kind, "reach (default) or manifold");
  gen->add_option("--seed", gen_args.seed, "generator seed");
  gen->add_option("--out", gen_args.out_path, "output dataset path")
      ->required();
  gen->add_option("--out-test", gen_args.out_test,
                  "test dataset path (manifold)");
  gen->add_option("--trials", gen_args.trials, "reach trial count");
  gen->add_option("--rate", gen_args.rate, "manifold train sampling rate");

  std::string split_data, split_out;
  std::vector<double> split_ratios;
  auto* split = app.add_subcommand("split", "Write a temporal split file");
  split->add_option("--data", split_data)->required();
  split->add_option("--out", split_out)->required();
  split->add_option("--ratios", split_ratios,
                    "train val test fractions (default 0.7 0.1 0.2)")
      ->expected(3);

  std::string audit_path, audit_data;
  auto* inspect =
      app.add_subcommand("inspect-mining", "Analyze a mining audit log");
  inspect->add_option("--audit", audit_path)->required();
  inspect->add_option("--data", audit_data)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_args);
    if (*eval) {
      eval_args.seed_set = seed_opt->count() > 0;
      return cmd_linear_eval(eval_args);
    }
    if (*gen) return cmd_generate(gen_args);
    if (*split) return cmd_split(split_data, split_out, split_ratios);
    if (*inspect) return cmd_inspect_mining(audit_path, audit_data);
  } catch (const NanLossError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNanLoss;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
