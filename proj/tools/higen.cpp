// Command-line entry point for the whole pipeline: data generation,
// pretraining, fine-tuning, evaluation, ablations, grids, data-efficiency
// curves, gradient checks and overlap auditing.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "higen/checkpoint.hpp"
#include "higen/config.hpp"
#include "higen/gradcheck.hpp"
#include "higen/harness.hpp"

namespace fs = std::filesystem;
using namespace higen;

namespace {

const char* kUsage = R"(usage: higen <command> [--config PATH] [--out DIR] [--set key=value ...] [--seed N]

commands:
  gen-data         generate taxonomy, splits, pretraining corpus and vocabulary
  pretrain         masked-label denoising pretraining; writes pretrain_ckpt.bin
  train            fine-tune with the composite objective; writes model_ckpt.bin
  eval             score the test split with the trained model
  ablate           run the ablation matrix (full + four single removals)
  grid             sweep lambda1 x lambda2 and rank cells by Macro-F1
  data-efficiency  fine-tune on training subsets and report median scores
  gradcheck        finite-difference verification of all loss gradients
  overlap          Jaccard word overlap between pretraining corpus and test set

The environment variable HIGEN_THREADS bounds the worker pool used by
grid / data-efficiency / ablate cells.
)";

struct CliArgs {
  std::string command;
  std::string config_path;
  std::string out_dir = ".";
  std::vector<std::string> overrides;
  std::string seed;
};

CliArgs parse_args(int argc, char** argv) {
  CliArgs args;
  if (argc < 2) throw UsageError("missing command");
  args.command = argv[1];
  for (int i = 2; i < argc; ++i) {
    std::string a = argv[i];
    auto need_value = [&](const char* flag) -> std::string {
      if (i + 1 >= argc) throw UsageError(std::string("missing value after ") + flag);
      return argv[++i];
    };
    if (a == "--config") {
      args.config_path = need_value("--config");
    } else if (a == "--out") {
      args.out_dir = need_value("--out");
    } else if (a == "--set") {
      args.overrides.push_back(need_value("--set"));
    } else if (a == "--seed") {
      args.seed = need_value("--seed");
    } else {
      throw UsageError("unknown flag: " + a);
    }
  }
  return args;
}

Config load_config(const CliArgs& args) {
  Config cfg = args.config_path.empty() ? Config() : Config::load(args.config_path);
  for (const auto& kv : args.overrides) cfg.set_kv(kv);
  if (!args.seed.empty()) cfg.set("seed", args.seed);
  return cfg;
}

std::string data_dir(const Config& cfg, const CliArgs& args) {
  std::string dir = cfg.get("data.dir");
  return dir.empty() ? args.out_dir : dir;
}

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << '\n';
}

void write_text(const std::string& text, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

int run_command(const CliArgs& args) {
  Config cfg = load_config(args);
  fs::create_directories(args.out_dir);
  const std::string dir = data_dir(cfg, args);

  if (args.command == "gen-data") {
    DataBundle b = generate_bundle(cfg);
    save_bundle(b, args.out_dir);
    cfg.save(args.out_dir + "/config_used.cfg");
    std::cout << "taxonomy: " << b.taxonomy.size() << " nodes, depth "
              << b.taxonomy.depth() << "\n"
              << "train/val/test/pretrain: " << b.train.size() << "/"
              << b.val.size() << "/" << b.test.size() << "/" << b.pretrain.size()
              << "\nvocabulary: " << b.vocab.size() << " tokens\n";
    return 0;
  }

  if (args.command == "pretrain") {
    DataBundle b = load_bundle(dir);
    TrainConfig tc = TrainConfig::from_config(cfg);
    // Cache one deterministic masking of the corpus for inspection.
    {
      Rng cache_rng(tc.mask.seed ^ 0xcafef00dULL);
      std::vector<PretrainExample> cache;
      for (const auto& ex : b.pretrain)
        cache.push_back(build_pretrain_example(ex, b.taxonomy, tc.mask, cache_rng,
                                               b.vocab, cfg.model_config(b.vocab.size()).max_len));
      save_pretrain_cache(b.pretrain, cache, args.out_dir + "/pretrain_cache.jsonl");
    }
    TrainResult result;
    pretrain_snapshot(cfg, tc, b, &result, args.out_dir + "/pretrain_ckpt.bin");
    save_history_csv(result.history, args.out_dir + "/pretrain_history.csv");
    std::cout << "pretrain: best val LM loss " << result.best_val << " at epoch "
              << result.best_epoch << "\n";
    return 0;
  }

  if (args.command == "train") {
    DataBundle b = load_bundle(dir);
    TrainConfig tc = TrainConfig::from_config(cfg);
    Seq2SeqModel model = make_model(cfg, b, tc.seed);
    if (!tc.no_pretrain) {
      std::string ckpt = args.out_dir + "/pretrain_ckpt.bin";
      if (!fs::exists(ckpt))
        throw Error("no pretraining checkpoint at " + ckpt +
                    " (run `higen pretrain` first or set train.no_pretrain = true)");
      model = load_checkpoint(ckpt, TokenInfo::from_vocab(b.vocab));
    }
    TrainResult result = finetune(model, tc, b.train, b.val, b.taxonomy, b.vocab,
                                  args.out_dir + "/model_ckpt.bin");
    save_history_csv(result.history, args.out_dir + "/history.csv");
    std::cout << "train: best val Micro-F1 " << result.best_val << " at epoch "
              << result.best_epoch << "\n";
    return 0;
  }

  if (args.command == "eval") {
    DataBundle b = load_bundle(dir);
    TrainConfig tc = TrainConfig::from_config(cfg);
    Seq2SeqModel model = load_checkpoint(args.out_dir + "/model_ckpt.bin",
                                         TokenInfo::from_vocab(b.vocab));
    std::vector<PredictionRecord> records = predict_records(
        model, b.test, b.taxonomy, b.vocab, tc.constrained_decode, tc.eval_max_steps);
    ScoreReport report = micro_macro_f1(records);
    report.long_tail = long_tail_report(records, gold_frequencies(records));
    write_json(report.to_json(), args.out_dir + "/report.json");
    write_text(report.to_table("synthetic"), args.out_dir + "/report.txt");
    std::cout << report.to_table("synthetic");
    return 0;
  }

  if (args.command == "ablate") {
    DataBundle b = load_bundle(dir);
    std::vector<AblationRow> rows = ablate_run(cfg, b);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
      j.push_back({{"variant", r.variant},
                   {"micro_f1", r.micro_f1},
                   {"macro_f1", r.macro_f1}});
    write_json(j, args.out_dir + "/ablation.json");
    write_text(ablation_table(rows), args.out_dir + "/ablation.txt");
    std::cout << ablation_table(rows);
    return 0;
  }

  if (args.command == "grid") {
    DataBundle b = load_bundle(dir);
    std::vector<GridCell> cells = grid_run(cfg, b);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : cells)
      j.push_back({{"lambda1", c.lambda1},
                   {"lambda2", c.lambda2},
                   {"micro_f1", c.micro_f1},
                   {"macro_f1", c.macro_f1}});
    write_json(j, args.out_dir + "/grid.json");
    write_text(grid_table(cells), args.out_dir + "/grid.txt");
    std::cout << grid_table(cells);
    return 0;
  }

  if (args.command == "data-efficiency") {
    DataBundle b = load_bundle(dir);
    std::vector<DataEffRow> rows = data_efficiency_run(cfg, b);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
      j.push_back({{"proportion", r.proportion},
                   {"micro_f1", r.micro_f1},
                   {"macro_f1", r.macro_f1}});
    write_json(j, args.out_dir + "/data_efficiency.json");
    write_text(data_efficiency_table(rows), args.out_dir + "/data_efficiency.txt");
    std::cout << data_efficiency_table(rows);
    return 0;
  }

  if (args.command == "gradcheck") {
    GradCheckConfig gc;
    gc.points = static_cast<int>(cfg.get_int("gradcheck.points"));
    gc.eps = cfg.get_double("gradcheck.eps");
    gc.tolerance = cfg.get_double("gradcheck.tol");
    gc.seed = cfg.seed();
    GradCheckReport report = run_gradcheck(gc);
    write_json(report.to_json(), args.out_dir + "/gradcheck.json");
    for (const auto& e : report.entries)
      std::cout << (e.pass ? "pass" : "FAIL") << "  " << e.name
                << "  max_rel_err=" << e.max_rel_err << "\n";
    if (!report.all_pass()) throw Error("gradient check failed");
    return 0;
  }

  if (args.command == "overlap") {
    DataBundle b = load_bundle(dir);
    double j = jaccard_overlap(b.pretrain, b.test);
    std::cout << "jaccard(pretrain, test) = " << j << "\n";
    return 0;
  }

  throw UsageError("unknown command: " + args.command);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    CliArgs args = parse_args(argc, argv);
    return run_command(args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << kUsage;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
