// adaprune: budgeted dynamic channel pruning trainer.
//
// Subcommands: train, eval, analyze, flops, config-check. Failures print
// one machine-parsable line:  error: <category>: <message>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "adaprune/analysis.hpp"
#include "adaprune/checkpoint.hpp"
#include "adaprune/trainer.hpp"

namespace fs = std::filesystem;
using namespace adaprune;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> variant;
  std::optional<double> budget;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
  auto* opt = cmd->add_option("--config", flags.config_path, "training config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", flags.seed, "override config seed");
  cmd->add_option("--out-dir", flags.out_dir, "override config output directory");
  cmd->add_option("--variant", flags.variant, "override variant (sanp|fixed_k|static|unpruned)");
  cmd->add_option("--budget", flags.budget, "override budget fraction of dense FLOPs");
}

TrainConfig resolve_config(const CommonFlags& flags) {
  TrainConfig cfg = load_train_config(flags.config_path);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.out_dir) cfg.out_dir = *flags.out_dir;
  if (flags.variant) cfg.variant = variant_from_name(*flags.variant);
  if (flags.budget) cfg.budget_fraction = *flags.budget;
  validate_config(cfg);
  return cfg;
}

void print_eval(const EvalResult& r) {
  std::printf("samples          %d\n", r.samples);
  std::printf("top1_accuracy    %.4f\n", r.top1);
  std::printf("error_pct        %.2f\n", 100.0 * (1.0 - r.top1));
  std::printf("mean_flops       %.1f\n", r.mean_dynamic_flops);
  std::printf("mean_flops_M     %.3f\n", r.mean_dynamic_flops / 1e6);
  std::printf("dense_flops      %lld\n", r.dense_flops);
  std::printf("pruned_rate_pct  %.2f\n", 100.0 * r.pruned_rate());
  std::printf("active_fraction  ");
  for (size_t i = 0; i < r.active_fraction.size(); ++i)
    std::printf("%s%.4f", i ? ";" : "", r.active_fraction[i]);
  std::printf("\n");
}

int run(int argc, char** argv) {
  CLI::App app{"budgeted dynamic channel pruning trainer"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  std::string phase = "all";
  auto* train_cmd = app.add_subcommand("train", "run the training phases");
  add_common(train_cmd, train_flags);
  train_cmd->add_option("--phase", phase, "all|pretrain|warmup|finetune")
      ->check(CLI::IsMember({"all", "pretrain", "warmup", "finetune"}));

  CommonFlags eval_flags;
  std::string eval_checkpoint;
  std::string eval_split = "test";
  std::string eval_log_out;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_flags);
  eval_cmd->add_option("--checkpoint", eval_checkpoint,
                       "checkpoint path (default <out_dir>/finetune.ckpt)");
  eval_cmd->add_option("--split", eval_split, "train|test")
      ->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_option("--log-out", eval_log_out,
                       "decision log path (default <out_dir>/decisions_<split>.bin)");

  std::string analyze_log, analyze_out;
  auto* analyze_cmd = app.add_subcommand("analyze", "pruning-distribution statistics of a log");
  analyze_cmd->add_option("--log", analyze_log, "decision log file")->required();
  analyze_cmd->add_option("--out-dir", analyze_out, "directory for the CSV outputs")->required();
  bool analyze_export = false;
  analyze_cmd->add_flag("--export-decisions", analyze_export,
                        "also export the raw decisions as CSV");

  CommonFlags flops_flags;
  auto* flops_cmd = app.add_subcommand("flops", "static per-layer FLOPs table");
  add_common(flops_cmd, flops_flags);

  CommonFlags check_flags;
  auto* check_cmd = app.add_subcommand("config-check", "validate a config file");
  add_common(check_cmd, check_flags);

  app.parse(argc, argv);

  if (*train_cmd) {
    TrainConfig cfg = resolve_config(train_flags);
    if (phase == "all") {
      run_all_phases(cfg);
    } else if (phase == "pretrain") {
      run_pretrain(cfg);
    } else if (phase == "warmup") {
      run_warmup(cfg);
    } else {
      run_finetune(cfg);
    }
    std::printf("training complete; artifacts in %s\n", cfg.out_dir.c_str());
    return 0;
  }

  if (*eval_cmd) {
    TrainConfig cfg = resolve_config(eval_flags);
    const std::string ckpt =
        eval_checkpoint.empty() ? phase_checkpoint(cfg, "finetune") : eval_checkpoint;
    const bool test = eval_split == "test";
    DecisionLog log;
    EvalResult r = evaluate_checkpoint(cfg, ckpt, test, &log);
    print_eval(r);
    const std::string log_path =
        eval_log_out.empty()
            ? (fs::path(cfg.out_dir) / ("decisions_" + eval_split + ".bin")).string()
            : eval_log_out;
    fs::create_directories(fs::path(log_path).parent_path().empty()
                               ? "."
                               : fs::path(log_path).parent_path().string());
    log.save(log_path);
    std::printf("decision_log     %s\n", log_path.c_str());
    return 0;
  }

  if (*analyze_cmd) {
    DecisionLog log = DecisionLog::load(analyze_log);
    AnalysisResult result = analyze_decisions(log);
    write_analysis_csv(result, analyze_out);
    if (analyze_export)
      log.export_csv((fs::path(analyze_out) / "decisions.csv").string());
    std::printf("samples %d, checkpoint %016llx\n", result.num_samples,
                static_cast<unsigned long long>(log.checkpoint_hash()));
    std::printf("layer  channels  never_pruned  sample_dependent  always_pruned\n");
    for (size_t l = 0; l < result.layers.size(); ++l) {
      const LayerAnalysis& la = result.layers[l];
      std::printf("%5zu  %8zu  %12d  %16d  %13d\n", l, la.categories.size(), la.never_pruned,
                  la.sample_dependent, la.always_pruned);
    }
    std::printf("csv written to %s\n", analyze_out.c_str());
    return 0;
  }

  if (*flops_cmd) {
    TrainConfig cfg = resolve_config(flops_flags);
    NetworkConfig nc = backbone_config(cfg.backbone, cfg.num_classes());
    CostModel cm = extract_cost_model(nc, cfg.variant, cfg.spm.reduction);
    std::printf("layer_id,gated,h_out,w_out,c_in,c_out,k,flops\n");
    for (size_t i = 0; i < cm.specs.size(); ++i) {
      const LayerCostSpec& s = cm.specs[i];
      std::printf("%d,%d,%d,%d,%d,%d,%d,%lld\n", s.layer_id, cm.gated_of_spec[i] >= 0 ? 1 : 0,
                  s.h_out, s.w_out, s.c_in, s.c_out, s.kernel, layer_flops(s));
    }
    std::printf("total_dense_flops,%lld\n", cm.dense_flops);
    std::printf("total_dense_flops_M,%.3f\n", static_cast<double>(cm.dense_flops) / 1e6);
    std::printf("saliency_head_flops,%lld\n", cm.head_flops);
    std::printf("saliency_head_overhead_pct,%.5f\n",
                100.0 * static_cast<double>(cm.head_flops) /
                    static_cast<double>(cm.dense_flops));
    return 0;
  }

  if (*check_cmd) {
    resolve_config(check_flags);
    std::printf("config ok\n");
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 5;
  } catch (const ShapeError& e) {
    std::cerr << "error: shape: " << e.what() << "\n";
    return 6;
  } catch (const NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 7;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 70;
  }
}
