#pragma once

#include <string>
#include <vector>

#include "adaprune/analysis.hpp"
#include "adaprune/backbones.hpp"
#include "adaprune/checkpoint.hpp"
#include "adaprune/data.hpp"
#include "adaprune/optim.hpp"

namespace adaprune {

struct SpmHyper {
  double a = 1.2;
  double b = 0.1;
  double noise_std = 1.0;
  double s1_mix_prob = 0.5;
  bool per_element_mix = false;
  int reduction = 0;  // 0 = backbone default
};

struct TrainConfig {
  std::string backbone = "tinynet";
  std::string dataset = "synthetic";  // synthetic | cifar10 | cifar100
  std::string data_dir = "data";
  Variant variant = Variant::Sanp;
  double budget_fraction = 0.5;
  double lambda0 = 0.01;
  int estimator_window = 20;
  double lr = 0.1;
  double lr_pretrain = 0.0;  // 0 = lr
  double lr_warmup = 0.0;
  double lr_finetune = 0.0;
  double lr_decay_factor = 10.0;
  int lr_decay_epochs = 100;
  double momentum = 0.9;
  int batch_size = 256;
  int pretrain_epochs = 1;
  int warmup_epochs = 1;
  int finetune_epochs = 1;
  uint64_t seed = 1;
  std::string out_dir = "runs/default";
  SpmHyper spm;
  double fixed_k_fraction = 0.5;
  bool cost_on_soft = false;  // L1-penalise the sigmoid output instead of raw saliency
  int synth_train = 2000;
  int synth_test = 500;
  int synth_classes = 10;
  uint64_t synth_seed = 12345;

  int num_classes() const;
};

/// Strict JSON parsing: unknown keys are configuration errors.
TrainConfig parse_config_json(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string config_json(const TrainConfig& cfg);
void save_train_config(const TrainConfig& cfg, const std::string& path);
void validate_config(const TrainConfig& cfg);

/// TinyNet-on-synthetic schedule sized for minutes, used by the acceptance
/// suite and shipped as configs/tinynet_synthetic.json.
TrainConfig desk_preset();

SpmOptions spm_options(const TrainConfig& cfg);
std::unique_ptr<Network> make_network(const TrainConfig& cfg, Variant variant);
std::string phase_checkpoint(const TrainConfig& cfg, const std::string& phase);

struct PhaseResult {
  std::string checkpoint;
  std::string metrics;
  long steps = 0;
  double final_loss = 0.0;
};

/// Dense backbone training with the classification loss (always unpruned,
/// whatever the configured variant).
PhaseResult run_pretrain(const TrainConfig& cfg);
/// Saliency heads train on the classification loss; backbone weights and
/// BN statistics stay bit-identical.
PhaseResult run_warmup(const TrainConfig& cfg);
/// Joint training under the FLOPs budget feedback loss.
PhaseResult run_finetune(const TrainConfig& cfg);
/// pretrain -> warmup -> finetune (pretrain only for the unpruned variant).
void run_all_phases(const TrainConfig& cfg);

struct EvalResult {
  double top1 = 0.0;
  double mean_dynamic_flops = 0.0;
  std::vector<double> active_fraction;  // per gated layer
  long long dense_flops = 0;
  int samples = 0;
  double pruned_rate() const {
    return dense_flops > 0 ? 1.0 - mean_dynamic_flops / static_cast<double>(dense_flops) : 0.0;
  }
};

/// Deterministic skip-path evaluation; never mutates model state. The
/// decision log, when requested, covers every gated layer for every sample
/// of the split in order.
EvalResult evaluate_checkpoint(const TrainConfig& cfg, const std::string& checkpoint_path,
                               bool test_split, DecisionLog* log_out = nullptr);

/// Fixed-k fraction whose predicted dynamic cost comes closest to the
/// budget (chain approximation of input-side sparsity).
double match_fixed_k(const CostModel& cm, double budget_fraction);

/// Restores "opt.v.*" velocity entries from a checkpoint.
void load_optimizer_state(const Checkpoint& ckpt, SgdMomentum& opt);
/// Restores the cost-estimator window from an "est.window" entry, if present.
void load_estimator_state(const Checkpoint& ckpt, CostEstimator& est);

/// One row of the ablation report: variant, top-1 error %, mean dynamic
/// FLOPs and pruned rate %.
struct VariantReportRow {
  std::string variant;
  double error_pct = 0.0;
  double flops = 0.0;
  double pruned_pct = 0.0;
};
void write_variant_report(const std::string& path, std::span<const VariantReportRow> rows);

}  // namespace adaprune
