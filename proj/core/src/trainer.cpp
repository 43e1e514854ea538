#include "adaprune/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "adaprune/rng.hpp"

namespace adaprune {

namespace fs = std::filesystem;

int TrainConfig::num_classes() const {
  if (dataset == "synthetic") return synth_classes;
  if (dataset == "cifar10") return 10;
  if (dataset == "cifar100") return 100;
  throw ConfigError("unknown dataset '" + dataset + "'");
}

void validate_config(const TrainConfig& cfg) {
  backbone_config(cfg.backbone, 10);  // name check
  if (cfg.dataset != "synthetic" && cfg.dataset != "cifar10" && cfg.dataset != "cifar100")
    throw ConfigError("unknown dataset '" + cfg.dataset + "'");
  if (cfg.budget_fraction <= 0.0 || cfg.budget_fraction > 1.0)
    throw ConfigError("budget out of range: budget_fraction must be in (0,1], got " +
                      std::to_string(cfg.budget_fraction));
  if (cfg.lambda0 <= 0.0) throw ConfigError("lambda0 must be > 0");
  if (cfg.estimator_window < 1) throw ConfigError("estimator_window must be >= 1");
  if (cfg.lr <= 0.0) throw ConfigError("lr must be > 0");
  if (cfg.lr_decay_factor < 1.0) throw ConfigError("lr_decay_factor must be >= 1");
  if (cfg.lr_decay_epochs < 1) throw ConfigError("lr_decay_epochs must be >= 1");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
  if (cfg.batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (cfg.pretrain_epochs < 0 || cfg.warmup_epochs < 0 || cfg.finetune_epochs < 0)
    throw ConfigError("epoch counts must be >= 0");
  if (cfg.fixed_k_fraction <= 0.0 || cfg.fixed_k_fraction > 1.0)
    throw ConfigError("fixed_k_fraction must be in (0,1]");
  if (cfg.spm.reduction < 0) throw ConfigError("spm reduction must be >= 0");
  BinarizerConfig bin;
  bin.a = cfg.spm.a;
  bin.b = cfg.spm.b;
  bin.noise_std = cfg.spm.noise_std;
  bin.s1_mix_prob = cfg.spm.s1_mix_prob;
  bin.validate();
  if (cfg.dataset == "synthetic") {
    if (cfg.synth_classes < 2 || cfg.synth_train < cfg.synth_classes || cfg.synth_test < 1)
      throw ConfigError("invalid synthetic dataset sizes");
  }
}

namespace {

using nlohmann::json;

const json& expect_object(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  return j;
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace

TrainConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  expect_object(j);
  static const std::vector<std::string> known = {
      "backbone",        "dataset",         "data_dir",       "variant",
      "budget_fraction", "lambda0",         "estimator_window", "lr",
      "lr_pretrain",     "lr_warmup",       "lr_finetune",    "lr_decay_factor",
      "lr_decay_epochs", "momentum",        "batch_size",     "pretrain_epochs",
      "warmup_epochs",   "finetune_epochs", "seed",           "out_dir",
      "spm",             "fixed_k_fraction", "cost_on_soft",  "synth_train",
      "synth_test",      "synth_classes",   "synth_seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("unknown config key: " + it.key());
  }
  TrainConfig cfg;
  read_key(j, "backbone", cfg.backbone);
  read_key(j, "dataset", cfg.dataset);
  read_key(j, "data_dir", cfg.data_dir);
  if (j.contains("variant")) cfg.variant = variant_from_name(j.at("variant").get<std::string>());
  read_key(j, "budget_fraction", cfg.budget_fraction);
  read_key(j, "lambda0", cfg.lambda0);
  read_key(j, "estimator_window", cfg.estimator_window);
  read_key(j, "lr", cfg.lr);
  read_key(j, "lr_pretrain", cfg.lr_pretrain);
  read_key(j, "lr_warmup", cfg.lr_warmup);
  read_key(j, "lr_finetune", cfg.lr_finetune);
  read_key(j, "lr_decay_factor", cfg.lr_decay_factor);
  read_key(j, "lr_decay_epochs", cfg.lr_decay_epochs);
  read_key(j, "momentum", cfg.momentum);
  read_key(j, "batch_size", cfg.batch_size);
  read_key(j, "pretrain_epochs", cfg.pretrain_epochs);
  read_key(j, "warmup_epochs", cfg.warmup_epochs);
  read_key(j, "finetune_epochs", cfg.finetune_epochs);
  read_key(j, "seed", cfg.seed);
  read_key(j, "out_dir", cfg.out_dir);
  read_key(j, "fixed_k_fraction", cfg.fixed_k_fraction);
  read_key(j, "cost_on_soft", cfg.cost_on_soft);
  read_key(j, "synth_train", cfg.synth_train);
  read_key(j, "synth_test", cfg.synth_test);
  read_key(j, "synth_classes", cfg.synth_classes);
  read_key(j, "synth_seed", cfg.synth_seed);
  if (j.contains("spm")) {
    const json& s = j.at("spm");
    if (!s.is_object()) throw ConfigError("config key 'spm' must be an object");
    static const std::vector<std::string> spm_known = {"a",   "b",           "noise_std",
                                                       "s1_mix_prob", "per_element_mix",
                                                       "reduction"};
    for (auto it = s.begin(); it != s.end(); ++it)
      if (std::find(spm_known.begin(), spm_known.end(), it.key()) == spm_known.end())
        throw ConfigError("unknown config key: spm." + it.key());
    read_key(s, "a", cfg.spm.a);
    read_key(s, "b", cfg.spm.b);
    read_key(s, "noise_std", cfg.spm.noise_std);
    read_key(s, "s1_mix_prob", cfg.spm.s1_mix_prob);
    read_key(s, "per_element_mix", cfg.spm.per_element_mix);
    read_key(s, "reduction", cfg.spm.reduction);
  }
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config_json(text);
}

std::string config_json(const TrainConfig& cfg) {
  json j;
  j["backbone"] = cfg.backbone;
  j["dataset"] = cfg.dataset;
  j["data_dir"] = cfg.data_dir;
  j["variant"] = variant_name(cfg.variant);
  j["budget_fraction"] = cfg.budget_fraction;
  j["lambda0"] = cfg.lambda0;
  j["estimator_window"] = cfg.estimator_window;
  j["lr"] = cfg.lr;
  j["lr_pretrain"] = cfg.lr_pretrain;
  j["lr_warmup"] = cfg.lr_warmup;
  j["lr_finetune"] = cfg.lr_finetune;
  j["lr_decay_factor"] = cfg.lr_decay_factor;
  j["lr_decay_epochs"] = cfg.lr_decay_epochs;
  j["momentum"] = cfg.momentum;
  j["batch_size"] = cfg.batch_size;
  j["pretrain_epochs"] = cfg.pretrain_epochs;
  j["warmup_epochs"] = cfg.warmup_epochs;
  j["finetune_epochs"] = cfg.finetune_epochs;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["spm"] = {{"a", cfg.spm.a},
              {"b", cfg.spm.b},
              {"noise_std", cfg.spm.noise_std},
              {"s1_mix_prob", cfg.spm.s1_mix_prob},
              {"per_element_mix", cfg.spm.per_element_mix},
              {"reduction", cfg.spm.reduction}};
  j["fixed_k_fraction"] = cfg.fixed_k_fraction;
  j["cost_on_soft"] = cfg.cost_on_soft;
  j["synth_train"] = cfg.synth_train;
  j["synth_test"] = cfg.synth_test;
  j["synth_classes"] = cfg.synth_classes;
  j["synth_seed"] = cfg.synth_seed;
  return j.dump(2);
}

void save_train_config(const TrainConfig& cfg, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write config: " + path);
  f << config_json(cfg) << '\n';
}

TrainConfig desk_preset() {
  TrainConfig cfg;
  cfg.backbone = "tinynet";
  cfg.dataset = "synthetic";
  cfg.variant = Variant::Sanp;
  cfg.budget_fraction = 0.5;
  cfg.lambda0 = 10.0;  // desk-scale runs are short; the default 0.01 needs hours to bite
  cfg.estimator_window = 10;
  cfg.lr = 0.05;
  cfg.lr_warmup = 0.02;
  cfg.lr_finetune = 0.02;
  cfg.batch_size = 32;
  cfg.pretrain_epochs = 3;
  cfg.warmup_epochs = 8;
  cfg.finetune_epochs = 8;
  cfg.seed = 7;
  cfg.out_dir = "runs/desk";
  cfg.synth_train = 2000;
  cfg.synth_test = 500;
  cfg.synth_classes = 10;
  return cfg;
}

SpmOptions spm_options(const TrainConfig& cfg) {
  SpmOptions o;
  o.binarizer.a = cfg.spm.a;
  o.binarizer.b = cfg.spm.b;
  o.binarizer.noise_std = cfg.spm.noise_std;
  o.binarizer.s1_mix_prob = cfg.spm.s1_mix_prob;
  o.binarizer.per_element_mix = cfg.spm.per_element_mix;
  o.binarizer.rng_seed = cfg.seed;
  o.reduction = cfg.spm.reduction;
  o.fixed_k_fraction = cfg.fixed_k_fraction;
  return o;
}

std::unique_ptr<Network> make_network(const TrainConfig& cfg, Variant variant) {
  NetworkConfig nc = backbone_config(cfg.backbone, cfg.num_classes());
  return build_network(nc, variant, spm_options(cfg), derive_seed(cfg.seed, 201));
}

std::string phase_checkpoint(const TrainConfig& cfg, const std::string& phase) {
  return (fs::path(cfg.out_dir) / (phase + ".ckpt")).string();
}

namespace {

struct DatasetBundle {
  DatasetSplit train;
  DatasetSplit test;
  Normalization norm;
};

DatasetBundle load_dataset(const TrainConfig& cfg) {
  if (cfg.dataset == "synthetic") {
    auto [tr, te] = make_synthetic(cfg.synth_train, cfg.synth_test, cfg.synth_classes,
                                   cfg.synth_seed);
    return {std::move(tr), std::move(te), synthetic_normalization()};
  }
  const CifarKind kind = cfg.dataset == "cifar10" ? CifarKind::Cifar10 : CifarKind::Cifar100;
  auto [tr, te] = load_cifar(cfg.data_dir, kind);
  return {std::move(tr), std::move(te), cifar_normalization()};
}

std::string format_g17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : f_(path, std::ios::trunc) {
    if (!f_) throw IoError("cannot open metrics file: " + path);
    f_ << "step,L_cls,cost_term,lambda,p_t,p_t_over_p0,active_fraction_per_layer\n";
  }
  void row(long step, double lcls, double cost_term, double lambda, double p_t, double ratio,
           const std::vector<double>& fractions) {
    f_ << step << ',' << format_g17(lcls) << ',' << format_g17(cost_term) << ','
       << format_g17(lambda) << ',' << format_g17(p_t) << ',' << format_g17(ratio) << ',';
    for (size_t i = 0; i < fractions.size(); ++i) {
      if (i) f_ << ';';
      f_ << format_g17(fractions[i]);
    }
    f_ << '\n';
  }

 private:
  std::ofstream f_;
};

enum class Phase { Pretrain, Warmup, Finetune };

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Pretrain: return "pretrain";
    case Phase::Warmup: return "warmup";
    case Phase::Finetune: return "finetune";
  }
  return "?";
}

double phase_lr(const TrainConfig& cfg, Phase p) {
  switch (p) {
    case Phase::Pretrain: return cfg.lr_pretrain > 0 ? cfg.lr_pretrain : cfg.lr;
    case Phase::Warmup: return cfg.lr_warmup > 0 ? cfg.lr_warmup : cfg.lr;
    case Phase::Finetune: return cfg.lr_finetune > 0 ? cfg.lr_finetune : cfg.lr;
  }
  return cfg.lr;
}

int phase_epochs(const TrainConfig& cfg, Phase p) {
  switch (p) {
    case Phase::Pretrain: return cfg.pretrain_epochs;
    case Phase::Warmup: return cfg.warmup_epochs;
    case Phase::Finetune: return cfg.finetune_epochs;
  }
  return 0;
}

void save_training_checkpoint(const std::string& path, Network& net, const TrainConfig& cfg,
                              Phase phase, const SgdMomentum* opt, const CostEstimator* est) {
  std::vector<NamedTensor> entries = network_state(net);
  if (opt) {
    std::vector<std::string> names;
    for (const auto& [name, _] : opt->velocity()) names.push_back(name);
    std::sort(names.begin(), names.end());
    for (const std::string& name : names) {
      const auto& vel = opt->velocity().at(name);
      entries.push_back(
          {"opt.v." + name, Tensor(Shape{static_cast<int>(vel.size())},
                                   std::vector<double>(vel.begin(), vel.end()))});
    }
  }
  if (est && !est->window().empty()) {
    std::vector<double> w(est->window().begin(), est->window().end());
    const int n = static_cast<int>(w.size());
    entries.push_back({"est.window", Tensor(Shape{n}, std::move(w))});
  }
  CheckpointMeta meta;
  meta.network = cfg.backbone;
  meta.variant = variant_name(phase == Phase::Pretrain ? Variant::Unpruned : cfg.variant);
  meta.phase = phase_name(phase);
  write_checkpoint(path, meta, entries);
}

PhaseResult train_phase(const TrainConfig& cfg, Phase phase) {
  validate_config(cfg);
  if (cfg.variant == Variant::Unpruned && phase != Phase::Pretrain)
    throw ConfigError("variant 'unpruned' trains the pretrain phase only");
  fs::create_directories(cfg.out_dir);

  DatasetBundle data = load_dataset(cfg);
  const Variant variant = phase == Phase::Pretrain ? Variant::Unpruned : cfg.variant;
  auto net = make_network(cfg, variant);

  if (phase == Phase::Warmup) {
    const std::string prev = phase_checkpoint(cfg, "pretrain");
    if (!fs::exists(prev))
      throw ConfigError("missing prerequisite checkpoint '" + prev +
                        "': run phase pretrain first");
    load_network_state(*net, read_checkpoint(prev), /*allow_missing=*/true);
    net->freeze_backbone(true);
  } else if (phase == Phase::Finetune) {
    const std::string prev = phase_checkpoint(cfg, "warmup");
    if (!fs::exists(prev))
      throw ConfigError("missing prerequisite checkpoint '" + prev + "': run phase warmup first");
    load_network_state(*net, read_checkpoint(prev), /*allow_missing=*/false);
  }

  const CostModel& cm = net->cost_model();
  const double p0 = static_cast<double>(cm.dense_flops);
  BudgetConfig budget;
  budget.budget = cfg.budget_fraction * p0;
  budget.dense_flops = p0;
  budget.lambda0 = cfg.lambda0;
  budget.estimator_window = cfg.estimator_window;
  budget.total_filters = std::max<long long>(1, cm.total_filters());
  budget.gated_layers = net->num_gated();
  CostEstimator estimator(p0, cfg.estimator_window);

  const double lr0 = phase_lr(cfg, phase);
  SgdMomentum opt(lr0, cfg.momentum);
  auto params = net->parameters();

  const int phase_id = static_cast<int>(phase);
  std::mt19937_64 shuffle_rng = make_rng(cfg.seed, 301 + phase_id);
  std::mt19937_64 aug_rng = make_rng(cfg.seed, 351 + phase_id);
  // Warmup freezes the backbone parameters (the optimizer skips them) but
  // batch statistics keep flowing: BN renormalises the gated activations,
  // without which the stacked gate factors starve deeper layers of signal.
  const RunMode mode = RunMode::train();

  const std::string metrics_path =
      (fs::path(cfg.out_dir) / ("metrics_" + std::string(phase_name(phase)) + ".csv")).string();
  MetricsWriter metrics(metrics_path);

  const int n_train = static_cast<int>(data.train.records.size());
  long step = 0;
  double last_loss = 0.0;
  for (int epoch = 0; epoch < phase_epochs(cfg, phase); ++epoch) {
    opt.set_lr(lr0 / std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_epochs));
    for (const auto& batch : epoch_batches(n_train, cfg.batch_size, shuffle_rng)) {
      try {
        Tape tape;
        Tensor images = batch_images(data.train, batch, /*train_augment=*/true, data.norm,
                                     aug_rng);
        const std::vector<int> labels = batch_labels(data.train, batch);
        ForwardTrace trace;
        Tensor logits = net->forward(tape, images, mode, &trace);
        Tensor cls_loss = softmax_cross_entropy(tape, logits, labels);
        Tensor loss = cls_loss;
        double lambda = 0.0, p_t = p0, cost_term = 0.0;
        std::vector<double> fractions = trace_active_fractions(trace, net->num_gated());
        if (phase == Phase::Finetune) {
          const auto sample_flops = trace_sample_flops(trace, cm);
          double mean = 0.0;
          for (long long f : sample_flops) mean += static_cast<double>(f);
          mean /= static_cast<double>(sample_flops.size());
          p_t = estimator.push(mean);
          lambda = cost_weight(budget, p_t);
          std::vector<Tensor> saliencies;
          for (const ConvTrace& ct : trace.convs) {
            if (ct.gated_index < 0) continue;
            saliencies.push_back(cfg.cost_on_soft && ct.soft.defined() ? ct.soft : ct.saliency);
          }
          // Eq-style per-sample cost: the batch dimension is averaged out of
          // the L1 mass by folding 1/N into the weight.
          loss = multi_task_loss(tape, cls_loss, saliencies,
                                 lambda / static_cast<double>(batch.size()),
                                 budget.total_filters);
          cost_term = loss.value() - cls_loss.value();
        }
        net->zero_grad();
        tape.backward(loss);
        opt.step(params);
        metrics.row(step, cls_loss.value(), cost_term, lambda, p_t, p_t / p0, fractions);
        last_loss = loss.value();
        ++step;
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " [phase " + phase_name(phase) + ", step " +
                           std::to_string(step) + ", lr " + format_g17(opt.lr()) + "]");
      }
    }
  }

  const std::string ckpt = phase_checkpoint(cfg, phase_name(phase));
  save_training_checkpoint(ckpt, *net, cfg, phase, &opt,
                           phase == Phase::Finetune ? &estimator : nullptr);
  return PhaseResult{ckpt, metrics_path, step, last_loss};
}

}  // namespace

PhaseResult run_pretrain(const TrainConfig& cfg) { return train_phase(cfg, Phase::Pretrain); }
PhaseResult run_warmup(const TrainConfig& cfg) { return train_phase(cfg, Phase::Warmup); }
PhaseResult run_finetune(const TrainConfig& cfg) { return train_phase(cfg, Phase::Finetune); }

void run_all_phases(const TrainConfig& cfg) {
  run_pretrain(cfg);
  if (cfg.variant == Variant::Unpruned) return;
  run_warmup(cfg);
  run_finetune(cfg);
}

EvalResult evaluate_checkpoint(const TrainConfig& cfg, const std::string& checkpoint_path,
                               bool test_split, DecisionLog* log_out) {
  validate_config(cfg);
  DatasetBundle data = load_dataset(cfg);
  const DatasetSplit& split = test_split ? data.test : data.train;
  auto net = make_network(cfg, cfg.variant);
  load_network_state(*net, read_checkpoint(checkpoint_path), /*allow_missing=*/false);
  const CostModel& cm = net->cost_model();

  DecisionLog log(cm.gated_channels, test_split ? "test" : "train", file_hash(checkpoint_path));
  Tape tape;
  tape.set_recording(false);
  std::mt19937_64 unused_rng(0);  // evaluation never augments

  const int n = static_cast<int>(split.records.size());
  if (n == 0) throw DataError("evaluation split is empty");
  long correct = 0;
  double flops_total = 0.0;
  std::vector<double> fraction_sum(static_cast<size_t>(net->num_gated()), 0.0);
  for (int start = 0; start < n; start += cfg.batch_size) {
    const int end = std::min(n, start + cfg.batch_size);
    std::vector<int> idx(static_cast<size_t>(end - start));
    for (int i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
    Tensor images = batch_images(split, idx, /*train_augment=*/false, data.norm, unused_rng);
    const std::vector<int> labels = batch_labels(split, idx);
    ForwardTrace trace;
    Tensor logits = net->forward(tape, images, RunMode::eval(/*skip=*/true), &trace);
    const int classes = logits.dim(1);
    auto lv = logits.values();
    for (int i = 0; i < end - start; ++i) {
      int best = 0;
      for (int k = 1; k < classes; ++k)
        if (lv[static_cast<long>(i) * classes + k] > lv[static_cast<long>(i) * classes + best])
          best = k;
      if (best == labels[static_cast<size_t>(i)]) ++correct;
    }
    for (long long f : trace_sample_flops(trace, cm)) flops_total += static_cast<double>(f);
    const auto frac = trace_active_fractions(trace, net->num_gated());
    for (size_t l = 0; l < frac.size(); ++l)
      fraction_sum[l] += frac[l] * static_cast<double>(end - start);
    log.append_batch(trace);
  }

  EvalResult r;
  r.top1 = static_cast<double>(correct) / n;
  r.mean_dynamic_flops = flops_total / n;
  r.active_fraction.resize(fraction_sum.size());
  for (size_t l = 0; l < fraction_sum.size(); ++l) r.active_fraction[l] = fraction_sum[l] / n;
  r.dense_flops = cm.dense_flops;
  r.samples = n;
  if (log_out) *log_out = std::move(log);
  return r;
}

double match_fixed_k(const CostModel& cm, double budget_fraction) {
  const double target = budget_fraction * static_cast<double>(cm.dense_flops);
  double best_k = 1.0;
  double best_err = std::numeric_limits<double>::max();
  for (int i = 1; i <= 100; ++i) {
    const double k = i / 100.0;
    double flops = 0.0;
    bool feasible = true;
    int prev_c = -1;
    int prev_active = -1;
    for (size_t s = 0; s < cm.specs.size(); ++s) {
      const LayerCostSpec& spec = cm.specs[s];
      int out_active = spec.c_out;
      if (cm.gated_of_spec[s] >= 0) {
        try {
          out_active = fixed_k_count(spec.c_out, k);
        } catch (const ConfigError&) {
          feasible = false;
          break;
        }
      }
      const int in_active = (spec.c_in == prev_c && prev_active >= 0) ? prev_active : spec.c_in;
      flops += static_cast<double>(spec.h_out) * spec.w_out *
               (static_cast<double>(in_active) * spec.kernel * spec.kernel + 1.0) * out_active;
      prev_c = spec.c_out;
      prev_active = out_active;
    }
    if (!feasible) continue;
    const double err = std::abs(flops - target);
    if (err < best_err) {
      best_err = err;
      best_k = k;
    }
  }
  return best_k;
}

void load_optimizer_state(const Checkpoint& ckpt, SgdMomentum& opt) {
  for (const NamedTensor& e : ckpt.entries) {
    if (e.name.rfind("opt.v.", 0) != 0) continue;
    const std::string pname = e.name.substr(6);
    auto v = e.tensor.values();
    opt.velocity()[pname].assign(v.begin(), v.end());
  }
}

void load_estimator_state(const Checkpoint& ckpt, CostEstimator& est) {
  const Tensor* w = ckpt.find("est.window");
  if (w) est.restore(w->values());
}

void write_variant_report(const std::string& path, std::span<const VariantReportRow> rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write variant report: " + path);
  f << "variant,error_pct,flops,pruned_pct\n";
  for (const VariantReportRow& r : rows)
    f << r.variant << ',' << format_g17(r.error_pct) << ',' << format_g17(r.flops) << ','
      << format_g17(r.pruned_pct) << '\n';
}

}  // namespace adaprune
