#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adaprune/cost.hpp"
#include "adaprune/spm.hpp"

namespace adaprune {

struct LayerSpec {
  enum class Kind { Conv, Block, Pool, Linear, Flatten };
  Kind kind = Kind::Conv;
  int channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;

  static LayerSpec conv(int channels, int kernel = 3, int stride = 1, int padding = 1) {
    return LayerSpec{Kind::Conv, channels, kernel, stride, padding};
  }
  static LayerSpec block(int channels, int stride = 1) {
    return LayerSpec{Kind::Block, channels, 3, stride, 1};
  }
  static LayerSpec pool() { return LayerSpec{Kind::Pool, 0, 0, 0, 0}; }
  static LayerSpec flatten() { return LayerSpec{Kind::Flatten, 0, 0, 0, 0}; }
  static LayerSpec linear(int out_features) { return LayerSpec{Kind::Linear, out_features, 0, 0, 0}; }
};

struct NetworkConfig {
  std::string name;
  std::array<int, 3> input_shape{3, 32, 32};
  std::vector<LayerSpec> layers;
  int num_classes = 10;
  int reduction_rate = 16;
};

NetworkConfig tinynet_config(int classes = 10);
NetworkConfig mcifarnet_config(int classes = 10);
NetworkConfig vggnet_config(int classes = 10);
NetworkConfig resnet18_config(int classes = 10);
/// Lookup by name: tinynet | mcifarnet | vggnet | resnet18.
NetworkConfig backbone_config(const std::string& name, int classes);

/// Per-sample active-channel mask for a batch (1 = plane may be nonzero).
struct MaskMatrix {
  int n = 0, c = 0;
  std::vector<uint8_t> m;

  static MaskMatrix ones(int n, int c) {
    MaskMatrix mk;
    mk.n = n;
    mk.c = c;
    mk.m.assign(static_cast<size_t>(n) * c, 1);
    return mk;
  }
  static MaskMatrix from_bits(std::vector<uint8_t> bits, int n, int c) {
    MaskMatrix mk;
    mk.n = n;
    mk.c = c;
    mk.m = std::move(bits);
    return mk;
  }
  uint8_t* row(int i) { return m.data() + static_cast<size_t>(i) * c; }
  const uint8_t* row(int i) const { return m.data() + static_cast<size_t>(i) * c; }
  /// Elementwise OR; shapes must match.
  static MaskMatrix unite(const MaskMatrix& a, const MaskMatrix& b);
  double active_fraction() const;
};

struct RunMode {
  bool spm_train = false;       // Gaussian noise + branch mixing in the SPMs
  bool bn_batch_stats = false;  // batch statistics + running-buffer updates
  bool skip_inactive = false;   // skip conv/BN work on pruned planes

  static RunMode train() { return RunMode{true, true, false}; }
  static RunMode eval(bool skip = true) { return RunMode{false, false, skip}; }
};

/// Per-conv record captured during one forward pass: feeds the cost
/// estimator, the decision log and the sparsity term of the loss.
struct ConvTrace {
  int cost_index = -1;
  int gated_index = -1;  // -1 for ungated convolutions
  Tensor saliency;       // gated layers only
  Tensor soft;           // gated layers in SPM training mode
  MaskMatrix in_mask;
  std::vector<uint8_t> decisions;  // [N*Cout] rounded binary code (all ones when ungated)
};

struct ForwardTrace {
  int batch = 0;
  std::vector<ConvTrace> convs;
};

/// Static cost view of a network: one spec per convolution in forward
/// order, which of them are gated, and the dense/head FLOPs totals.
struct CostModel {
  std::vector<LayerCostSpec> specs;
  std::vector<int> gated_of_spec;    // gated layer id or -1
  std::vector<int> gated_channels;   // Cout per gated layer
  long long dense_flops = 0;         // p0
  long long head_flops = 0;          // saliency-head overhead (MACs)
  long long total_filters() const;   // N_c
};

struct SpmOptions {
  BinarizerConfig binarizer;
  int reduction = 16;  // overrides NetworkConfig.reduction_rate when > 0
  double fixed_k_fraction = 0.5;
};

/// Walks the config and resolves every convolution's geometry without
/// allocating weights. ConfigError (naming the layer index) when shapes do
/// not compose.
CostModel extract_cost_model(const NetworkConfig& cfg, Variant variant, int reduction = 0);

class Network {
 public:
  Network(const NetworkConfig& cfg, Variant variant, const SpmOptions& opts, uint64_t seed);
  ~Network();
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  /// images: [N, C, H, W] matching the config input shape.
  Tensor forward(Tape& tape, const Tensor& images, const RunMode& mode,
                 ForwardTrace* trace = nullptr);

  const NetworkConfig& config() const { return cfg_; }
  Variant variant() const { return variant_; }
  const CostModel& cost_model() const { return cost_; }
  int num_gated() const { return static_cast<int>(cost_.gated_channels.size()); }

  std::vector<Parameter*> parameters();
  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::vector<std::pair<std::string, Tensor>> named_buffers();
  void zero_grad();
  /// Freezes (or thaws) every parameter outside the saliency heads.
  void freeze_backbone(bool frozen);
  /// Diagnostic: force all gates to exactly 1.
  void set_force_open(bool on);

  double bn_eps() const { return bn_eps_; }

  struct Unit;

 private:
  NetworkConfig cfg_;
  Variant variant_;
  SpmOptions opts_;
  CostModel cost_;
  double bn_eps_ = 1e-5;
  double bn_momentum_ = 0.1;
  std::vector<std::unique_ptr<Unit>> units_;
};

std::unique_ptr<Network> build_network(const NetworkConfig& cfg, Variant variant,
                                       const SpmOptions& opts, uint64_t seed);

/// Per-sample dynamic FLOPs recomputed from a forward trace.
std::vector<long long> trace_sample_flops(const ForwardTrace& trace, const CostModel& cost);
/// Mean active fraction per gated layer for one trace.
std::vector<double> trace_active_fractions(const ForwardTrace& trace, int num_gated);

}  // namespace adaprune
