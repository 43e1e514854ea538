#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adaprune/ops.hpp"
#include "adaprune/optim.hpp"

namespace adaprune {

enum class Variant { Sanp, FixedK, Static, Unpruned };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

/// Binarizer hyperparameters.
struct BinarizerConfig {
  double a = 1.2;            // saturating-sigmoid gain
  double b = 0.1;            // saturating-sigmoid shift
  double noise_std = 1.0;    // stddev of the training-time Gaussian perturbation
  double s1_mix_prob = 0.5;  // probability the continuous branch drives the forward pass
  bool per_element_mix = false;  // mix branches per element instead of per pass
  uint64_t rng_seed = 0;
  void validate() const;
};

/// Number of channels kept by the top-k variant: round(k_fraction * C).
/// ConfigError when that rounds to zero (the layer would die).
int fixed_k_count(int channels, double k_fraction);

/// 0/1 mask with ones at the top round(k_fraction*C) saliencies, ties
/// broken toward the lower channel index.
std::vector<uint8_t> fixed_k_select(std::span<const double> saliency, double k_fraction);

/// One layer's keep/prune decision, as produced by an Spm for a batch.
struct SpmDecision {
  Tensor saliency;            // [N,Cout] raw scores, differentiable
  Tensor soft;                // [N,Cout] saturating-sigmoid output (training, non-top-k)
  Tensor gate_b;              // [N,Cout] binarizer output entering the forward gate
  std::vector<uint8_t> hard;  // [N*Cout] rounded binary code
  bool soft_branch = false;   // true when the continuous branch drove this pass
};

/// Saliency-and-pruning module for one gated convolution: a two-matrix
/// bottleneck head over the channel descriptor of the layer input (or over
/// a learned input-independent vector), followed by noisy saturating
/// sigmoid rounding with straight-through gradients, or a per-sample top-k
/// selection.
class Spm {
 public:
  Spm(std::string name, int in_channels, int out_channels, int reduction, Variant variant,
      BinarizerConfig cfg, double k_fraction, std::mt19937_64& init_rng, uint64_t noise_seed);

  /// Raw saliency. Sample-adaptive variants pool the input into a channel
  /// descriptor; the static variant ignores x (beyond its batch size) and
  /// returns a [1,Cout] row.
  Tensor predict_saliency(Tape& tape, const Tensor& x);

  struct BinarizeOut {
    Tensor soft;
    Tensor b;
    std::vector<uint8_t> hard;
    bool soft_branch = false;
  };
  /// Noise + saturating sigmoid + rounding. Training draws fresh noise per
  /// element and mixes the continuous/rounded branches; evaluation uses
  /// zero noise and the rounded code only. UsageError in the top-k variant,
  /// which has no binarizer.
  BinarizeOut binarize(Tape& tape, const Tensor& s, bool train);

  /// Full decision for a batch; updates last_saliency/last_gate.
  SpmDecision decide(Tape& tape, const Tensor& x, bool train);

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }
  int hidden() const { return hidden_; }
  Variant variant() const { return variant_; }
  double k_fraction() const { return k_fraction_; }
  /// Multiply-accumulate count of the two head matrices.
  long long head_flops() const {
    return static_cast<long long>(cin_) * hidden_ + static_cast<long long>(hidden_) * cout_;
  }

  std::vector<Parameter*> params();
  const Tensor& last_saliency() const { return last_s_; }
  const Tensor& last_gate() const { return last_b_; }

  /// Diagnostic: force gate factors to exactly 1 (dense-equivalence checks).
  bool force_open = false;

 private:
  std::string name_;
  int cin_, cout_, hidden_;
  Variant variant_;
  BinarizerConfig cfg_;
  double k_fraction_;
  Parameter w_reduce_;   // [hidden, cin]
  Parameter w_expand_;   // [cout, hidden]
  Parameter static_vec_; // [cin], static variant only
  std::mt19937_64 rng_;
  Tensor last_s_, last_b_;
};

/// Inference path of a gated batch-normalised convolution: planes whose
/// decision is exactly zero are skipped outright (their output stays zero);
/// active planes run conv -> eval-stats BN -> multiply by saliency -> relu.
/// Value-identical to computing every channel densely and rescaling by
/// saliency * decision, which is the oracle the tests compare against.
Tensor gated_conv_infer(const Tensor& x, const Tensor& w, const Tensor& gamma,
                        const Tensor& beta, const BnBuffers& buffers, double eps, int stride,
                        int padding, std::span<const double> saliency,
                        std::span<const uint8_t> decisions,
                        std::span<const uint8_t> in_active,  // [N*Cin] or empty
                        bool relu_after);

}  // namespace adaprune
