#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "adaprune/tape.hpp"
#include "adaprune/tensor.hpp"

namespace adaprune {

/// Static geometry of one convolution, enough for FLOPs accounting.
struct LayerCostSpec {
  int layer_id = 0;
  int h_out = 1, w_out = 1;
  int c_in = 1, c_out = 1;
  int kernel = 1;
  void validate() const;
};

/// H*W*(Cin*k^2 + 1)*Cout; the +1 is the per-output bias add.
long long layer_flops(const LayerCostSpec& spec);

/// Sparsity-aware count: only active input channels multiply and only
/// active output channels are produced. active_in/active_out are 0/1
/// vectors of length Cin/Cout.
long long dynamic_layer_flops(const LayerCostSpec& spec, std::span<const uint8_t> active_in,
                              std::span<const uint8_t> active_out);

struct BudgetConfig {
  double budget = 0.0;       // FLOPs target (p), absolute
  double dense_flops = 0.0;  // full-network cost (p0)
  double lambda0 = 0.01;
  int estimator_window = 20;
  long long total_filters = 0;  // summed output channels of gated layers (N_c)
  int gated_layers = 0;         // L
  void validate() const;
};

/// lambda0 * (p_t - p) / p0. Positive when the estimate exceeds the
/// budget (more sparsity pressure), negative below it; always within
/// [-lambda0, lambda0]. NumericError when p_t falls outside [0, p0].
double cost_weight(const BudgetConfig& cfg, double estimated_cost);

/// Moving average of per-batch mean costs over a bounded window. Before
/// the first batch the estimate is the dense cost (the network starts
/// unpruned).
class CostEstimator {
 public:
  CostEstimator(double dense_flops, int window);
  double push(double batch_mean_cost);
  double current() const;
  const std::deque<double>& window() const { return fifo_; }
  void restore(std::span<const double> values);

 private:
  double dense_;
  size_t window_;
  std::deque<double> fifo_;
};

/// cls_loss + lambda * (1/total_filters) * sum_l ||saliency_l||_1.
/// lambda enters as a constant; the L1 term is differentiable into every
/// saliency tensor.
Tensor multi_task_loss(Tape& tape, const Tensor& cls_loss, std::span<const Tensor> saliencies,
                       double lambda, long long total_filters);

}  // namespace adaprune
