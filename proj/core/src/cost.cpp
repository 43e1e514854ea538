#include "adaprune/cost.hpp"

#include <string>

#include "adaprune/ops.hpp"

namespace adaprune {

void LayerCostSpec::validate() const {
  if (h_out < 1 || w_out < 1 || c_in < 1 || c_out < 1 || kernel < 1)
    throw ConfigError("layer cost spec " + std::to_string(layer_id) +
                      ": all dimensions must be >= 1");
}

long long layer_flops(const LayerCostSpec& spec) {
  spec.validate();
  return static_cast<long long>(spec.h_out) * spec.w_out *
         (static_cast<long long>(spec.c_in) * spec.kernel * spec.kernel + 1) * spec.c_out;
}

long long dynamic_layer_flops(const LayerCostSpec& spec, std::span<const uint8_t> active_in,
                              std::span<const uint8_t> active_out) {
  spec.validate();
  if (active_in.size() != static_cast<size_t>(spec.c_in))
    throw ShapeError("dynamic_layer_flops: input mask length " + std::to_string(active_in.size()) +
                     " vs Cin " + std::to_string(spec.c_in));
  if (active_out.size() != static_cast<size_t>(spec.c_out))
    throw ShapeError("dynamic_layer_flops: output mask length " +
                     std::to_string(active_out.size()) + " vs Cout " + std::to_string(spec.c_out));
  long long in_n = 0, out_n = 0;
  for (uint8_t v : active_in) in_n += v ? 1 : 0;
  for (uint8_t v : active_out) out_n += v ? 1 : 0;
  return static_cast<long long>(spec.h_out) * spec.w_out *
         (in_n * spec.kernel * spec.kernel + 1) * out_n;
}

void BudgetConfig::validate() const {
  if (dense_flops <= 0.0) throw ConfigError("budget: dense cost must be > 0");
  if (budget <= 0.0 || budget > dense_flops)
    throw ConfigError("budget out of range: p must satisfy 0 < p <= p0");
  if (lambda0 <= 0.0) throw ConfigError("budget: lambda0 must be > 0");
  if (estimator_window < 1) throw ConfigError("budget: estimator window must be >= 1");
  if (total_filters <= 0) throw ConfigError("budget: total filter count must be > 0");
}

double cost_weight(const BudgetConfig& cfg, double estimated_cost) {
  cfg.validate();
  if (estimated_cost < 0.0 || estimated_cost > cfg.dense_flops)
    throw NumericError("cost estimate " + std::to_string(estimated_cost) +
                       " outside [0, p0=" + std::to_string(cfg.dense_flops) + "]");
  const double w = cfg.lambda0 * (estimated_cost - cfg.budget) / cfg.dense_flops;
  if (w < -cfg.lambda0 || w > cfg.lambda0)
    throw NumericError("cost weight " + std::to_string(w) + " escaped [-lambda0, lambda0]");
  return w;
}

CostEstimator::CostEstimator(double dense_flops, int window) : dense_(dense_flops) {
  if (window < 1) throw ConfigError("cost estimator: window must be >= 1");
  if (dense_flops <= 0.0) throw ConfigError("cost estimator: dense cost must be > 0");
  window_ = static_cast<size_t>(window);
}

double CostEstimator::push(double batch_mean_cost) {
  fifo_.push_back(batch_mean_cost);
  if (fifo_.size() > window_) fifo_.pop_front();
  return current();
}

double CostEstimator::current() const {
  if (fifo_.empty()) return dense_;
  double s = 0.0;
  for (double v : fifo_) s += v;
  return s / static_cast<double>(fifo_.size());
}

void CostEstimator::restore(std::span<const double> values) {
  fifo_.assign(values.begin(), values.end());
  while (fifo_.size() > window_) fifo_.pop_front();
}

Tensor multi_task_loss(Tape& tape, const Tensor& cls_loss, std::span<const Tensor> saliencies,
                       double lambda, long long total_filters) {
  if (total_filters <= 0) throw ConfigError("multi_task_loss: total filter count must be > 0");
  if (cls_loss.size() != 1)
    throw UsageError("multi_task_loss: classification loss must be scalar");
  if (saliencies.empty()) return cls_loss;
  Tensor mass = l1_norm(tape, saliencies[0]);
  for (size_t i = 1; i < saliencies.size(); ++i)
    mass = add(tape, mass, l1_norm(tape, saliencies[i]));
  Tensor cost_term = scale(tape, mass, lambda / static_cast<double>(total_filters));
  return add(tape, cls_loss, cost_term);
}

}  // namespace adaprune
