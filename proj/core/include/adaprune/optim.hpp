#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "adaprune/tensor.hpp"

namespace adaprune {

/// A named trainable tensor. Frozen parameters still accumulate gradients
/// but are skipped by the optimizer.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Tensor t) : name(std::move(n)), tensor(std::move(t)) {
    tensor.set_requires_grad(true);
  }
};

/// Classical momentum SGD: v <- momentum * v + grad; p <- p - lr * v.
/// Velocity is keyed by parameter name so it can be checkpointed.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  double momentum() const { return momentum_; }

  /// Throws UsageError if a non-frozen parameter has no gradient buffer.
  void step(std::span<Parameter* const> params);

  std::unordered_map<std::string, std::vector<double>>& velocity() { return velocity_; }
  const std::unordered_map<std::string, std::vector<double>>& velocity() const {
    return velocity_;
  }

 private:
  double lr_;
  double momentum_;
  std::unordered_map<std::string, std::vector<double>> velocity_;
};

}  // namespace adaprune
