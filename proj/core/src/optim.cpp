#include "adaprune/optim.hpp"

namespace adaprune {

void SgdMomentum::step(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    if (p->frozen) continue;
    if (!p->tensor.requires_grad())
      throw UsageError("sgd step: parameter '" + p->name + "' has no gradient");
    auto g = p->tensor.grad();
    auto v = p->tensor.values();
    auto& vel = velocity_[p->name];
    if (vel.size() != v.size()) vel.assign(v.size(), 0.0);
    for (size_t i = 0; i < v.size(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i];
      v[i] -= lr_ * vel[i];
    }
  }
}

}  // namespace adaprune
