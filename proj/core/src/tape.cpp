#include "adaprune/tape.hpp"

namespace adaprune {

void Tape::backward(Tensor& loss) {
  if (loss.size() != 1)
    throw UsageError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  if (steps_.empty()) throw UsageError("backward() on an empty tape");
  if (!loss.requires_grad())
    throw UsageError("backward() on a loss that is not connected to the tape");
  loss.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

}  // namespace adaprune
