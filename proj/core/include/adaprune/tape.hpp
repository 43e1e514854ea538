#pragma once

#include <functional>
#include <vector>

#include "adaprune/tensor.hpp"

namespace adaprune {

/// Reverse-mode gradient tape. Operations append one backward closure per
/// recorded step; backward() replays them in exact reverse order and then
/// clears the tape. Gradients accumulate additively, so a tensor feeding
/// several consumers receives the sum of their contributions.
///
/// A tape and the tensors it references belong to one logical thread for
/// the duration of a forward/backward pass.
class Tape {
 public:
  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
  }

  size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and runs all recorded steps in reverse.
  /// The tape is consumed. Throws UsageError on a non-scalar loss or an
  /// empty tape.
  void backward(Tensor& loss);

 private:
  std::vector<std::function<void()>> steps_;
  bool recording_ = true;
};

}  // namespace adaprune
