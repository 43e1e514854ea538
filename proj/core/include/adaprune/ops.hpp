#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adaprune/tape.hpp"
#include "adaprune/tensor.hpp"

namespace adaprune {

/// Per-channel batch-norm running statistics (buffers, not parameters).
struct BnBuffers {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  explicit BnBuffers(int channels = 0) {
    if (channels > 0) {
      running_mean = Tensor(Shape{channels}, 0.0);
      running_var = Tensor(Shape{channels}, 1.0);
    }
  }
};

namespace detail {

/// Resolved conv geometry. Output spatial size follows the usual
/// floor((in + 2*pad - k) / stride) + 1 rule.
struct ConvGeom {
  int cin, h, w;
  int cout, k;
  int stride, pad;
  int ho, wo;
};

ConvGeom conv_geom(const Shape& x, const Shape& w, int stride, int pad);

/// Accumulates one output plane: y += bias + sum over unmasked input
/// channels of w_co (*) x. `y` must be zero-initialised by the caller.
/// Per output element the accumulation order is (ci, kh, kw), identical
/// for the dense and the masked path.
void conv_forward_plane(const double* x, const double* w_co, double bias, double* y,
                        const ConvGeom& g, const uint8_t* in_mask);

/// y[i] = (x[i] - mean) * scale + beta, the eval-mode batch-norm transform.
void bn_eval_plane(const double* x, double* y, int count, double mean, double scale, double beta);

}  // namespace detail

// All layer operations take a leading batch axis:
//   conv2d:   x [N,Cin,H,W], w [Cout,Cin,k,k], bias [Cout] (optional)
//   linear:   x [N,in], w [out,in], bias [out] (optional)
//   pooling:  x [N,C,H,W] -> [N,C]
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding);

/// `batch_stats` selects training-mode normalisation: per-channel batch
/// statistics are used and the running buffers updated (requires batch
/// size >= 2). Otherwise the running buffers normalise each sample
/// independently.
Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BnBuffers& buffers, bool batch_stats, double eps = 1e-5,
                  double momentum = 0.1);

Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor elementwise_mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double c);

/// y[n,c,:,:] = x[n,c,:,:] * gate[n,c]; the channel rescaling primitive.
Tensor scale_channels(Tape& tape, const Tensor& x, const Tensor& gate);

/// Repeats a [C] or [1,C] row n times into [n,C]; backward sums over rows.
Tensor broadcast_rows(Tape& tape, const Tensor& row, int n);

/// [C] -> [1,C]
Tensor unsqueeze0(Tape& tape, const Tensor& v);

/// [N,C,H,W] -> [N,C*H*W]
Tensor flatten_spatial(Tape& tape, const Tensor& x);

Tensor global_avg_pool(Tape& tape, const Tensor& x);
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor l1_norm(Tape& tape, const Tensor& x);
Tensor sum_all(Tape& tape, const Tensor& x);

/// Mean cross entropy over the batch; labels.size() must equal logits
/// rows. Log-sum-exp stabilised.
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels);

/// clamp(gain * sigmoid(x) - shift, 0, 1), elementwise. Gradient is
/// gain * sigmoid'(x) strictly inside (0,1) and zero in the saturated
/// regions.
Tensor saturating_sigmoid(Tape& tape, const Tensor& x, double gain, double shift);

/// Forward: hard ? indicator(soft > 0.5) : soft, per element (strict
/// inequality). Backward always routes the upstream gradient to `soft`
/// unchanged, so the rounded branch trains through its continuous
/// surrogate.
Tensor binarize_straight_through(Tape& tape, const Tensor& soft, bool hard);
/// Per-element variant: hard_mask[i] selects the rounded branch for
/// element i. hard_mask.size() must equal soft.size().
Tensor binarize_straight_through(Tape& tape, const Tensor& soft,
                                 const std::vector<uint8_t>& hard_mask);

}  // namespace adaprune
