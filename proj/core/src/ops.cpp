#include "adaprune/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace adaprune {

namespace {

bool track(const Tape& tape, std::initializer_list<const Tensor*> ins) {
  if (!tape.recording()) return false;
  for (const Tensor* t : ins)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
}

double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// 4-way unrolled dot product; b is strided.
double dot_strided(const double* a, const double* b, int n, long bstride) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i * bstride];
    s1 += a[i + 1] * b[(i + 1) * bstride];
    s2 += a[i + 2] * b[(i + 2) * bstride];
    s3 += a[i + 3] * b[(i + 3) * bstride];
  }
  double s = (s0 + s1) + (s2 + s3);
  for (; i < n; ++i) s += a[i] * b[i * bstride];
  return s;
}

// Output index range [lo,hi] such that 0 <= o*stride + off <= limit-1.
void conv_range(int off, int limit, int stride, int out_limit, int& lo, int& hi) {
  lo = -off <= 0 ? 0 : (-off + stride - 1) / stride;
  int hi_num = limit - 1 - off;
  hi = hi_num < 0 ? -1 : hi_num / stride;
  if (hi > out_limit - 1) hi = out_limit - 1;
}

}  // namespace

namespace detail {

ConvGeom conv_geom(const Shape& xs, const Shape& ws, int stride, int pad) {
  if (xs.size() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(xs));
  if (ws.size() != 4)
    throw ShapeError("conv2d: weights must be [Cout,Cin,k,k], got " + shape_str(ws));
  if (ws[2] != ws[3]) throw ShapeError("conv2d: non-square kernel " + shape_str(ws));
  if (ws[1] != xs[1])
    throw ShapeError("conv2d: weight input channels " + std::to_string(ws[1]) +
                     " do not match input channels " + std::to_string(xs[1]));
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (pad < 0) throw ConfigError("conv2d: padding must be >= 0");
  ConvGeom g;
  g.cin = xs[1];
  g.h = xs[2];
  g.w = xs[3];
  g.cout = ws[0];
  g.k = ws[2];
  g.stride = stride;
  g.pad = pad;
  if (g.k > g.h + 2 * pad || g.k > g.w + 2 * pad)
    throw ShapeError("conv2d: kernel " + std::to_string(g.k) + " larger than padded input");
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  return g;
}

void conv_forward_plane(const double* x, const double* w_co, double bias, double* y,
                        const ConvGeom& g, const uint8_t* in_mask) {
  const long hw = static_cast<long>(g.h) * g.w;
  const long out_n = static_cast<long>(g.ho) * g.wo;
  for (long i = 0; i < out_n; ++i) y[i] = bias;
  for (int ci = 0; ci < g.cin; ++ci) {
    if (in_mask && !in_mask[ci]) continue;
    const double* xp = x + ci * hw;
    const double* wp = w_co + static_cast<long>(ci) * g.k * g.k;
    for (int kh = 0; kh < g.k; ++kh) {
      int oh0, oh1;
      conv_range(kh - g.pad, g.h, g.stride, g.ho, oh0, oh1);
      for (int kw = 0; kw < g.k; ++kw) {
        const double wv = wp[kh * g.k + kw];
        int ow0, ow1;
        conv_range(kw - g.pad, g.w, g.stride, g.wo, ow0, ow1);
        const int base = kw - g.pad;
        for (int oh = oh0; oh <= oh1; ++oh) {
          const double* xrow = xp + static_cast<long>(oh * g.stride + kh - g.pad) * g.w;
          double* yrow = y + static_cast<long>(oh) * g.wo;
          if (g.stride == 1) {
            for (int ow = ow0; ow <= ow1; ++ow) yrow[ow] += wv * xrow[ow + base];
          } else {
            for (int ow = ow0; ow <= ow1; ++ow) yrow[ow] += wv * xrow[ow * g.stride + base];
          }
        }
      }
    }
  }
}

void bn_eval_plane(const double* x, double* y, int count, double mean, double scale,
                   double beta) {
  for (int i = 0; i < count; ++i) y[i] = (x[i] - mean) * scale + beta;
}

}  // namespace detail

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding) {
  const detail::ConvGeom g = detail::conv_geom(x.shape(), w.shape(), stride, padding);
  if (bias.defined() && bias.shape() != Shape{g.cout})
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " vs Cout " +
                     std::to_string(g.cout));
  const int n = x.dim(0);
  Tensor out(Shape{n, g.cout, g.ho, g.wo});

  const double* xd = x.values().data();
  const double* wd = w.values().data();
  const double* bd = bias.defined() ? bias.values().data() : nullptr;
  double* yd = out.values().data();
  const long in_sz = static_cast<long>(g.cin) * g.h * g.w;
  const long out_hw = static_cast<long>(g.ho) * g.wo;
  const long ker_sz = static_cast<long>(g.cin) * g.k * g.k;
  for (int i = 0; i < n; ++i)
    for (int co = 0; co < g.cout; ++co)
      detail::conv_forward_plane(xd + i * in_sz, wd + co * ker_sz, bd ? bd[co] : 0.0,
                                 yd + (static_cast<long>(i) * g.cout + co) * out_hw, g, nullptr);
  ensure_finite(out, "conv2d");

  if (track(tape, {&x, &w, &bias})) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = w, bc = bias, oc = out;
    tape.record([xc, wc, bc, oc, g, n]() mutable {
      auto gy = oc.grad();
      const long in_sz = static_cast<long>(g.cin) * g.h * g.w;
      const long out_hw = static_cast<long>(g.ho) * g.wo;
      const long ker_sz = static_cast<long>(g.cin) * g.k * g.k;
      const double* wd = wc.values().data();
      const double* xd = xc.values().data();
      if (xc.requires_grad()) {
        auto gx = xc.grad();
        for (int i = 0; i < n; ++i) {
          for (int co = 0; co < g.cout; ++co) {
            const double* gyp = gy.data() + (static_cast<long>(i) * g.cout + co) * out_hw;
            for (int ci = 0; ci < g.cin; ++ci) {
              double* gxp = gx.data() + i * in_sz + static_cast<long>(ci) * g.h * g.w;
              const double* wp = wd + co * ker_sz + static_cast<long>(ci) * g.k * g.k;
              for (int kh = 0; kh < g.k; ++kh) {
                int oh0, oh1;
                conv_range(kh - g.pad, g.h, g.stride, g.ho, oh0, oh1);
                for (int kw = 0; kw < g.k; ++kw) {
                  const double wv = wp[kh * g.k + kw];
                  if (wv == 0.0) continue;
                  int ow0, ow1;
                  conv_range(kw - g.pad, g.w, g.stride, g.wo, ow0, ow1);
                  const int base = kw - g.pad;
                  for (int oh = oh0; oh <= oh1; ++oh) {
                    double* gxrow = gxp + static_cast<long>(oh * g.stride + kh - g.pad) * g.w;
                    const double* gyrow = gyp + static_cast<long>(oh) * g.wo;
                    for (int ow = ow0; ow <= ow1; ++ow)
                      gxrow[ow * g.stride + base] += wv * gyrow[ow];
                  }
                }
              }
            }
          }
        }
      }
      if (wc.requires_grad()) {
        auto gw = wc.grad();
        for (int i = 0; i < n; ++i) {
          for (int co = 0; co < g.cout; ++co) {
            const double* gyp = gy.data() + (static_cast<long>(i) * g.cout + co) * out_hw;
            for (int ci = 0; ci < g.cin; ++ci) {
              const double* xp = xd + i * in_sz + static_cast<long>(ci) * g.h * g.w;
              double* gwp = gw.data() + co * ker_sz + static_cast<long>(ci) * g.k * g.k;
              for (int kh = 0; kh < g.k; ++kh) {
                int oh0, oh1;
                conv_range(kh - g.pad, g.h, g.stride, g.ho, oh0, oh1);
                for (int kw = 0; kw < g.k; ++kw) {
                  int ow0, ow1;
                  conv_range(kw - g.pad, g.w, g.stride, g.wo, ow0, ow1);
                  const int base = kw - g.pad;
                  double acc = 0.0;
                  for (int oh = oh0; oh <= oh1; ++oh) {
                    const double* xrow =
                        xp + static_cast<long>(oh * g.stride + kh - g.pad) * g.w + base;
                    const double* gyrow = gyp + static_cast<long>(oh) * g.wo;
                    acc += dot_strided(gyrow + ow0, xrow + static_cast<long>(ow0) * g.stride,
                                       ow1 - ow0 + 1, g.stride);
                  }
                  gwp[kh * g.k + kw] += acc;
                }
              }
            }
          }
        }
      }
      if (bc.defined() && bc.requires_grad()) {
        auto gb = bc.grad();
        for (int i = 0; i < n; ++i)
          for (int co = 0; co < g.cout; ++co) {
            const double* gyp = gy.data() + (static_cast<long>(i) * g.cout + co) * out_hw;
            double acc = 0.0;
            for (long e = 0; e < out_hw; ++e) acc += gyp[e];
            gb[co] += acc;
          }
      }
    });
  }
  return out;
}

Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BnBuffers& buffers, bool batch_stats, double eps, double momentum) {
  require_rank(x, 4, "batch_norm");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (eps <= 0.0) throw ConfigError("batch_norm: eps must be > 0");
  if (momentum <= 0.0 || momentum > 1.0) throw ConfigError("batch_norm: momentum must be in (0,1]");
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw ShapeError("batch_norm: gamma/beta must be [C]");
  if (!buffers.running_mean.defined() || buffers.running_mean.shape() != Shape{c} ||
      buffers.running_var.shape() != Shape{c})
    throw ShapeError("batch_norm: running buffers must be [C]");
  if (batch_stats && n < 2) throw UsageError("batch_norm: batch statistics require batch size >= 2");

  const long hw = static_cast<long>(h) * w;
  const long m = static_cast<long>(n) * hw;
  std::vector<double> mean(c), invstd(c);
  const double* xd = x.values().data();

  if (batch_stats) {
    std::vector<double> var(c);
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* p = xd + (static_cast<long>(i) * c + ch) * hw;
        for (long e = 0; e < hw; ++e) s += p[e];
      }
      const double mu = s / static_cast<double>(m);
      double sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* p = xd + (static_cast<long>(i) * c + ch) * hw;
        for (long e = 0; e < hw; ++e) {
          const double d = p[e] - mu;
          sq += d * d;
        }
      }
      const double v = sq / static_cast<double>(m);
      mean[ch] = mu;
      var[ch] = v;
      invstd[ch] = 1.0 / std::sqrt(v + eps);
    }
    auto rm = buffers.running_mean.values();
    auto rv = buffers.running_var.values();
    const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
    for (int ch = 0; ch < c; ++ch) {
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mean[ch];
      rv[ch] = (1.0 - momentum) * rv[ch] + momentum * var[ch] * unbias;
    }
  } else {
    auto rm = buffers.running_mean.values();
    auto rv = buffers.running_var.values();
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      invstd[ch] = 1.0 / std::sqrt(rv[ch] + eps);
    }
  }

  Tensor out(x.shape());
  double* yd = out.values().data();
  const double* gd = gamma.values().data();
  const double* bd = beta.values().data();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const long off = (static_cast<long>(i) * c + ch) * hw;
      detail::bn_eval_plane(xd + off, yd + off, static_cast<int>(hw), mean[ch],
                            gd[ch] * invstd[ch], bd[ch]);
    }
  ensure_finite(out, "batch_norm");

  if (track(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    tape.record([xc, gc, bc, oc, mean, invstd, batch_stats, n, c, hw, m]() mutable {
      auto gy = oc.grad();
      const double* xd = xc.values().data();
      const double* gd = gc.values().data();
      for (int ch = 0; ch < c; ++ch) {
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (int i = 0; i < n; ++i) {
          const long off = (static_cast<long>(i) * c + ch) * hw;
          for (long e = 0; e < hw; ++e) {
            const double g = gy[off + e];
            sum_gy += g;
            sum_gy_xhat += g * (xd[off + e] - mean[ch]) * invstd[ch];
          }
        }
        if (gc.requires_grad()) gc.grad()[ch] += sum_gy_xhat;
        if (bc.requires_grad()) bc.grad()[ch] += sum_gy;
        if (xc.requires_grad()) {
          auto gx = xc.grad();
          const double coef = gd[ch] * invstd[ch];
          if (batch_stats) {
            const double mg = sum_gy / static_cast<double>(m);
            const double mgx = sum_gy_xhat / static_cast<double>(m);
            for (int i = 0; i < n; ++i) {
              const long off = (static_cast<long>(i) * c + ch) * hw;
              for (long e = 0; e < hw; ++e) {
                const double xhat = (xd[off + e] - mean[ch]) * invstd[ch];
                gx[off + e] += coef * (gy[off + e] - mg - xhat * mgx);
              }
            }
          } else {
            for (int i = 0; i < n; ++i) {
              const long off = (static_cast<long>(i) * c + ch) * hw;
              for (long e = 0; e < hw; ++e) gx[off + e] += coef * gy[off + e];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  auto xv = x.values();
  auto yv = out.values();
  for (size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape.record([xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      auto gx = xc.grad();
      auto gy = oc.grad();
      auto xv = xc.values();
      for (size_t i = 0; i < gx.size(); ++i)
        if (xv[i] > 0.0) gx[i] += gy[i];
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  auto xv = x.values();
  auto yv = out.values();
  for (size_t i = 0; i < xv.size(); ++i) yv[i] = sigmoid_stable(xv[i]);
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape.record([xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      auto gx = xc.grad();
      auto gy = oc.grad();
      auto yv = oc.values();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * yv[i] * (1.0 - yv[i]);
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto yv = out.values();
  for (size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] + bv[i];
  ensure_finite(out, "add");
  if (track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape.record([ac, bc, oc]() mutable {
      auto gy = oc.grad();
      if (ac.requires_grad()) {
        auto ga = ac.grad();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i];
      }
    });
  }
  return out;
}

Tensor elementwise_mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise_mul");
  Tensor out(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto yv = out.values();
  for (size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] * bv[i];
  ensure_finite(out, "elementwise_mul");
  if (track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape.record([ac, bc, oc]() mutable {
      auto gy = oc.grad();
      auto av = ac.values();
      auto bv = bc.values();
      if (ac.requires_grad()) {
        auto ga = ac.grad();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double c) {
  Tensor out(x.shape());
  auto xv = x.values();
  auto yv = out.values();
  for (size_t i = 0; i < yv.size(); ++i) yv[i] = c * xv[i];
  ensure_finite(out, "scale");
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape.record([xc, oc, c]() mutable {
      if (!xc.requires_grad()) return;
      auto gx = xc.grad();
      auto gy = oc.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += c * gy[i];
    });
  }
  return out;
}

Tensor scale_channels(Tape& tape, const Tensor& x, const Tensor& gate) {
  require_rank(x, 4, "scale_channels");
  require_rank(gate, 2, "scale_channels");
  const int n = x.dim(0), c = x.dim(1);
  if (gate.dim(0) != n || gate.dim(1) != c)
    throw ShapeError("scale_channels: gate " + shape_str(gate.shape()) + " vs input " +
                     shape_str(x.shape()));
  const long hw = static_cast<long>(x.dim(2)) * x.dim(3);
  Tensor out(x.shape());
  auto xv = x.values();
  auto gv = gate.values();
  auto yv = out.values();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double g = gv[static_cast<long>(i) * c + ch];
      const long off = (static_cast<long>(i) * c + ch) * hw;
      for (long e = 0; e < hw; ++e) yv[off + e] = xv[off + e] * g;
    }
  ensure_finite(out, "scale_channels");
  if (track(tape, {&x, &gate})) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = gate, oc = out;
    tape.record([xc, gc, oc, n, c, hw]() mutable {
      auto gy = oc.grad();
      auto xv = xc.values();
      auto gv = gc.values();
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const long off = (static_cast<long>(i) * c + ch) * hw;
          if (xc.requires_grad()) {
            auto gx = xc.grad();
            const double g = gv[static_cast<long>(i) * c + ch];
            for (long e = 0; e < hw; ++e) gx[off + e] += gy[off + e] * g;
          }
          if (gc.requires_grad()) {
            double acc = 0.0;
            for (long e = 0; e < hw; ++e) acc += gy[off + e] * xv[off + e];
            gc.grad()[static_cast<long>(i) * c + ch] += acc;
          }
        }
    });
  }
  return out;
}

static int row_width(const Tensor& row, const char* op) {
  if (row.rank() == 1) return row.dim(0);
  if (row.rank() == 2 && row.dim(0) == 1) return row.dim(1);
  throw ShapeError(std::string(op) + ": expected [C] or [1,C], got " + shape_str(row.shape()));
}

Tensor broadcast_rows(Tape& tape, const Tensor& row, int n) {
  if (n < 1) throw UsageError("broadcast_rows: n must be >= 1");
  const int c = row_width(row, "broadcast_rows");
  Tensor out(Shape{n, c});
  auto rv = row.values();
  auto yv = out.values();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) yv[static_cast<long>(i) * c + ch] = rv[ch];
  if (track(tape, {&row})) {
    out.set_requires_grad(true);
    Tensor rc = row, oc = out;
    tape.record([rc, oc, n, c]() mutable {
      if (!rc.requires_grad()) return;
      auto gr = rc.grad();
      auto gy = oc.grad();
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) gr[ch] += gy[static_cast<long>(i) * c + ch];
    });
  }
  return out;
}

Tensor unsqueeze0(Tape& tape, const Tensor& v) {
  require_rank(v, 1, "unsqueeze0");
  Tensor out(Shape{1, v.dim(0)});
  auto xv = v.values();
  auto yv = out.values();
  std::copy(xv.begin(), xv.end(), yv.begin());
  if (track(tape, {&v})) {
    out.set_requires_grad(true);
    Tensor vc = v, oc = out;
    tape.record([vc, oc]() mutable {
      if (!vc.requires_grad()) return;
      auto gv = vc.grad();
      auto gy = oc.grad();
      for (size_t i = 0; i < gv.size(); ++i) gv[i] += gy[i];
    });
  }
  return out;
}

Tensor flatten_spatial(Tape& tape, const Tensor& x) {
  require_rank(x, 4, "flatten_spatial");
  Tensor out(Shape{x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
  auto xv = x.values();
  auto yv = out.values();
  std::copy(xv.begin(), xv.end(), yv.begin());
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape.record([xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      auto gx = xc.grad();
      auto gy = oc.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  }
  return out;
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1);
  const long hw = static_cast<long>(x.dim(2)) * x.dim(3);
  Tensor out(Shape{n, c});
  auto xv = x.values();
  auto yv = out.values();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const long off = (static_cast<long>(i) * c + ch) * hw;
      double acc = 0.0;
      for (long e = 0; e < hw; ++e) acc += xv[off + e];
      yv[static_cast<long>(i) * c + ch] = acc / static_cast<double>(hw);
    }
  ensure_finite(out, "global_avg_pool");
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape.record([xc, oc, n, c, hw]() mutable {
      if (!xc.requires_grad()) return;
      auto gx = xc.grad();
      auto gy = oc.grad();
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const double g = gy[static_cast<long>(i) * c + ch] / static_cast<double>(hw);
          const long off = (static_cast<long>(i) * c + ch) * hw;
          for (long e = 0; e < hw; ++e) gx[off + e] += g;
        }
    });
  }
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const int n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (w.dim(1) != in)
    throw ShapeError("linear: weight " + shape_str(w.shape()) + " vs input " +
                     shape_str(x.shape()));
  if (bias.defined() && bias.shape() != Shape{out_f})
    throw ShapeError("linear: bias shape " + shape_str(bias.shape()));
  Tensor out(Shape{n, out_f});
  auto xv = x.values();
  auto wv = w.values();
  auto yv = out.values();
  const double* bd = bias.defined() ? bias.values().data() : nullptr;
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out_f; ++o) {
      const double* xr = xv.data() + static_cast<long>(i) * in;
      const double* wr = wv.data() + static_cast<long>(o) * in;
      double acc = bd ? bd[o] : 0.0;
      for (int e = 0; e < in; ++e) acc += xr[e] * wr[e];
      yv[static_cast<long>(i) * out_f + o] = acc;
    }
  ensure_finite(out, "linear");
  if (track(tape, {&x, &w, &bias})) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = w, bc = bias, oc = out;
    tape.record([xc, wc, bc, oc, n, in, out_f]() mutable {
      auto gy = oc.grad();
      auto xv = xc.values();
      auto wv = wc.values();
      if (xc.requires_grad()) {
        auto gx = xc.grad();
        for (int i = 0; i < n; ++i)
          for (int o = 0; o < out_f; ++o) {
            const double g = gy[static_cast<long>(i) * out_f + o];
            if (g == 0.0) continue;
            const double* wr = wv.data() + static_cast<long>(o) * in;
            double* gxr = gx.data() + static_cast<long>(i) * in;
            for (int e = 0; e < in; ++e) gxr[e] += g * wr[e];
          }
      }
      if (wc.requires_grad()) {
        auto gw = wc.grad();
        for (int i = 0; i < n; ++i)
          for (int o = 0; o < out_f; ++o) {
            const double g = gy[static_cast<long>(i) * out_f + o];
            if (g == 0.0) continue;
            const double* xr = xv.data() + static_cast<long>(i) * in;
            double* gwr = gw.data() + static_cast<long>(o) * in;
            for (int e = 0; e < in; ++e) gwr[e] += g * xr[e];
          }
      }
      if (bc.defined() && bc.requires_grad()) {
        auto gb = bc.grad();
        for (int i = 0; i < n; ++i)
          for (int o = 0; o < out_f; ++o) gb[o] += gy[static_cast<long>(i) * out_f + o];
      }
    });
  }
  return out;
}

Tensor l1_norm(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += std::abs(v);
  Tensor out = Tensor::scalar(acc);
  ensure_finite(out, "l1_norm");
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape.record([xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      auto gx = xc.grad();
      auto xv = xc.values();
      const double g = oc.grad()[0];
      for (size_t i = 0; i < gx.size(); ++i) {
        if (xv[i] > 0.0)
          gx[i] += g;
        else if (xv[i] < 0.0)
          gx[i] -= g;
        // subgradient 0 at exactly 0
      }
    });
  }
  return out;
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  ensure_finite(out, "sum_all");
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape.record([xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      auto gx = xc.grad();
      const double g = oc.grad()[0];
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  auto zv = logits.values();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k)
      throw UsageError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                       " out of range [0," + std::to_string(k) + ")");
    const double* zr = zv.data() + static_cast<long>(i) * k;
    double mx = zr[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, zr[j]);
    double se = 0.0;
    for (int j = 0; j < k; ++j) se += std::exp(zr[j] - mx);
    total += mx + std::log(se) - zr[labels[i]];
  }
  Tensor out = Tensor::scalar(total / n);
  ensure_finite(out, "softmax_cross_entropy");
  if (track(tape, {&logits})) {
    out.set_requires_grad(true);
    Tensor zc = logits, oc = out;
    std::vector<int> lab(labels.begin(), labels.end());
    tape.record([zc, oc, lab, n, k]() mutable {
      if (!zc.requires_grad()) return;
      auto gz = zc.grad();
      auto zv = zc.values();
      const double g = oc.grad()[0] / n;
      for (int i = 0; i < n; ++i) {
        const double* zr = zv.data() + static_cast<long>(i) * k;
        double mx = zr[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, zr[j]);
        double se = 0.0;
        for (int j = 0; j < k; ++j) se += std::exp(zr[j] - mx);
        double* gr = gz.data() + static_cast<long>(i) * k;
        for (int j = 0; j < k; ++j) {
          const double p = std::exp(zr[j] - mx) / se;
          gr[j] += g * (p - (j == lab[i] ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

Tensor saturating_sigmoid(Tape& tape, const Tensor& x, double gain, double shift) {
  if (gain <= 0.0) throw ConfigError("saturating_sigmoid: gain must be > 0");
  Tensor out(x.shape());
  auto xv = x.values();
  auto yv = out.values();
  for (size_t i = 0; i < xv.size(); ++i) {
    const double pre = gain * sigmoid_stable(xv[i]) - shift;
    yv[i] = std::clamp(pre, 0.0, 1.0);
  }
  if (track(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape.record([xc, oc, gain, shift]() mutable {
      if (!xc.requires_grad()) return;
      auto gx = xc.grad();
      auto gy = oc.grad();
      auto xv = xc.values();
      for (size_t i = 0; i < gx.size(); ++i) {
        const double s = sigmoid_stable(xv[i]);
        const double pre = gain * s - shift;
        if (pre > 0.0 && pre < 1.0) gx[i] += gy[i] * gain * s * (1.0 - s);
      }
    });
  }
  return out;
}

static Tensor binarize_impl(Tape& tape, const Tensor& soft, const std::vector<uint8_t>* mask,
                            bool hard_all) {
  Tensor out(soft.shape());
  auto sv = soft.values();
  auto yv = out.values();
  for (size_t i = 0; i < sv.size(); ++i) {
    const bool hard = mask ? (*mask)[i] != 0 : hard_all;
    yv[i] = hard ? (sv[i] > 0.5 ? 1.0 : 0.0) : sv[i];
  }
  if (track(tape, {&soft})) {
    out.set_requires_grad(true);
    Tensor sc = soft, oc = out;
    tape.record([sc, oc]() mutable {
      if (!sc.requires_grad()) return;
      auto gs = sc.grad();
      auto gy = oc.grad();
      for (size_t i = 0; i < gs.size(); ++i) gs[i] += gy[i];
    });
  }
  return out;
}

Tensor binarize_straight_through(Tape& tape, const Tensor& soft, bool hard) {
  return binarize_impl(tape, soft, nullptr, hard);
}

Tensor binarize_straight_through(Tape& tape, const Tensor& soft,
                                 const std::vector<uint8_t>& hard_mask) {
  if (hard_mask.size() != static_cast<size_t>(soft.size()))
    throw ShapeError("binarize: mask size " + std::to_string(hard_mask.size()) + " vs tensor " +
                     shape_str(soft.shape()));
  return binarize_impl(tape, soft, &hard_mask, false);
}

}  // namespace adaprune
