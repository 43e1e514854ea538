#include "adaprune/spm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adaprune/rng.hpp"

namespace adaprune {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Sanp: return "sanp";
    case Variant::FixedK: return "fixed_k";
    case Variant::Static: return "static";
    case Variant::Unpruned: return "unpruned";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "sanp") return Variant::Sanp;
  if (name == "fixed_k") return Variant::FixedK;
  if (name == "static") return Variant::Static;
  if (name == "unpruned") return Variant::Unpruned;
  throw ConfigError("unknown variant '" + name + "' (expected sanp|fixed_k|static|unpruned)");
}

void BinarizerConfig::validate() const {
  if (a <= 0.0) throw ConfigError("binarizer: a must be > 0");
  if (noise_std < 0.0) throw ConfigError("binarizer: noise_std must be >= 0");
  if (s1_mix_prob < 0.0 || s1_mix_prob > 1.0)
    throw ConfigError("binarizer: s1_mix_prob must be in [0,1]");
}

int fixed_k_count(int channels, double k_fraction) {
  if (k_fraction <= 0.0 || k_fraction > 1.0)
    throw ConfigError("fixed_k: k_fraction must be in (0,1]");
  const int k = static_cast<int>(std::llround(k_fraction * channels));
  if (k <= 0)
    throw ConfigError("fixed_k: k_fraction " + std::to_string(k_fraction) + " keeps zero of " +
                      std::to_string(channels) + " channels");
  return std::min(k, channels);
}

std::vector<uint8_t> fixed_k_select(std::span<const double> saliency, double k_fraction) {
  const int c = static_cast<int>(saliency.size());
  const int k = fixed_k_count(c, k_fraction);
  std::vector<int> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    if (saliency[i] != saliency[j]) return saliency[i] > saliency[j];
    return i < j;
  });
  std::vector<uint8_t> mask(c, 0);
  for (int i = 0; i < k; ++i) mask[order[i]] = 1;
  return mask;
}

namespace {

int head_hidden(int out_channels, int reduction) {
  if (reduction < 1) throw ConfigError("spm: reduction rate must be >= 1");
  return std::max(1, out_channels / reduction);
}

}  // namespace

Spm::Spm(std::string name, int in_channels, int out_channels, int reduction, Variant variant,
         BinarizerConfig cfg, double k_fraction, std::mt19937_64& init_rng, uint64_t noise_seed)
    : name_(std::move(name)),
      cin_(in_channels),
      cout_(out_channels),
      hidden_(head_hidden(out_channels, reduction)),
      variant_(variant),
      cfg_(cfg),
      k_fraction_(k_fraction),
      rng_(noise_seed) {
  if (variant == Variant::Unpruned) throw UsageError("spm: unpruned layers carry no module");
  cfg_.validate();
  if (variant == Variant::FixedK) fixed_k_count(cout_, k_fraction_);  // validate now

  Tensor w1(Shape{hidden_, cin_});
  fill_uniform(init_rng, w1.values(), -1.0 / std::sqrt(cin_), 1.0 / std::sqrt(cin_));
  w_reduce_ = Parameter(name_ + ".spm.reduce", std::move(w1));
  // Positive expand weights start the gates open: the wrapped network then
  // behaves like its dense twin (up to binarizer noise) before any training,
  // which is what the warmup phase expects to refine.
  Tensor w2(Shape{cout_, hidden_});
  fill_uniform(init_rng, w2.values(), 0.0, 2.0 / std::sqrt(hidden_));
  w_expand_ = Parameter(name_ + ".spm.expand", std::move(w2));
  if (variant == Variant::Static) {
    Tensor sv(Shape{cin_});
    fill_uniform(init_rng, sv.values(), 0.0, 1.0);
    static_vec_ = Parameter(name_ + ".spm.static", std::move(sv));
  }
}

std::vector<Parameter*> Spm::params() {
  std::vector<Parameter*> out{&w_reduce_, &w_expand_};
  if (variant_ == Variant::Static) out.push_back(&static_vec_);
  return out;
}

Tensor Spm::predict_saliency(Tape& tape, const Tensor& x) {
  if (variant_ == Variant::Static) {
    Tensor row = unsqueeze0(tape, static_vec_.tensor);
    Tensor h = relu(tape, linear(tape, row, w_reduce_.tensor, Tensor()));
    return linear(tape, h, w_expand_.tensor, Tensor());  // [1,Cout]
  }
  if (x.rank() != 4 || x.dim(1) != cin_)
    throw ShapeError("spm '" + name_ + "': input " + shape_str(x.shape()) + " vs expected " +
                     std::to_string(cin_) + " channels");
  Tensor d = global_avg_pool(tape, x);  // the channel descriptor, [N,Cin]
  Tensor h = relu(tape, linear(tape, d, w_reduce_.tensor, Tensor()));
  return linear(tape, h, w_expand_.tensor, Tensor());
}

Spm::BinarizeOut Spm::binarize(Tape& tape, const Tensor& s, bool train) {
  if (variant_ == Variant::FixedK)
    throw UsageError("spm '" + name_ + "': binarize is bypassed in the fixed_k variant");
  Tensor pre = s;
  if (train && cfg_.noise_std > 0.0) {
    Tensor noise(s.shape());
    fill_normal(rng_, noise.values(), 0.0, cfg_.noise_std);
    pre = add(tape, s, noise);
  }
  BinarizeOut out;
  out.soft = saturating_sigmoid(tape, pre, cfg_.a, cfg_.b);
  out.hard.resize(static_cast<size_t>(out.soft.size()));
  auto sv = out.soft.values();
  for (size_t i = 0; i < sv.size(); ++i) out.hard[i] = sv[i] > 0.5 ? 1 : 0;
  if (!train) {
    out.b = binarize_straight_through(tape, out.soft, true);
  } else if (cfg_.per_element_mix) {
    std::vector<uint8_t> mask(sv.size());
    std::bernoulli_distribution hard_draw(1.0 - cfg_.s1_mix_prob);
    for (auto& m : mask) m = hard_draw(rng_) ? 1 : 0;
    out.b = binarize_straight_through(tape, out.soft, mask);
  } else {
    std::bernoulli_distribution soft_draw(cfg_.s1_mix_prob);
    out.soft_branch = soft_draw(rng_);
    out.b = binarize_straight_through(tape, out.soft, !out.soft_branch);
  }
  return out;
}

SpmDecision Spm::decide(Tape& tape, const Tensor& x, bool train) {
  const int n = x.dim(0);
  SpmDecision d;
  if (force_open) {
    d.saliency = Tensor(Shape{n, cout_}, 1.0);
    d.gate_b = Tensor(Shape{n, cout_}, 1.0);
    d.hard.assign(static_cast<size_t>(n) * cout_, 1);
    last_s_ = d.saliency;
    last_b_ = d.gate_b;
    return d;
  }
  switch (variant_) {
    case Variant::Sanp: {
      d.saliency = predict_saliency(tape, x);
      BinarizeOut bo = binarize(tape, d.saliency, train);
      d.soft = bo.soft;
      d.gate_b = bo.b;
      d.hard = std::move(bo.hard);
      d.soft_branch = bo.soft_branch;
      break;
    }
    case Variant::Static: {
      // One row through head and binarizer, shared by every sample, so the
      // decision cannot depend on the input.
      Tensor row = predict_saliency(tape, x);  // [1,Cout]
      BinarizeOut bo = binarize(tape, row, train);
      d.saliency = broadcast_rows(tape, row, n);
      d.soft = train ? broadcast_rows(tape, bo.soft, n) : Tensor();
      d.gate_b = broadcast_rows(tape, bo.b, n);
      d.soft_branch = bo.soft_branch;
      d.hard.resize(static_cast<size_t>(n) * cout_);
      for (int i = 0; i < n; ++i)
        std::copy(bo.hard.begin(), bo.hard.end(), d.hard.begin() + static_cast<size_t>(i) * cout_);
      break;
    }
    case Variant::FixedK: {
      d.saliency = predict_saliency(tape, x);
      d.hard.resize(static_cast<size_t>(n) * cout_);
      auto sv = d.saliency.values();
      for (int i = 0; i < n; ++i) {
        auto mask = fixed_k_select(
            std::span<const double>(sv.data() + static_cast<size_t>(i) * cout_, cout_),
            k_fraction_);
        std::copy(mask.begin(), mask.end(), d.hard.begin() + static_cast<size_t>(i) * cout_);
      }
      Tensor b(Shape{n, cout_});  // constant selection mask; no gradient through it
      auto bv = b.values();
      for (size_t i = 0; i < d.hard.size(); ++i) bv[i] = d.hard[i] ? 1.0 : 0.0;
      d.gate_b = b;
      break;
    }
    case Variant::Unpruned:
      throw UsageError("spm: decide() on an unpruned layer");
  }
  last_s_ = d.saliency;
  last_b_ = d.gate_b;
  return d;
}

Tensor gated_conv_infer(const Tensor& x, const Tensor& w, const Tensor& gamma,
                        const Tensor& beta, const BnBuffers& buffers, double eps, int stride,
                        int padding, std::span<const double> saliency,
                        std::span<const uint8_t> decisions, std::span<const uint8_t> in_active,
                        bool relu_after) {
  const detail::ConvGeom g = detail::conv_geom(x.shape(), w.shape(), stride, padding);
  const int n = x.dim(0);
  if (saliency.size() != static_cast<size_t>(n) * g.cout ||
      decisions.size() != static_cast<size_t>(n) * g.cout)
    throw ShapeError("gated_conv_infer: gate vectors must be [N*Cout]");
  if (!in_active.empty() && in_active.size() != static_cast<size_t>(n) * g.cin)
    throw ShapeError("gated_conv_infer: input mask must be [N*Cin]");
  if (eps <= 0.0) throw ConfigError("gated_conv_infer: eps must be > 0");

  Tensor out(Shape{n, g.cout, g.ho, g.wo});
  const long in_sz = static_cast<long>(g.cin) * g.h * g.w;
  const long out_hw = static_cast<long>(g.ho) * g.wo;
  const long ker_sz = static_cast<long>(g.cin) * g.k * g.k;
  const double* xd = x.values().data();
  const double* wd = w.values().data();
  const double* gam = gamma.values().data();
  const double* bet = beta.values().data();
  const double* rm = buffers.running_mean.values().data();
  const double* rv = buffers.running_var.values().data();
  double* yd = out.values().data();
  std::vector<double> tmp(static_cast<size_t>(out_hw));

  for (int i = 0; i < n; ++i) {
    const uint8_t* im = in_active.empty() ? nullptr : in_active.data() + static_cast<size_t>(i) * g.cin;
    for (int co = 0; co < g.cout; ++co) {
      const size_t gi = static_cast<size_t>(i) * g.cout + co;
      double* plane = yd + (static_cast<long>(i) * g.cout + co) * out_hw;
      if (!decisions[gi]) continue;  // skipped channel: plane stays zero
      detail::conv_forward_plane(xd + i * in_sz, wd + co * ker_sz, 0.0, tmp.data(), g, im);
      const double invstd = 1.0 / std::sqrt(rv[co] + eps);
      detail::bn_eval_plane(tmp.data(), tmp.data(), static_cast<int>(out_hw), rm[co],
                            gam[co] * invstd, bet[co]);
      const double gate = saliency[gi];
      for (long e = 0; e < out_hw; ++e) {
        double v = tmp[e] * gate;
        if (relu_after) v = v > 0.0 ? v : 0.0;
        plane[e] = v;
      }
    }
  }
  ensure_finite(out, "gated_conv_infer");
  return out;
}

}  // namespace adaprune
