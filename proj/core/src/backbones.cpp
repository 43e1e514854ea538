#include "adaprune/backbones.hpp"

#include <cassert>
#include <cmath>

#include "adaprune/rng.hpp"

namespace adaprune {

NetworkConfig tinynet_config(int classes) {
  NetworkConfig cfg;
  cfg.name = "tinynet";
  cfg.num_classes = classes;
  cfg.reduction_rate = 4;
  cfg.layers = {LayerSpec::conv(8, 3, 1, 1), LayerSpec::conv(16, 3, 2, 1),
                LayerSpec::conv(32, 3, 1, 1), LayerSpec::pool(), LayerSpec::linear(classes)};
  return cfg;
}

NetworkConfig mcifarnet_config(int classes) {
  NetworkConfig cfg;
  cfg.name = "mcifarnet";
  cfg.num_classes = classes;
  cfg.layers = {LayerSpec::conv(64),         LayerSpec::conv(64),  LayerSpec::conv(128, 3, 2, 1),
                LayerSpec::conv(128),        LayerSpec::conv(128), LayerSpec::conv(192, 3, 2, 1),
                LayerSpec::conv(192),        LayerSpec::pool(),    LayerSpec::linear(classes)};
  return cfg;
}

NetworkConfig vggnet_config(int classes) {
  NetworkConfig cfg;
  cfg.name = "vggnet";
  cfg.num_classes = classes;
  cfg.layers = {LayerSpec::conv(64),  LayerSpec::conv(64),
                LayerSpec::conv(128, 3, 2, 1), LayerSpec::conv(128),
                LayerSpec::conv(256, 3, 2, 1), LayerSpec::conv(256), LayerSpec::conv(256),
                LayerSpec::conv(256),
                LayerSpec::conv(512, 3, 2, 1), LayerSpec::conv(512), LayerSpec::conv(512),
                LayerSpec::conv(512),
                LayerSpec::conv(512, 3, 2, 1), LayerSpec::conv(512), LayerSpec::conv(512),
                LayerSpec::conv(512),
                LayerSpec::pool(), LayerSpec::linear(classes)};
  return cfg;
}

NetworkConfig resnet18_config(int classes) {
  NetworkConfig cfg;
  cfg.name = "resnet18";
  cfg.num_classes = classes;
  cfg.layers = {LayerSpec::conv(64),
                LayerSpec::block(64),       LayerSpec::block(64),
                LayerSpec::block(128, 2),   LayerSpec::block(128),
                LayerSpec::block(256, 2),   LayerSpec::block(256),
                LayerSpec::block(512, 2),   LayerSpec::block(512),
                LayerSpec::pool(),          LayerSpec::linear(classes)};
  return cfg;
}

NetworkConfig backbone_config(const std::string& name, int classes) {
  if (name == "tinynet") return tinynet_config(classes);
  if (name == "mcifarnet") return mcifarnet_config(classes);
  if (name == "vggnet") return vggnet_config(classes);
  if (name == "resnet18") return resnet18_config(classes);
  throw ConfigError("unknown backbone '" + name +
                    "' (expected tinynet|mcifarnet|vggnet|resnet18)");
}

MaskMatrix MaskMatrix::unite(const MaskMatrix& a, const MaskMatrix& b) {
  if (a.n != b.n || a.c != b.c) throw ShapeError("mask union: shape mismatch");
  MaskMatrix out = a;
  for (size_t i = 0; i < out.m.size(); ++i) out.m[i] = (a.m[i] || b.m[i]) ? 1 : 0;
  return out;
}

double MaskMatrix::active_fraction() const {
  if (m.empty()) return 1.0;
  long long cnt = 0;
  for (uint8_t v : m) cnt += v ? 1 : 0;
  return static_cast<double>(cnt) / static_cast<double>(m.size());
}

long long CostModel::total_filters() const {
  long long n = 0;
  for (int c : gated_channels) n += c;
  return n;
}

namespace {

int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

struct ShapeWalk {
  int c, h, w;
  bool spatial = true;  // still [N,C,H,W]
};

[[noreturn]] void layer_error(int index, const std::string& what) {
  throw ConfigError("layer " + std::to_string(index) + ": " + what);
}

}  // namespace

CostModel extract_cost_model(const NetworkConfig& cfg, Variant variant, int reduction) {
  if (reduction <= 0) reduction = cfg.reduction_rate;
  if (reduction <= 0) throw ConfigError("reduction rate must be >= 1");
  if (cfg.layers.empty()) throw ConfigError("network config has no layers");
  CostModel cm;
  ShapeWalk s{cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]};
  if (s.c < 1 || s.h < 1 || s.w < 1) throw ConfigError("invalid input shape");

  auto add_conv = [&](int index, int cin, int hin, int win, int cout, int k, int stride, int pad,
                      bool gated) {
    if (cout < 1) layer_error(index, "conv needs a positive channel count");
    if (k < 1 || stride < 1 || pad < 0) layer_error(index, "invalid conv geometry");
    if (k > hin + 2 * pad || k > win + 2 * pad)
      layer_error(index, "kernel larger than padded input");
    const int ho = conv_out_extent(hin, k, stride, pad);
    const int wo = conv_out_extent(win, k, stride, pad);
    if (ho < 1 || wo < 1) layer_error(index, "conv output collapses to zero extent");
    LayerCostSpec spec{static_cast<int>(cm.specs.size()), ho, wo, cin, cout, k};
    cm.specs.push_back(spec);
    if (gated) {
      cm.gated_of_spec.push_back(static_cast<int>(cm.gated_channels.size()));
      cm.gated_channels.push_back(cout);
      const long long hidden = std::max(1, cout / reduction);
      cm.head_flops += static_cast<long long>(cin) * hidden + hidden * cout;
    } else {
      cm.gated_of_spec.push_back(-1);
    }
  };

  const bool gate = variant != Variant::Unpruned;
  for (size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& ls = cfg.layers[i];
    const int idx = static_cast<int>(i);
    switch (ls.kind) {
      case LayerSpec::Kind::Conv: {
        if (!s.spatial) layer_error(idx, "convolution after pooling/flatten");
        add_conv(idx, s.c, s.h, s.w, ls.channels, ls.kernel, ls.stride, ls.padding, gate);
        s.c = ls.channels;
        s.h = conv_out_extent(s.h, ls.kernel, ls.stride, ls.padding);
        s.w = conv_out_extent(s.w, ls.kernel, ls.stride, ls.padding);
        break;
      }
      case LayerSpec::Kind::Block: {
        if (!s.spatial) layer_error(idx, "residual block after pooling/flatten");
        const int cin0 = s.c, h0 = s.h, w0 = s.w;
        add_conv(idx, cin0, h0, w0, ls.channels, 3, ls.stride, 1, gate);  // a
        const int h1 = conv_out_extent(h0, 3, ls.stride, 1);
        const int w1 = conv_out_extent(w0, 3, ls.stride, 1);
        add_conv(idx, ls.channels, h1, w1, ls.channels, 3, 1, 1, gate);   // b
        if (ls.stride != 1 || cin0 != ls.channels)
          add_conv(idx, cin0, h0, w0, ls.channels, 1, ls.stride, 0, false);  // shortcut projection
        s.c = ls.channels;
        s.h = h1;
        s.w = w1;
        break;
      }
      case LayerSpec::Kind::Pool: {
        if (!s.spatial) layer_error(idx, "pool after pooling/flatten");
        s.spatial = false;
        s.h = s.w = 1;
        break;
      }
      case LayerSpec::Kind::Flatten: {
        if (!s.spatial) layer_error(idx, "flatten after pooling/flatten");
        s.c = s.c * s.h * s.w;
        s.h = s.w = 1;
        s.spatial = false;
        break;
      }
      case LayerSpec::Kind::Linear: {
        if (s.spatial) layer_error(idx, "linear layer needs pooled or flattened input");
        if (ls.channels < 1) layer_error(idx, "linear needs a positive output size");
        s.c = ls.channels;
        break;
      }
    }
  }
  const LayerSpec& last = cfg.layers.back();
  if (last.kind != LayerSpec::Kind::Linear || last.channels != cfg.num_classes)
    throw ConfigError("network must end in a linear layer with num_classes outputs");

  for (const LayerCostSpec& spec : cm.specs) cm.dense_flops += layer_flops(spec);
  return cm;
}

// ---------------------------------------------------------------------------
// Units

namespace {

// Conv + BN (+ optional SPM gate, + optional relu). Shared by plain layers
// and block members.
struct ConvCore {
  std::string prefix;
  int cin = 0, cout = 0, kernel = 3, stride = 1, pad = 1;
  bool relu_after = true;
  int cost_index = -1, gated_index = -1;
  Parameter weight, gamma, beta;
  BnBuffers buffers;
  std::optional<Spm> spm;

  void init(std::mt19937_64& rng) {
    Tensor w(Shape{cout, cin, kernel, kernel});
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * kernel * kernel);
    fill_uniform(rng, w.values(), -bound, bound);
    weight = Parameter(prefix + ".weight", std::move(w));
    gamma = Parameter(prefix + ".bn.gamma", Tensor(Shape{cout}, 1.0));
    beta = Parameter(prefix + ".bn.beta", Tensor(Shape{cout}, 0.0));
    buffers = BnBuffers(cout);
  }

  Tensor forward(Tape& tape, const Tensor& x, const RunMode& mode, MaskMatrix& mask,
                 ForwardTrace* trace, double eps, double mom) {
    const int n = x.dim(0);
    ConvTrace tr;
    tr.cost_index = cost_index;
    tr.gated_index = gated_index;
    tr.in_mask = mask;
    Tensor y;
    if (!spm) {
      y = conv2d(tape, x, weight.tensor, Tensor(), stride, pad);
      y = batch_norm(tape, y, gamma.tensor, beta.tensor, buffers, mode.bn_batch_stats, eps, mom);
      if (relu_after) y = relu(tape, y);
      tr.decisions.assign(static_cast<size_t>(n) * cout, 1);
      mask = MaskMatrix::ones(n, cout);
    } else {
      SpmDecision dec = spm->decide(tape, x, mode.spm_train);
      tr.saliency = dec.saliency;
      tr.soft = dec.soft;
      tr.decisions = dec.hard;
      if (mode.skip_inactive) {
        if (mode.bn_batch_stats)
          throw UsageError("skip path is incompatible with batch statistics");
        y = gated_conv_infer(x, weight.tensor, gamma.tensor, beta.tensor, buffers, eps, stride,
                             pad, dec.saliency.values(), dec.hard, tr.in_mask.m, relu_after);
      } else {
        y = conv2d(tape, x, weight.tensor, Tensor(), stride, pad);
        y = batch_norm(tape, y, gamma.tensor, beta.tensor, buffers, mode.bn_batch_stats, eps, mom);
        Tensor gate = elementwise_mul(tape, dec.saliency, dec.gate_b);
        y = scale_channels(tape, y, gate);
        if (relu_after) y = relu(tape, y);
      }
      mask = MaskMatrix::from_bits(dec.hard, n, cout);
    }
    if (trace) trace->convs.push_back(std::move(tr));
    return y;
  }

  void params(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&gamma);
    out.push_back(&beta);
    if (spm)
      for (Parameter* p : spm->params()) out.push_back(p);
  }

  void named_params(std::vector<std::pair<std::string, Tensor>>& out) {
    out.emplace_back(weight.name, weight.tensor);
    out.emplace_back(gamma.name, gamma.tensor);
    out.emplace_back(beta.name, beta.tensor);
    if (spm)
      for (Parameter* p : spm->params()) out.emplace_back(p->name, p->tensor);
  }

  void named_buffers(std::vector<std::pair<std::string, Tensor>>& out) {
    out.emplace_back(prefix + ".bn.running_mean", buffers.running_mean);
    out.emplace_back(prefix + ".bn.running_var", buffers.running_var);
  }
};

}  // namespace

struct Network::Unit {
  virtual ~Unit() = default;
  virtual Tensor forward(Tape&, const Tensor&, const RunMode&, MaskMatrix&, ForwardTrace*,
                         double eps, double mom) = 0;
  virtual void params(std::vector<Parameter*>&) {}
  virtual void named_params(std::vector<std::pair<std::string, Tensor>>&) {}
  virtual void named_buffers(std::vector<std::pair<std::string, Tensor>>&) {}
  virtual void set_force_open(bool) {}
};

namespace {

struct ConvUnit final : Network::Unit {
  ConvCore core;
  Tensor forward(Tape& t, const Tensor& x, const RunMode& m, MaskMatrix& mask, ForwardTrace* tr,
                 double eps, double mom) override {
    return core.forward(t, x, m, mask, tr, eps, mom);
  }
  void params(std::vector<Parameter*>& out) override { core.params(out); }
  void named_params(std::vector<std::pair<std::string, Tensor>>& out) override {
    core.named_params(out);
  }
  void named_buffers(std::vector<std::pair<std::string, Tensor>>& out) override {
    core.named_buffers(out);
  }
  void set_force_open(bool on) override {
    if (core.spm) core.spm->force_open = on;
  }
};

struct BlockUnit final : Network::Unit {
  ConvCore a, b;
  std::optional<ConvCore> down;

  Tensor forward(Tape& tape, const Tensor& x, const RunMode& mode, MaskMatrix& mask,
                 ForwardTrace* trace, double eps, double mom) override {
    const MaskMatrix m0 = mask;
    MaskMatrix ma = m0;
    Tensor ya = a.forward(tape, x, mode, ma, trace, eps, mom);
    MaskMatrix mb = ma;
    Tensor yb = b.forward(tape, ya, mode, mb, trace, eps, mom);
    Tensor shortcut = x;
    MaskMatrix ms = m0;
    if (down) shortcut = down->forward(tape, x, mode, ms, trace, eps, mom);
    Tensor y = add(tape, yb, shortcut);
    y = relu(tape, y);
    mask = MaskMatrix::unite(mb, ms);
    return y;
  }
  void params(std::vector<Parameter*>& out) override {
    a.params(out);
    b.params(out);
    if (down) down->params(out);
  }
  void named_params(std::vector<std::pair<std::string, Tensor>>& out) override {
    a.named_params(out);
    b.named_params(out);
    if (down) down->named_params(out);
  }
  void named_buffers(std::vector<std::pair<std::string, Tensor>>& out) override {
    a.named_buffers(out);
    b.named_buffers(out);
    if (down) down->named_buffers(out);
  }
  void set_force_open(bool on) override {
    if (a.spm) a.spm->force_open = on;
    if (b.spm) b.spm->force_open = on;
  }
};

struct PoolUnit final : Network::Unit {
  Tensor forward(Tape& tape, const Tensor& x, const RunMode&, MaskMatrix& mask, ForwardTrace*,
                 double, double) override {
    Tensor y = global_avg_pool(tape, x);
    mask = MaskMatrix::ones(y.dim(0), y.dim(1));
    return y;
  }
};

struct FlattenUnit final : Network::Unit {
  Tensor forward(Tape& tape, const Tensor& x, const RunMode&, MaskMatrix& mask, ForwardTrace*,
                 double, double) override {
    Tensor y = flatten_spatial(tape, x);
    mask = MaskMatrix::ones(y.dim(0), y.dim(1));
    return y;
  }
};

struct LinearUnit final : Network::Unit {
  Parameter weight, bias;
  Tensor forward(Tape& tape, const Tensor& x, const RunMode&, MaskMatrix&, ForwardTrace*, double,
                 double) override {
    return linear(tape, x, weight.tensor, bias.tensor);
  }
  void params(std::vector<Parameter*>& out) override {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  void named_params(std::vector<std::pair<std::string, Tensor>>& out) override {
    out.emplace_back(weight.name, weight.tensor);
    out.emplace_back(bias.name, bias.tensor);
  }
};

}  // namespace

Network::Network(const NetworkConfig& cfg, Variant variant, const SpmOptions& opts, uint64_t seed)
    : cfg_(cfg), variant_(variant), opts_(opts) {
  const int reduction = opts.reduction > 0 ? opts.reduction : cfg.reduction_rate;
  cost_ = extract_cost_model(cfg, variant, reduction);

  std::mt19937_64 init_rng = make_rng(seed, 101);
  ShapeWalk s{cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]};
  int cost_idx = 0;
  int gated_idx = 0;
  const bool gate = variant != Variant::Unpruned;

  auto make_core = [&](const std::string& prefix, int cin, int cout, int k, int stride, int pad,
                       bool relu_after, bool gated) {
    ConvCore core;
    core.prefix = prefix;
    core.cin = cin;
    core.cout = cout;
    core.kernel = k;
    core.stride = stride;
    core.pad = pad;
    core.relu_after = relu_after;
    core.cost_index = cost_idx++;
    core.init(init_rng);
    if (gated) {
      core.gated_index = gated_idx;
      BinarizerConfig bin = opts_.binarizer;
      const uint64_t noise_seed = derive_seed(seed ^ mix64(bin.rng_seed), 500 + gated_idx);
      core.spm.emplace(prefix, cin, cout, reduction, variant, bin, opts_.fixed_k_fraction,
                       init_rng, noise_seed);
      ++gated_idx;
    }
    return core;
  };

  for (size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& ls = cfg.layers[i];
    const std::string prefix = "layers." + std::to_string(i);
    switch (ls.kind) {
      case LayerSpec::Kind::Conv: {
        auto unit = std::make_unique<ConvUnit>();
        unit->core =
            make_core(prefix, s.c, ls.channels, ls.kernel, ls.stride, ls.padding, true, gate);
        units_.push_back(std::move(unit));
        s.c = ls.channels;
        s.h = conv_out_extent(s.h, ls.kernel, ls.stride, ls.padding);
        s.w = conv_out_extent(s.w, ls.kernel, ls.stride, ls.padding);
        break;
      }
      case LayerSpec::Kind::Block: {
        auto unit = std::make_unique<BlockUnit>();
        const int cin0 = s.c;
        unit->a = make_core(prefix + ".a", cin0, ls.channels, 3, ls.stride, 1, true, gate);
        unit->b = make_core(prefix + ".b", ls.channels, ls.channels, 3, 1, 1, false, gate);
        if (ls.stride != 1 || cin0 != ls.channels)
          unit->down = make_core(prefix + ".down", cin0, ls.channels, 1, ls.stride, 0, false,
                                 false);
        units_.push_back(std::move(unit));
        s.c = ls.channels;
        s.h = conv_out_extent(s.h, 3, ls.stride, 1);
        s.w = conv_out_extent(s.w, 3, ls.stride, 1);
        break;
      }
      case LayerSpec::Kind::Pool:
        units_.push_back(std::make_unique<PoolUnit>());
        s.spatial = false;
        break;
      case LayerSpec::Kind::Flatten:
        units_.push_back(std::make_unique<FlattenUnit>());
        s.c = s.c * s.h * s.w;
        s.spatial = false;
        break;
      case LayerSpec::Kind::Linear: {
        auto unit = std::make_unique<LinearUnit>();
        Tensor w(Shape{ls.channels, s.c});
        const double bound = 1.0 / std::sqrt(static_cast<double>(s.c));
        fill_uniform(init_rng, w.values(), -bound, bound);
        unit->weight = Parameter(prefix + ".weight", std::move(w));
        Tensor b(Shape{ls.channels});
        fill_uniform(init_rng, b.values(), -bound, bound);
        unit->bias = Parameter(prefix + ".bias", std::move(b));
        units_.push_back(std::move(unit));
        s.c = ls.channels;
        break;
      }
    }
  }
  assert(cost_idx == static_cast<int>(cost_.specs.size()));
}

Network::~Network() = default;

Tensor Network::forward(Tape& tape, const Tensor& images, const RunMode& mode,
                        ForwardTrace* trace) {
  if (images.rank() != 4 || images.dim(1) != cfg_.input_shape[0] ||
      images.dim(2) != cfg_.input_shape[1] || images.dim(3) != cfg_.input_shape[2])
    throw ShapeError("network '" + cfg_.name + "': input " + shape_str(images.shape()) +
                     " does not match configured shape");
  const int n = images.dim(0);
  if (trace) {
    trace->batch = n;
    trace->convs.clear();
  }
  MaskMatrix mask = MaskMatrix::ones(n, cfg_.input_shape[0]);
  Tensor x = images;
  for (auto& unit : units_) x = unit->forward(tape, x, mode, mask, trace, bn_eps_, bn_momentum_);
  return x;
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (auto& u : units_) u->params(out);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Network::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& u : units_) u->named_params(out);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Network::named_buffers() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& u : units_) u->named_buffers(out);
  return out;
}

void Network::zero_grad() {
  for (Parameter* p : parameters()) p->tensor.zero_grad();
}

void Network::freeze_backbone(bool frozen) {
  for (Parameter* p : parameters()) {
    const bool is_spm = p->name.find(".spm.") != std::string::npos;
    if (!is_spm) p->frozen = frozen;
  }
}

void Network::set_force_open(bool on) {
  for (auto& u : units_) u->set_force_open(on);
}

std::unique_ptr<Network> build_network(const NetworkConfig& cfg, Variant variant,
                                       const SpmOptions& opts, uint64_t seed) {
  return std::make_unique<Network>(cfg, variant, opts, seed);
}

std::vector<long long> trace_sample_flops(const ForwardTrace& trace, const CostModel& cost) {
  std::vector<long long> total(static_cast<size_t>(trace.batch), 0);
  for (const ConvTrace& ct : trace.convs) {
    const LayerCostSpec& spec = cost.specs.at(static_cast<size_t>(ct.cost_index));
    if (ct.in_mask.c != spec.c_in ||
        ct.decisions.size() != static_cast<size_t>(trace.batch) * spec.c_out)
      throw ShapeError("trace entry does not match cost spec " + std::to_string(spec.layer_id));
    for (int i = 0; i < trace.batch; ++i) {
      std::span<const uint8_t> in(ct.in_mask.row(i), static_cast<size_t>(spec.c_in));
      std::span<const uint8_t> out(ct.decisions.data() + static_cast<size_t>(i) * spec.c_out,
                                   static_cast<size_t>(spec.c_out));
      total[static_cast<size_t>(i)] += dynamic_layer_flops(spec, in, out);
    }
  }
  return total;
}

std::vector<double> trace_active_fractions(const ForwardTrace& trace, int num_gated) {
  std::vector<double> frac(static_cast<size_t>(num_gated), 0.0);
  for (const ConvTrace& ct : trace.convs) {
    if (ct.gated_index < 0) continue;
    long long cnt = 0;
    for (uint8_t v : ct.decisions) cnt += v ? 1 : 0;
    frac.at(static_cast<size_t>(ct.gated_index)) =
        static_cast<double>(cnt) / static_cast<double>(ct.decisions.size());
  }
  return frac;
}

}  // namespace adaprune
