#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "adaprune/backbones.hpp"
#include "adaprune/checkpoint.hpp"
#include "adaprune/ops.hpp"
#include "testutil.hpp"

using namespace adaprune;
using testutil::rand_tensor;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir(const std::string& name) : path(fs::path("tmp_backbones") / name) {
    fs::create_directories(path);
  }
  std::string file(const std::string& n) const { return (path / n).string(); }
};

std::vector<double> eval_logits(Network& net, const Tensor& x, bool skip) {
  Tape tape;
  tape.set_recording(false);
  Tensor y = net.forward(tape, x, RunMode::eval(skip));
  return std::vector<double>(y.values().begin(), y.values().end());
}

std::map<std::string, Tensor> named_map(Network& net) {
  std::map<std::string, Tensor> m;
  for (auto& [k, v] : net.named_parameters()) m.emplace(k, v);
  for (auto& [k, v] : net.named_buffers()) m.emplace(k, v);
  return m;
}

}  // namespace

TEST_CASE("unpruned tinynet smoke: finite logits on a zero image") {
  Network net(tinynet_config(10), Variant::Unpruned, SpmOptions{}, 1);
  Tensor x(Shape{1, 3, 32, 32}, 0.0);
  auto logits = eval_logits(net, x, false);
  CHECK(logits.size() == 10);
  for (double v : logits) CHECK(std::isfinite(v));
}

TEST_CASE("gated build structure: one module per conv, N_c is the channel sum") {
  Network net(tinynet_config(10), Variant::Sanp, SpmOptions{}, 1);
  int spm_heads = 0;
  for (Parameter* p : net.parameters())
    if (p->name.find(".spm.reduce") != std::string::npos) ++spm_heads;
  CHECK(spm_heads == 3);
  CHECK(net.cost_model().total_filters() == 8 + 16 + 32);
  CHECK(net.num_gated() == 3);
}

TEST_CASE("cost extraction") {
  SUBCASE("single conv spec") {
    NetworkConfig cfg;
    cfg.name = "one";
    cfg.num_classes = 4;
    cfg.layers = {LayerSpec::conv(16, 3, 1, 1), LayerSpec::pool(), LayerSpec::linear(4)};
    CostModel cm = extract_cost_model(cfg, Variant::Unpruned);
    REQUIRE(cm.specs.size() == 1);
    CHECK(cm.specs[0].h_out == 32);
    CHECK(cm.specs[0].w_out == 32);
    CHECK(cm.dense_flops == 458752);
  }
  SUBCASE("stride-2 halves the spatial extents") {
    NetworkConfig cfg;
    cfg.name = "s2";
    cfg.num_classes = 4;
    cfg.layers = {LayerSpec::conv(8, 3, 2, 1), LayerSpec::pool(), LayerSpec::linear(4)};
    CostModel cm = extract_cost_model(cfg, Variant::Unpruned);
    CHECK(cm.specs[0].h_out == 16);
    CHECK(cm.specs[0].w_out == 16);
  }
  SUBCASE("tinynet dense cost equals the hand-summed table") {
    // 32*32*(3*9+1)*8 + 16*16*(8*9+1)*16 + 16*16*(16*9+1)*32
    CostModel cm = extract_cost_model(tinynet_config(10), Variant::Sanp);
    CHECK(cm.dense_flops == 229376 + 299008 + 1187840);
    CHECK(cm.dense_flops == 1716224);
  }
  SUBCASE("resnet18 resolves 20 convolutions") {
    CostModel cm = extract_cost_model(resnet18_config(10), Variant::Sanp);
    CHECK(cm.specs.size() == 20);           // stem + 16 block convs + 3 projections
    CHECK(cm.gated_channels.size() == 17);  // projections stay ungated
  }
  SUBCASE("invalid compositions are config errors naming the layer") {
    NetworkConfig cfg;
    cfg.name = "bad";
    cfg.num_classes = 4;
    cfg.layers = {LayerSpec::pool(), LayerSpec::conv(8), LayerSpec::linear(4)};
    try {
      extract_cost_model(cfg, Variant::Unpruned);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
  }
}

TEST_CASE("forced-open gates reproduce the unpruned twin exactly") {
  TempDir tmp("dense_equiv");
  NetworkConfig cfg = tinynet_config(10);
  Network dense(cfg, Variant::Unpruned, SpmOptions{}, 3);
  write_checkpoint(tmp.file("dense.ckpt"), {}, network_state(dense));

  for (Variant v : {Variant::Sanp, Variant::FixedK, Variant::Static}) {
    Network gated(cfg, v, SpmOptions{}, 99);
    load_network_state(gated, read_checkpoint(tmp.file("dense.ckpt")), /*allow_missing=*/true);
    gated.set_force_open(true);
    std::mt19937_64 rng(30);
    Tensor x = rand_tensor(Shape{2, 3, 32, 32}, rng);
    const auto ref = eval_logits(dense, x, false);
    CAPTURE(variant_name(v));
    CHECK(eval_logits(gated, x, false) == ref);  // dense compute path
    CHECK(eval_logits(gated, x, true) == ref);   // skip compute path
  }
}

TEST_CASE("residual blocks reduce to their shortcut when fully pruned") {
  NetworkConfig cfg;
  cfg.name = "block_net";
  cfg.num_classes = 3;
  cfg.input_shape = {4, 8, 8};
  cfg.reduction_rate = 2;

  SUBCASE("identity shortcut") {
    cfg.layers = {LayerSpec::block(4, 1), LayerSpec::pool(), LayerSpec::linear(3)};
    Network net(cfg, Variant::Sanp, SpmOptions{}, 5);
    for (Parameter* p : net.parameters())
      if (p->name.find(".spm.") != std::string::npos)
        for (double& v : p->tensor.values()) v = 0.0;  // saliency 0 -> decision 0 in eval
    std::mt19937_64 rng(31);
    Tensor x = rand_tensor(Shape{2, 4, 8, 8}, rng, 0.0, 1.0);  // nonnegative input
    auto logits = eval_logits(net, x, true);

    // expected: block collapses to relu(x) = x, then pool -> linear
    auto params = named_map(net);
    Tape t;
    t.set_recording(false);
    Tensor expected = linear(t, global_avg_pool(t, x), params.at("layers.2.weight"),
                             params.at("layers.2.bias"));
    CHECK(logits == std::vector<double>(expected.values().begin(), expected.values().end()));
  }
  SUBCASE("projection shortcut") {
    cfg.layers = {LayerSpec::block(6, 2), LayerSpec::pool(), LayerSpec::linear(3)};
    Network net(cfg, Variant::Sanp, SpmOptions{}, 6);
    for (Parameter* p : net.parameters())
      if (p->name.find(".spm.") != std::string::npos)
        for (double& v : p->tensor.values()) v = 0.0;
    std::mt19937_64 rng(32);
    Tensor x = rand_tensor(Shape{2, 4, 8, 8}, rng);
    auto logits = eval_logits(net, x, true);

    auto params = named_map(net);
    BnBuffers down_buf(0);
    down_buf.running_mean = params.at("layers.0.down.bn.running_mean");
    down_buf.running_var = params.at("layers.0.down.bn.running_var");
    Tape t;
    t.set_recording(false);
    Tensor sc = conv2d(t, x, params.at("layers.0.down.weight"), Tensor(), 2, 0);
    sc = batch_norm(t, sc, params.at("layers.0.down.bn.gamma"),
                    params.at("layers.0.down.bn.beta"), down_buf, false, net.bn_eps());
    Tensor expected =
        linear(t, global_avg_pool(t, relu(t, sc)), params.at("layers.2.weight"),
               params.at("layers.2.bias"));
    CHECK(logits == std::vector<double>(expected.values().begin(), expected.values().end()));
  }
}

TEST_CASE("rebuilding from one config is deterministic") {
  NetworkConfig cfg = tinynet_config(10);
  Network a(cfg, Variant::Sanp, SpmOptions{}, 11);
  Network b(cfg, Variant::Sanp, SpmOptions{}, 11);
  Network c(cfg, Variant::Sanp, SpmOptions{}, 12);
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  auto pc = c.named_parameters();
  REQUIRE(pa.size() == pb.size());
  REQUIRE(pa.size() == pc.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second.shape() == pb[i].second.shape());
    CHECK(std::equal(pa[i].second.values().begin(), pa[i].second.values().end(),
                     pb[i].second.values().begin()));
    CHECK(pa[i].second.shape() == pc[i].second.shape());  // same structure across seeds
  }
}

TEST_CASE("checkpoint round-trip preserves eval logits bit-exactly") {
  TempDir tmp("roundtrip");
  NetworkConfig cfg = tinynet_config(10);
  Network net(cfg, Variant::Sanp, SpmOptions{}, 21);
  std::mt19937_64 rng(33);
  Tensor x = rand_tensor(Shape{2, 3, 32, 32}, rng);
  const auto before = eval_logits(net, x, true);

  CheckpointMeta meta;
  meta.network = "tinynet";
  meta.variant = "sanp";
  meta.phase = "test";
  write_checkpoint(tmp.file("net.ckpt"), meta, network_state(net));

  Network fresh(cfg, Variant::Sanp, SpmOptions{}, 909);  // different init
  Checkpoint ckpt = read_checkpoint(tmp.file("net.ckpt"));
  CHECK(ckpt.meta.phase == "test");
  load_network_state(fresh, ckpt, false);
  CHECK(eval_logits(fresh, x, true) == before);
}

TEST_CASE("checkpoint error contracts") {
  TempDir tmp("errors");
  Network net(tinynet_config(10), Variant::Sanp, SpmOptions{}, 2);
  write_checkpoint(tmp.file("tiny.ckpt"), {}, network_state(net));

  SUBCASE("shape mismatch names the first offending tensor") {
    Network other(mcifarnet_config(10), Variant::Sanp, SpmOptions{}, 2);
    try {
      load_network_state(other, read_checkpoint(tmp.file("tiny.ckpt")), true);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("layers.0.weight") != std::string::npos);
      CHECK(std::string(e.what()).find("shape mismatch") != std::string::npos);
    }
  }
  SUBCASE("missing tensors fail strict loads") {
    Network dense(tinynet_config(10), Variant::Unpruned, SpmOptions{}, 2);
    write_checkpoint(tmp.file("dense.ckpt"), {}, network_state(dense));
    Network gated(tinynet_config(10), Variant::Sanp, SpmOptions{}, 2);
    CHECK_THROWS_AS(load_network_state(gated, read_checkpoint(tmp.file("dense.ckpt")), false),
                    DataError);
  }
  SUBCASE("truncated files and bad magic are data errors") {
    {
      std::ofstream f(tmp.file("trunc.ckpt"), std::ios::binary);
      std::ifstream src(tmp.file("tiny.ckpt"), std::ios::binary);
      std::vector<char> buf(200);
      src.read(buf.data(), 200);
      f.write(buf.data(), src.gcount());
    }
    CHECK_THROWS_AS(read_checkpoint(tmp.file("trunc.ckpt")), DataError);
    {
      std::ofstream f(tmp.file("junk.ckpt"), std::ios::binary);
      f << "definitely not a checkpoint, padded to be long enough........";
    }
    CHECK_THROWS_AS(read_checkpoint(tmp.file("junk.ckpt")), DataError);
    CHECK_THROWS_AS(read_checkpoint(tmp.file("absent.ckpt")), IoError);
  }
}

TEST_CASE("dense checkpoints warm-start gated builds, heads keep their init") {
  TempDir tmp("phase2");
  NetworkConfig cfg = tinynet_config(10);
  Network dense(cfg, Variant::Unpruned, SpmOptions{}, 41);
  write_checkpoint(tmp.file("dense.ckpt"), {}, network_state(dense));

  Network gated(cfg, Variant::Sanp, SpmOptions{}, 42);
  std::map<std::string, std::vector<double>> before;
  for (auto& [name, t] : gated.named_parameters())
    before[name] = std::vector<double>(t.values().begin(), t.values().end());

  load_network_state(gated, read_checkpoint(tmp.file("dense.ckpt")), /*allow_missing=*/true);

  auto dense_map = named_map(dense);
  for (auto& [name, t] : gated.named_parameters()) {
    const std::vector<double> now(t.values().begin(), t.values().end());
    if (name.find(".spm.") != std::string::npos) {
      CHECK(now == before[name]);  // untouched
    } else {
      auto ref = dense_map.at(name).values();
      CHECK(std::equal(now.begin(), now.end(), ref.begin()));
    }
  }
}

TEST_CASE("mcifarnet dense cost sits near the intended scale") {
  CostModel cm = extract_cost_model(mcifarnet_config(10), Variant::Unpruned);
  const double m = static_cast<double>(cm.dense_flops) / 1e6;
  CHECK(m > 150.0);
  CHECK(m < 190.0);
  CHECK(cm.specs.size() == 7);
}
