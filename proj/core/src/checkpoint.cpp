#include "adaprune/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace adaprune {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'P', 'R', 'C', 'K', 'P', '\n'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const char* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(p[i])) << (8 * i);
  return v;
}

uint64_t get_u64(const char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(p[i])) << (8 * i);
  return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const CheckpointMeta& meta,
                      std::span<const NamedTensor> entries) {
  nlohmann::json manifest;
  manifest["meta"] = {{"network", meta.network}, {"variant", meta.variant}, {"phase", meta.phase}};
  for (const auto& [k, v] : meta.extra) manifest["meta"][k] = v;
  nlohmann::json tensors = nlohmann::json::array();
  uint64_t offset = 0;
  for (const NamedTensor& e : entries) {
    nlohmann::json t;
    t["name"] = e.name;
    t["shape"] = e.tensor.shape();
    t["dtype"] = "f64";
    t["offset"] = offset;
    offset += static_cast<uint64_t>(e.tensor.size()) * sizeof(double);
    tensors.push_back(std::move(t));
  }
  manifest["tensors"] = std::move(tensors);
  const std::string json = manifest.dump();

  std::string header;
  header.append(kMagic, sizeof(kMagic));
  put_u32(header, kCheckpointVersion);
  put_u64(header, json.size());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(json.data(), static_cast<std::streamsize>(json.size()));
  static_assert(sizeof(double) == 8);
  for (const NamedTensor& e : entries) {
    auto v = e.tensor.values();
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!f) throw IoError("failed writing checkpoint: " + path);
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const NamedTensor& e : entries)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 12) throw DataError("checkpoint truncated: " + path);
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file: " + path);
  const uint32_t version = get_u32(bytes.data() + 8);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version mismatch: file has " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointVersion));
  const uint64_t json_len = get_u64(bytes.data() + 12);
  const size_t payload_start = sizeof(kMagic) + 12 + json_len;
  if (bytes.size() < payload_start) throw DataError("checkpoint truncated: " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(20, json_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint manifest unreadable: " + std::string(e.what()));
  }

  Checkpoint out;
  if (manifest.contains("meta")) {
    const auto& m = manifest["meta"];
    for (auto it = m.begin(); it != m.end(); ++it) {
      const std::string key = it.key();
      const std::string val = it.value().get<std::string>();
      if (key == "network")
        out.meta.network = val;
      else if (key == "variant")
        out.meta.variant = val;
      else if (key == "phase")
        out.meta.phase = val;
      else
        out.meta.extra[key] = val;
    }
  }
  for (const auto& t : manifest["tensors"]) {
    const std::string name = t["name"].get<std::string>();
    const Shape shape = t["shape"].get<Shape>();
    const uint64_t offset = t["offset"].get<uint64_t>();
    const uint64_t n = static_cast<uint64_t>(shape_numel(shape));
    const size_t begin = payload_start + offset;
    if (begin + n * sizeof(double) > bytes.size())
      throw DataError("checkpoint truncated: payload for '" + name + "' incomplete");
    std::vector<double> values(n);
    std::memcpy(values.data(), bytes.data() + begin, n * sizeof(double));
    out.entries.push_back({name, Tensor(shape, std::move(values))});
  }
  return out;
}

uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open file for hashing: " + path);
  uint64_t h = 1469598103934665603ULL;
  char buf[4096];
  while (f) {
    f.read(buf, sizeof(buf));
    const std::streamsize got = f.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<uint8_t>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::vector<NamedTensor> network_state(Network& net) {
  std::vector<NamedTensor> out;
  for (auto& [name, t] : net.named_parameters()) out.push_back({"param." + name, t});
  for (auto& [name, t] : net.named_buffers()) out.push_back({"buffer." + name, t});
  return out;
}

void load_network_state(Network& net, const Checkpoint& ckpt, bool allow_missing) {
  for (NamedTensor& slot : network_state(net)) {
    const Tensor* src = ckpt.find(slot.name);
    if (!src) {
      if (allow_missing) continue;
      throw DataError("checkpoint missing tensor '" + slot.name + "'");
    }
    if (src->shape() != slot.tensor.shape())
      throw DataError("shape mismatch for '" + slot.name + "': checkpoint " +
                      shape_str(src->shape()) + ", model " + shape_str(slot.tensor.shape()));
    auto dst = slot.tensor.values();
    auto sv = src->values();
    std::copy(sv.begin(), sv.end(), dst.begin());
  }
}

}  // namespace adaprune
