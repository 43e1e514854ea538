#include "adaprune/analysis.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace adaprune {

namespace {
constexpr char kLogMagic[8] = {'A', 'D', 'P', 'R', 'L', 'O', 'G', '\n'};
constexpr uint32_t kLogVersion = 1;

template <typename T>
void put_le(std::ofstream& f, T v) {
  char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  f.write(buf, sizeof(T));
}

template <typename T>
T get_le(std::ifstream& f, const std::string& path) {
  char buf[sizeof(T)];
  f.read(buf, sizeof(T));
  if (!f) throw DataError("decision log truncated: " + path);
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<uint8_t>(buf[i])) << (8 * i);
  return v;
}
}  // namespace

DecisionLog::DecisionLog(std::vector<int> layer_channels, std::string split,
                         uint64_t checkpoint_hash)
    : layer_channels_(std::move(layer_channels)),
      split_(std::move(split)),
      checkpoint_hash_(checkpoint_hash) {
  bits_.resize(layer_channels_.size());
}

void DecisionLog::append_batch(const ForwardTrace& trace) {
  std::vector<const ConvTrace*> gated;
  for (const ConvTrace& ct : trace.convs)
    if (ct.gated_index >= 0) gated.push_back(&ct);
  if (static_cast<int>(gated.size()) != num_layers())
    throw UsageError("decision log: trace has " + std::to_string(gated.size()) +
                     " gated layers, log expects " + std::to_string(num_layers()));
  for (const ConvTrace* ct : gated) {
    const int l = ct->gated_index;
    const size_t c = static_cast<size_t>(layer_channels_.at(static_cast<size_t>(l)));
    if (ct->decisions.size() != static_cast<size_t>(trace.batch) * c)
      throw UsageError("decision log: layer " + std::to_string(l) + " width mismatch");
    bits_[static_cast<size_t>(l)].insert(bits_[static_cast<size_t>(l)].end(),
                                         ct->decisions.begin(), ct->decisions.end());
  }
  num_samples_ += trace.batch;
}

bool DecisionLog::decision(int layer, int sample, int channel) const {
  const int c = layer_channels_.at(static_cast<size_t>(layer));
  return bits_.at(static_cast<size_t>(layer))
             .at(static_cast<size_t>(sample) * c + static_cast<size_t>(channel)) != 0;
}

int DecisionLog::active_count(int layer, int sample) const {
  const int c = layer_channels_.at(static_cast<size_t>(layer));
  const auto& row = bits_.at(static_cast<size_t>(layer));
  int n = 0;
  for (int ch = 0; ch < c; ++ch)
    n += row[static_cast<size_t>(sample) * c + static_cast<size_t>(ch)] ? 1 : 0;
  return n;
}

void DecisionLog::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open decision log for writing: " + path);
  f.write(kLogMagic, sizeof(kLogMagic));
  put_le<uint32_t>(f, kLogVersion);
  put_le<uint64_t>(f, checkpoint_hash_);
  put_le<uint32_t>(f, static_cast<uint32_t>(split_.size()));
  f.write(split_.data(), static_cast<std::streamsize>(split_.size()));
  put_le<uint32_t>(f, static_cast<uint32_t>(layer_channels_.size()));
  for (int c : layer_channels_) put_le<uint32_t>(f, static_cast<uint32_t>(c));
  put_le<uint64_t>(f, static_cast<uint64_t>(num_samples_));
  for (size_t l = 0; l < bits_.size(); ++l) {
    const auto& row = bits_[l];
    std::vector<uint8_t> packed((row.size() + 7) / 8, 0);
    for (size_t i = 0; i < row.size(); ++i)
      if (row[i]) packed[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
    f.write(reinterpret_cast<const char*>(packed.data()),
            static_cast<std::streamsize>(packed.size()));
  }
  if (!f) throw IoError("failed writing decision log: " + path);
}

DecisionLog DecisionLog::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open decision log: " + path);
  char magic[sizeof(kLogMagic)];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kLogMagic, sizeof(kLogMagic)) != 0)
    throw DataError("not a decision log: " + path);
  const uint32_t version = get_le<uint32_t>(f, path);
  if (version != kLogVersion)
    throw DataError("decision log version mismatch: file has " + std::to_string(version));
  DecisionLog log;
  log.checkpoint_hash_ = get_le<uint64_t>(f, path);
  const uint32_t split_len = get_le<uint32_t>(f, path);
  log.split_.resize(split_len);
  f.read(log.split_.data(), split_len);
  if (!f) throw DataError("decision log truncated: " + path);
  const uint32_t layers = get_le<uint32_t>(f, path);
  for (uint32_t i = 0; i < layers; ++i)
    log.layer_channels_.push_back(static_cast<int>(get_le<uint32_t>(f, path)));
  log.num_samples_ = static_cast<int>(get_le<uint64_t>(f, path));
  log.bits_.resize(layers);
  for (uint32_t l = 0; l < layers; ++l) {
    const size_t n =
        static_cast<size_t>(log.num_samples_) * static_cast<size_t>(log.layer_channels_[l]);
    std::vector<uint8_t> packed((n + 7) / 8);
    f.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
    if (!f) throw DataError("decision log truncated: " + path);
    auto& row = log.bits_[l];
    row.resize(n);
    for (size_t i = 0; i < n; ++i) row[i] = (packed[i / 8] >> (i % 8)) & 1u;
  }
  return log;
}

void DecisionLog::export_csv(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open csv for writing: " + path);
  f << "sample_id,layer_id,decisions\n";
  for (int s = 0; s < num_samples_; ++s)
    for (int l = 0; l < num_layers(); ++l) {
      f << s << ',' << l << ',';
      const int c = layer_channels_[static_cast<size_t>(l)];
      for (int ch = 0; ch < c; ++ch) f << (decision(l, s, ch) ? '1' : '0');
      f << '\n';
    }
}

const char* channel_category_name(ChannelCategory c) {
  switch (c) {
    case ChannelCategory::NeverPruned: return "never_pruned";
    case ChannelCategory::SampleDependent: return "sample_dependent";
    case ChannelCategory::AlwaysPruned: return "always_pruned";
  }
  return "?";
}

AnalysisResult analyze_decisions(const DecisionLog& log) {
  if (log.num_layers() == 0) throw DataError("decision log covers no layers");
  if (log.num_samples() == 0) throw DataError("decision log covers no samples");
  AnalysisResult result;
  result.num_samples = log.num_samples();
  for (int l = 0; l < log.num_layers(); ++l) {
    const int c = log.layer_channels()[static_cast<size_t>(l)];
    LayerAnalysis la;
    la.categories.resize(static_cast<size_t>(c));
    std::vector<int> active(static_cast<size_t>(c), 0);
    la.active_per_sample.resize(static_cast<size_t>(log.num_samples()), 0);
    for (int s = 0; s < log.num_samples(); ++s) {
      int row_active = 0;
      for (int ch = 0; ch < c; ++ch) {
        if (log.decision(l, s, ch)) {
          ++active[static_cast<size_t>(ch)];
          ++row_active;
        }
      }
      la.active_per_sample[static_cast<size_t>(s)] = row_active;
    }
    for (int ch = 0; ch < c; ++ch) {
      ChannelCategory cat;
      if (active[static_cast<size_t>(ch)] == log.num_samples())
        cat = ChannelCategory::NeverPruned;
      else if (active[static_cast<size_t>(ch)] == 0)
        cat = ChannelCategory::AlwaysPruned;
      else
        cat = ChannelCategory::SampleDependent;
      la.categories[static_cast<size_t>(ch)] = cat;
      switch (cat) {
        case ChannelCategory::NeverPruned: ++la.never_pruned; break;
        case ChannelCategory::SampleDependent: ++la.sample_dependent; break;
        case ChannelCategory::AlwaysPruned: ++la.always_pruned; break;
      }
    }
    result.layers.push_back(std::move(la));
  }
  return result;
}

void write_analysis_csv(const AnalysisResult& result, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream f(fs::path(out_dir) / "categories.csv", std::ios::trunc);
    if (!f) throw IoError("cannot write categories.csv in " + out_dir);
    f << "layer_id,channel,category\n";
    for (size_t l = 0; l < result.layers.size(); ++l)
      for (size_t ch = 0; ch < result.layers[l].categories.size(); ++ch)
        f << l << ',' << ch << ',' << channel_category_name(result.layers[l].categories[ch])
          << '\n';
  }
  {
    std::ofstream f(fs::path(out_dir) / "category_summary.csv", std::ios::trunc);
    if (!f) throw IoError("cannot write category_summary.csv in " + out_dir);
    f << "layer_id,never_pruned,sample_dependent,always_pruned\n";
    for (size_t l = 0; l < result.layers.size(); ++l) {
      const LayerAnalysis& la = result.layers[l];
      f << l << ',' << la.never_pruned << ',' << la.sample_dependent << ',' << la.always_pruned
        << '\n';
    }
  }
  {
    std::ofstream f(fs::path(out_dir) / "active_counts.csv", std::ios::trunc);
    if (!f) throw IoError("cannot write active_counts.csv in " + out_dir);
    f << "layer_id,sample_id,active_channels\n";
    for (size_t l = 0; l < result.layers.size(); ++l)
      for (size_t s = 0; s < result.layers[l].active_per_sample.size(); ++s)
        f << l << ',' << s << ',' << result.layers[l].active_per_sample[s] << '\n';
  }
}

}  // namespace adaprune
