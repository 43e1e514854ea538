#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaprune/backbones.hpp"

namespace adaprune {

/// Per-sample, per-layer binary pruning decisions collected over an
/// evaluation split. In memory decisions are unpacked bytes; on disk they
/// are bit-packed (magic + version + checkpoint hash + split + layer
/// widths + sample count + one bitstream per layer).
class DecisionLog {
 public:
  DecisionLog() = default;
  DecisionLog(std::vector<int> layer_channels, std::string split, uint64_t checkpoint_hash);

  void append_batch(const ForwardTrace& trace);

  int num_layers() const { return static_cast<int>(layer_channels_.size()); }
  int num_samples() const { return num_samples_; }
  const std::vector<int>& layer_channels() const { return layer_channels_; }
  const std::string& split() const { return split_; }
  uint64_t checkpoint_hash() const { return checkpoint_hash_; }

  bool decision(int layer, int sample, int channel) const;
  /// Active channels of one (layer, sample) row.
  int active_count(int layer, int sample) const;

  void save(const std::string& path) const;
  static DecisionLog load(const std::string& path);
  void export_csv(const std::string& path) const;

 private:
  std::vector<int> layer_channels_;
  std::string split_;
  uint64_t checkpoint_hash_ = 0;
  int num_samples_ = 0;
  std::vector<std::vector<uint8_t>> bits_;  // [layer][sample*C + c], unpacked
};

enum class ChannelCategory { NeverPruned, SampleDependent, AlwaysPruned };
const char* channel_category_name(ChannelCategory c);

struct LayerAnalysis {
  std::vector<ChannelCategory> categories;  // per channel
  int never_pruned = 0;
  int sample_dependent = 0;
  int always_pruned = 0;
  std::vector<int> active_per_sample;
};

struct AnalysisResult {
  std::vector<LayerAnalysis> layers;
  int num_samples = 0;
};

/// DataError when the log is empty or does not cover every layer.
AnalysisResult analyze_decisions(const DecisionLog& log);

/// Writes categories.csv (layer,channel,category), category_summary.csv
/// (per-layer counts) and active_counts.csv (layer,sample,active channels)
/// into out_dir.
void write_analysis_csv(const AnalysisResult& result, const std::string& out_dir);

}  // namespace adaprune
