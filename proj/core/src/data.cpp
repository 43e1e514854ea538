#include "adaprune/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "adaprune/rng.hpp"

namespace adaprune {

namespace fs = std::filesystem;

Normalization cifar_normalization() {
  return Normalization{{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
}

Normalization synthetic_normalization() {
  return Normalization{{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}};
}

static int record_size(CifarKind kind) {
  return kind == CifarKind::Cifar10 ? 1 + kImagePixels : 2 + kImagePixels;
}

std::vector<ImageRecord> parse_cifar_bytes(std::span<const uint8_t> bytes, CifarKind kind,
                                           const std::string& source_name) {
  const size_t rec = static_cast<size_t>(record_size(kind));
  if (bytes.size() % rec != 0)
    throw DataError("corrupt dataset file " + source_name + ": " + std::to_string(bytes.size()) +
                    " bytes is not a multiple of the record size " + std::to_string(rec));
  std::vector<ImageRecord> out;
  out.reserve(bytes.size() / rec);
  for (size_t off = 0; off < bytes.size(); off += rec) {
    ImageRecord r;
    if (kind == CifarKind::Cifar10) {
      r.label = bytes[off];
      r.pixels.assign(bytes.begin() + off + 1, bytes.begin() + off + rec);
    } else {
      r.coarse_label = bytes[off];
      r.label = bytes[off + 1];  // fine label drives training
      r.pixels.assign(bytes.begin() + off + 2, bytes.begin() + off + rec);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<uint8_t> serialize_records(std::span<const ImageRecord> records, CifarKind kind) {
  std::vector<uint8_t> out;
  out.reserve(records.size() * static_cast<size_t>(record_size(kind)));
  for (const ImageRecord& r : records) {
    if (r.pixels.size() != kImagePixels)
      throw DataError("record has " + std::to_string(r.pixels.size()) + " pixel bytes");
    if (kind == CifarKind::Cifar100) out.push_back(static_cast<uint8_t>(r.coarse_label));
    out.push_back(static_cast<uint8_t>(r.label));
    out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  }
  return out;
}

static std::vector<uint8_t> read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
}

std::pair<DatasetSplit, DatasetSplit> load_cifar(const std::string& dir, CifarKind kind) {
  std::vector<std::string> train_files, test_files;
  if (kind == CifarKind::Cifar10) {
    for (int i = 1; i <= 5; ++i) train_files.push_back("data_batch_" + std::to_string(i) + ".bin");
    test_files = {"test_batch.bin"};
  } else {
    train_files = {"train.bin"};
    test_files = {"test.bin"};
  }
  std::string missing;
  for (const auto& lists : {train_files, test_files})
    for (const std::string& name : lists)
      if (!fs::exists(fs::path(dir) / name)) missing += (missing.empty() ? "" : ", ") + name;
  if (!missing.empty())
    throw IoError("dataset files not found in " + dir + ": expected " + missing);

  DatasetSplit train{.records = {}, .split = "train"};
  for (const std::string& name : train_files) {
    auto bytes = read_file(fs::path(dir) / name);
    auto recs = parse_cifar_bytes(bytes, kind, name);
    train.records.insert(train.records.end(), std::make_move_iterator(recs.begin()),
                         std::make_move_iterator(recs.end()));
  }
  DatasetSplit test{.records = {}, .split = "test"};
  for (const std::string& name : test_files) {
    auto bytes = read_file(fs::path(dir) / name);
    auto recs = parse_cifar_bytes(bytes, kind, name);
    test.records.insert(test.records.end(), std::make_move_iterator(recs.begin()),
                        std::make_move_iterator(recs.end()));
  }
  return {std::move(train), std::move(test)};
}

void flip_horizontal(std::span<uint8_t> pixels) {
  if (pixels.size() != kImagePixels) throw DataError("flip: bad pixel buffer size");
  for (int c = 0; c < kImageChannels; ++c)
    for (int y = 0; y < kImageSide; ++y) {
      uint8_t* row = pixels.data() + (c * kImageSide + y) * kImageSide;
      std::reverse(row, row + kImageSide);
    }
}

Tensor normalize_augment(const ImageRecord& rec, bool train_augment, const Normalization& norm,
                         std::mt19937_64& rng) {
  if (rec.pixels.size() != kImagePixels)
    throw DataError("image record has " + std::to_string(rec.pixels.size()) + " pixel bytes");
  std::vector<uint8_t> px(rec.pixels.begin(), rec.pixels.end());
  if (train_augment) {
    constexpr int pad = 4;
    std::uniform_int_distribution<int> off(0, 2 * pad);
    const int dy = off(rng), dx = off(rng);
    std::vector<uint8_t> cropped(kImagePixels, 0);
    for (int c = 0; c < kImageChannels; ++c)
      for (int y = 0; y < kImageSide; ++y) {
        const int sy = y + dy - pad;
        if (sy < 0 || sy >= kImageSide) continue;
        for (int x = 0; x < kImageSide; ++x) {
          const int sx = x + dx - pad;
          if (sx < 0 || sx >= kImageSide) continue;
          cropped[(c * kImageSide + y) * kImageSide + x] =
              px[(c * kImageSide + sy) * kImageSide + sx];
        }
      }
    px = std::move(cropped);
    std::bernoulli_distribution coin(0.5);
    if (coin(rng)) flip_horizontal(px);
  }
  Tensor out(Shape{kImageChannels, kImageSide, kImageSide});
  auto v = out.values();
  for (int c = 0; c < kImageChannels; ++c) {
    const double mean = norm.mean[static_cast<size_t>(c)];
    const double inv = 1.0 / norm.stddev[static_cast<size_t>(c)];
    const int base = c * kImageSide * kImageSide;
    for (int i = 0; i < kImageSide * kImageSide; ++i)
      v[base + i] = (px[base + i] / 255.0 - mean) * inv;
  }
  return out;
}

namespace {

// Class pattern: a gaussian bump at a class-cell of a 3x3 grid with a
// per-channel sign pattern from the class index bits, plus a class-specific
// global channel tint so even whole-image statistics carry label signal.
struct ClassPattern {
  double cx, cy;
  std::array<int, 3> sign;
  std::array<int, 3> tint;
};

ClassPattern class_pattern(int cls) {
  ClassPattern p;
  p.cx = 6.0 + 10.0 * (cls % 3);
  p.cy = 6.0 + 10.0 * ((cls / 3) % 3);
  const uint64_t h = mix64(static_cast<uint64_t>(cls) + 0x51);
  for (int ch = 0; ch < 3; ++ch) {
    p.sign[static_cast<size_t>(ch)] = ((cls >> ch) & 1) ? 1 : -1;
    p.tint[static_cast<size_t>(ch)] = ((h >> ch) & 1) ? 1 : -1;
  }
  return p;
}

ImageRecord synth_record(int cls, std::mt19937_64& rng) {
  const ClassPattern p = class_pattern(cls);
  constexpr double kAmplitude = 85.0;
  constexpr double kTint = 20.0;
  constexpr double kSigma = 4.5;
  constexpr double kNoise = 18.0;
  std::normal_distribution<double> noise(0.0, kNoise);
  ImageRecord r;
  r.label = cls;
  r.pixels.resize(kImagePixels);
  for (int c = 0; c < kImageChannels; ++c)
    for (int y = 0; y < kImageSide; ++y)
      for (int x = 0; x < kImageSide; ++x) {
        const double d2 = (x - p.cx) * (x - p.cx) + (y - p.cy) * (y - p.cy);
        const double bump = kAmplitude * p.sign[static_cast<size_t>(c)] *
                            std::exp(-d2 / (2.0 * kSigma * kSigma));
        const double v = 128.0 + kTint * p.tint[static_cast<size_t>(c)] + bump + noise(rng);
        r.pixels[(c * kImageSide + y) * kImageSide + x] =
            static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  return r;
}

DatasetSplit synth_split(int n, int classes, uint64_t seed, const std::string& name) {
  DatasetSplit split{.records = {}, .split = name};
  std::mt19937_64 rng(seed);
  split.records.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) split.records.push_back(synth_record(i % classes, rng));
  return split;
}

}  // namespace

std::pair<DatasetSplit, DatasetSplit> make_synthetic(int n_train, int n_test, int classes,
                                                     uint64_t seed) {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (classes > 27) throw ConfigError("synthetic dataset supports at most 27 classes");
  if (n_train < classes || n_test < 1)
    throw ConfigError("synthetic dataset needs n_train >= classes and n_test >= 1");
  return {synth_split(n_train, classes, derive_seed(seed, 11), "train"),
          synth_split(n_test, classes, derive_seed(seed, 12), "test")};
}

std::pair<DatasetSplit, DatasetSplit> synth_dataset(int n, int classes, uint64_t seed) {
  return make_synthetic(n, std::max(classes, n / 5), classes, seed);
}

Tensor batch_images(const DatasetSplit& split, std::span<const int> indices, bool train_augment,
                    const Normalization& norm, std::mt19937_64& rng) {
  const int n = static_cast<int>(indices.size());
  if (n < 1) throw UsageError("batch_images: empty batch");
  Tensor out(Shape{n, kImageChannels, kImageSide, kImageSide});
  auto ov = out.values();
  for (int i = 0; i < n; ++i) {
    const int idx = indices[static_cast<size_t>(i)];
    if (idx < 0 || idx >= static_cast<int>(split.records.size()))
      throw UsageError("batch_images: index out of range");
    Tensor img = normalize_augment(split.records[static_cast<size_t>(idx)], train_augment, norm,
                                   rng);
    auto iv = img.values();
    std::copy(iv.begin(), iv.end(), ov.begin() + static_cast<long>(i) * kImagePixels);
  }
  return out;
}

std::vector<int> batch_labels(const DatasetSplit& split, std::span<const int> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int idx : indices) out.push_back(split.records.at(static_cast<size_t>(idx)).label);
  return out;
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, std::mt19937_64& rng) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

}  // namespace adaprune
