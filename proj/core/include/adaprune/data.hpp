#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adaprune/tensor.hpp"

namespace adaprune {

inline constexpr int kImageSide = 32;
inline constexpr int kImageChannels = 3;
inline constexpr int kImagePixels = kImageChannels * kImageSide * kImageSide;

enum class CifarKind { Cifar10, Cifar100 };

/// One example in raw byte space: plane-major RGB pixels in [0,255].
/// coarse_label is only meaningful for CIFAR-100 records (-1 otherwise) and
/// is kept so parsed files re-serialize bit-exactly.
struct ImageRecord {
  int label = 0;
  int coarse_label = -1;
  std::vector<uint8_t> pixels;  // kImagePixels bytes
};

struct DatasetSplit {
  std::vector<ImageRecord> records;
  std::string split;  // "train" | "test"
  uint64_t shuffle_seed = 0;
};

/// Per-channel standardisation constants on the [0,1] pixel scale.
struct Normalization {
  std::array<double, 3> mean;
  std::array<double, 3> stddev;
};

Normalization cifar_normalization();
Normalization synthetic_normalization();

/// Record layout: CIFAR-10 = 1 label byte + 3072 pixel bytes (R,G,B planes,
/// row-major); CIFAR-100 = 1 coarse + 1 fine label byte + 3072 pixel bytes.
std::vector<ImageRecord> parse_cifar_bytes(std::span<const uint8_t> bytes, CifarKind kind,
                                           const std::string& source_name);
std::vector<uint8_t> serialize_records(std::span<const ImageRecord> records, CifarKind kind);

/// Standard binary batch files: data_batch_1..5.bin + test_batch.bin for
/// CIFAR-10, train.bin + test.bin for CIFAR-100. IoError lists the missing
/// file names; DataError flags sizes that are not a whole number of records.
std::pair<DatasetSplit, DatasetSplit> load_cifar(const std::string& dir, CifarKind kind);

/// Byte-space horizontal mirror (test hook for the augmentation path).
void flip_horizontal(std::span<uint8_t> pixels);

/// [0,1]-scaled, per-channel standardised image; training mode adds a
/// pad-4 random crop and a coin-flip horizontal mirror before
/// normalisation. Evaluation mode never touches the rng.
Tensor normalize_augment(const ImageRecord& rec, bool train_augment, const Normalization& norm,
                         std::mt19937_64& rng);

/// Deterministic class-conditional blob images: each class lights a
/// class-specific spatial bump with a class-specific channel sign pattern
/// on a mid-grey background plus pixel noise, quantised to bytes. Same
/// seed, same bytes.
std::pair<DatasetSplit, DatasetSplit> make_synthetic(int n_train, int n_test, int classes,
                                                     uint64_t seed);
/// Convenience split: n training records, max(classes, n/5) test records.
std::pair<DatasetSplit, DatasetSplit> synth_dataset(int n, int classes, uint64_t seed);

/// Assembles [N,3,32,32] batches.
Tensor batch_images(const DatasetSplit& split, std::span<const int> indices, bool train_augment,
                    const Normalization& norm, std::mt19937_64& rng);
std::vector<int> batch_labels(const DatasetSplit& split, std::span<const int> indices);

/// Shuffled index batches for one epoch; trailing batches smaller than two
/// samples are dropped (batch statistics need at least two).
std::vector<std::vector<int>> epoch_batches(int n, int batch_size, std::mt19937_64& rng);

}  // namespace adaprune
