#pragma once

// In-memory image classification datasets and their loaders.

#include "scaat/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scaat {

enum class DatasetErrorKind { io, bad_magic, truncated, label_out_of_range, invalid_spec };

std::string to_string(DatasetErrorKind kind);

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  DatasetErrorKind kind() const { return kind_; }

 private:
  DatasetErrorKind kind_;
};

struct Dataset {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t num_classes = 0;
  /// (N,C,H,W) row-major, every value in [0,1].
  std::vector<float> images;
  std::vector<int> labels;
  std::string split = "train";
  std::string provenance;

  // Ground truth recorded by the synthetic generator; empty otherwise.
  std::vector<double> irrelevant_ratio;
  /// Per sample, H*W flags marking pixels that carry class signal.
  std::vector<std::vector<std::uint8_t>> relevant;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return channels * height * width; }
  Shape sample_shape() const { return {channels, height, width}; }

  Tensor<float> sample(std::size_t i) const;
  Tensor<float> batch(std::span<const std::size_t> indices) const;
  std::vector<int> labels_of(std::span<const std::size_t> indices) const;

  /// First `n` samples (all when n >= size()).
  Dataset head(std::size_t n) const;

  /// Throws DatasetError on any broken invariant.
  void validate() const;
};

enum class DatasetFormat { idx, cifar_binary, synthetic };

std::string to_string(DatasetFormat f);
DatasetFormat dataset_format_from_string(const std::string& name);

/// IDX image + label pair (MNIST layout: magic 0x803 / 0x801).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t num_classes = 10);

/// CIFAR-10 binary batches. `path` is one .bin file or a directory holding
/// data_batch_{1..5}.bin and test_batch.bin; `split` picks which. At most
/// `limit` records are kept, in file order.
Dataset load_cifar(const std::filesystem::path& path, const std::string& split,
                   std::size_t limit = 0);

/// Parameters of the half-informative generator. Each sample holds one
/// square class-bearing object on a noise background; the object covers
/// 1 - ratio of the image, with ratio drawn from `ratios`.
struct SyntheticSpec {
  std::size_t n = 2000;
  std::size_t size = 16;
  std::size_t classes = 2;
  std::vector<double> ratios{0.25, 0.75};
  std::uint64_t seed = 0;
  std::string split = "train";
  /// Background noise amplitude.
  double noise = 0.15;
  /// Intensity gap between the first and last class level for an object
  /// covering half the image; scaled by 0.5 / covered fraction otherwise.
  double contrast = 0.04;
};

/// Parses "half-informative:n=2000,size=16,classes=2,ratios=0.25/0.75,seed=1,split=train".
/// Unset keys keep their defaults.
SyntheticSpec parse_synthetic_spec(const std::string& text);
std::string format_synthetic_spec(const SyntheticSpec& spec);
Dataset make_half_informative(const SyntheticSpec& spec);

/// Dispatch on format. For idx the path names the image file; the label
/// file name swaps "images" for "labels" and "idx3" for "idx1", or appends
/// "-labels" when neither occurs. For synthetic the path is the spec string.
Dataset load_dataset(const std::string& path, DatasetFormat format, const std::string& split,
                     std::size_t limit = 0);

}  // namespace scaat
