#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "unlearn/tensor.hpp"

namespace unlearn {

/// Images [N, C, H, W] in [0, 1] with labels in [0, class_count).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::string name;
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  /// Copy of the samples at `indices`, in that order.
  Dataset subset(const std::vector<std::size_t>& indices, std::string new_name) const;
  /// Throws IntegrityError unless images and labels agree and labels are in range.
  void validate() const;
};

/// Class k has a seed-derived uniform mean image; each sample is that mean
/// plus Gaussian(0, spread) noise, clamped to [0, 1]. `stream` selects an
/// independent noise sequence over the same class means, so train and test
/// sets drawn with the same seed share their class structure. Labels
/// interleave classes (sample i has label i % K).
Dataset gen_synthetic_blobs(std::uint64_t seed, std::size_t class_count, std::size_t n_per_class, std::size_t channels,
                            std::size_t height, std::size_t width, double spread, std::uint64_t stream = 0);

/// IDX image (magic 0x00000803) and label (0x00000801) files; pixels / 255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// CIFAR-10 binary batches: per record 1 label byte then R, G, B 32x32 planes.
Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths);

struct ClassSplit {
  int forget_class = 0;
  Dataset retain;       // Dr
  Dataset forget;       // Df
  Dataset test_retain;
  Dataset test_forget;
};

ClassSplit split_by_class(const Dataset& train, const Dataset& test, int forget_class);

/// Members sampled from `retain`, non-members from `test_retain`, both
/// without replacement.
std::pair<Dataset, Dataset> balanced_mia_sample(const Dataset& retain, const Dataset& test_retain,
                                                std::size_t n_per_side, std::uint64_t seed);

/// Sample order for one epoch, a pure function of (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

/// Shuffled mini-batches; the final short batch is kept.
class BatchIterator {
 public:
  BatchIterator(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

  std::size_t batch_count() const noexcept;
  bool next(Batch& out);

 private:
  const Dataset* dataset_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

BatchIterator batch_iter(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

/// Images [begin, end) of a dataset in storage order (evaluation batching).
Tensor slice_images(const Dataset& dataset, std::size_t begin, std::size_t end);

}  // namespace unlearn
