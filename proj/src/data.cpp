#include "unlearn/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "unlearn/errors.hpp"

namespace unlearn {

namespace {

std::size_t image_numel(const Dataset& d) { return d.images.size() / std::max<std::size_t>(d.size(), 1); }

Shape with_count(const Shape& shape, std::size_t n) {
  Shape s = shape;
  s[0] = n;
  return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& what) {
  if (bytes.size() < offset + 4) throw FormatError(what + ": header truncated");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& indices, std::string new_name) const {
  Dataset out;
  out.name = std::move(new_name);
  out.class_count = class_count;
  const std::size_t per = image_numel(*this);
  std::vector<float> pixels(indices.size() * per);
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw IndexError("subset index " + std::to_string(src) + " out of range for " + name);
    std::memcpy(pixels.data() + i * per, images.ptr() + src * per, per * sizeof(float));
    out.labels.push_back(labels[src]);
  }
  if (!indices.empty()) out.images = Tensor(with_count(images.shape(), indices.size()), std::move(pixels));
  return out;
}

void Dataset::validate() const {
  if (images.rank() != 4) throw IntegrityError(name + ": images must be [N,C,H,W], got " + shape_to_string(images.shape()));
  if (images.dim(0) != labels.size()) {
    throw IntegrityError(name + ": " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) +
                         " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
      throw IntegrityError(name + ": label " + std::to_string(y) + " outside [0, " + std::to_string(class_count) + ")");
    }
  }
}

Dataset gen_synthetic_blobs(std::uint64_t seed, std::size_t class_count, std::size_t n_per_class, std::size_t channels,
                            std::size_t height, std::size_t width, double spread, std::uint64_t stream) {
  if (class_count < 2) throw ConfigError("synthetic blobs need at least two classes");
  if (spread < 0.0) throw ConfigError("synthetic blob spread must be non-negative");
  if (n_per_class == 0 || channels == 0 || height == 0 || width == 0) {
    throw ConfigError("synthetic blob dimensions must be positive");
  }
  const std::size_t per = channels * height * width;
  std::mt19937_64 mean_rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> means(class_count * per);
  for (auto& m : means) m = uni(mean_rng);

  std::seed_seq noise_seed{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                           static_cast<std::uint32_t>(stream + 1), 0x5eedu};
  std::mt19937_64 noise_rng(noise_seed);
  std::normal_distribution<double> noise(0.0, spread > 0.0 ? spread : 1.0);

  const std::size_t n = class_count * n_per_class;
  Dataset d;
  d.name = "synthetic-blobs";
  d.class_count = class_count;
  d.labels.resize(n);
  std::vector<float> pixels(n * per);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % class_count;
    d.labels[i] = static_cast<int>(k);
    for (std::size_t j = 0; j < per; ++j) {
      double v = means[k * per + j];
      if (spread > 0.0) v += noise(noise_rng);
      pixels[i * per + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  d.images = Tensor({n, channels, height, width}, std::move(pixels));
  return d;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  const std::uint32_t img_magic = read_be32(img, 0, images_path.string());
  if (img_magic != 0x00000803u) throw FormatError(images_path.string() + ": not an IDX image file (bad magic)");
  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path.string());
  if (lab_magic != 0x00000801u) throw FormatError(labels_path.string() + ": not an IDX label file (bad magic)");

  const std::size_t n = read_be32(img, 4, images_path.string());
  const std::size_t rows = read_be32(img, 8, images_path.string());
  const std::size_t cols = read_be32(img, 12, images_path.string());
  const std::size_t n_labels = read_be32(lab, 4, labels_path.string());
  if (n != n_labels) {
    throw IntegrityError("IDX count mismatch: " + std::to_string(n) + " images, " + std::to_string(n_labels) + " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(images_path.string() + ": empty IDX image file");
  const std::size_t per = rows * cols;
  if (img.size() != 16 + n * per) {
    throw IntegrityError(images_path.string() + ": expected " + std::to_string(16 + n * per) + " bytes, found " +
                         std::to_string(img.size()));
  }
  if (lab.size() != 8 + n) {
    throw IntegrityError(labels_path.string() + ": expected " + std::to_string(8 + n) + " bytes, found " +
                         std::to_string(lab.size()));
  }
  Dataset d;
  d.name = "idx:" + images_path.filename().string();
  std::vector<float> pixels(n * per);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(img[16 + i]) / 255.0f;
  d.images = Tensor({n, 1, rows, cols}, std::move(pixels));
  d.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.class_count = std::max<std::size_t>(static_cast<std::size_t>(max_label) + 1, 2);
  return d;
}

Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  constexpr std::size_t kRecord = 1 + kPixels;
  if (paths.empty()) throw ConfigError("no CIFAR-10 files given");
  std::vector<float> pixels;
  Dataset d;
  d.name = "cifar10";
  d.class_count = 10;
  for (const auto& path : paths) {
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kRecord != 0) {
      throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
    }
    for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
      if (bytes[off] >= 10) {
        throw IntegrityError(path.string() + ": label byte " + std::to_string(bytes[off]) + " at record " +
                             std::to_string(off / kRecord));
      }
      d.labels.push_back(bytes[off]);
      for (std::size_t j = 0; j < kPixels; ++j) pixels.push_back(static_cast<float>(bytes[off + 1 + j]) / 255.0f);
    }
  }
  d.images = Tensor({d.labels.size(), 3, 32, 32}, std::move(pixels));
  return d;
}

ClassSplit split_by_class(const Dataset& train, const Dataset& test, int forget_class) {
  if (forget_class < 0 || static_cast<std::size_t>(forget_class) >= train.class_count) {
    throw ConfigError("forget class " + std::to_string(forget_class) + " outside [0, " +
                      std::to_string(train.class_count) + ")");
  }
  auto partition = [forget_class](const Dataset& d, std::vector<std::size_t>& keep, std::vector<std::size_t>& drop) {
    for (std::size_t i = 0; i < d.size(); ++i) (d.labels[i] == forget_class ? drop : keep).push_back(i);
  };
  std::vector<std::size_t> tr_keep, tr_drop, te_keep, te_drop;
  partition(train, tr_keep, tr_drop);
  partition(test, te_keep, te_drop);
  if (tr_drop.empty()) throw ConfigError("forget class " + std::to_string(forget_class) + " is absent from " + train.name);
  ClassSplit s;
  s.forget_class = forget_class;
  s.retain = train.subset(tr_keep, train.name + "/retain");
  s.forget = train.subset(tr_drop, train.name + "/forget");
  s.test_retain = test.subset(te_keep, test.name + "/test-retain");
  s.test_forget = test.subset(te_drop, test.name + "/test-forget");
  return s;
}

std::pair<Dataset, Dataset> balanced_mia_sample(const Dataset& retain, const Dataset& test_retain,
                                                std::size_t n_per_side, std::uint64_t seed) {
  if (n_per_side == 0) throw ConfigError("MIA sample size must be positive");
  if (n_per_side > retain.size() || n_per_side > test_retain.size()) {
    throw ConfigError("MIA sample of " + std::to_string(n_per_side) + " per side exceeds available data (" +
                      std::to_string(retain.size()) + " members, " + std::to_string(test_retain.size()) +
                      " non-members)");
  }
  auto draw = [n_per_side](std::size_t n, std::uint64_t s, std::uint64_t side) {
    auto perm = epoch_permutation(n, s, side);
    perm.resize(n_per_side);
    return perm;
  };
  return {retain.subset(draw(retain.size(), seed, 0x4d454dULL), "mia-members"),
          test_retain.subset(draw(test_retain.size(), seed, 0x4e4f4eULL), "mia-nonmembers")};
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  // Explicit Fisher-Yates so the order does not depend on std::shuffle internals.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

BatchIterator::BatchIterator(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch)
    : dataset_(&dataset), batch_size_(batch_size), order_(epoch_permutation(dataset.size(), seed, epoch)) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
}

std::size_t BatchIterator::batch_count() const noexcept { return (order_.size() + batch_size_ - 1) / batch_size_; }

bool BatchIterator::next(Batch& out) {
  if (pos_ >= order_.size()) return false;
  const std::size_t end = std::min(pos_ + batch_size_, order_.size());
  const std::size_t per = image_numel(*dataset_);
  const std::size_t n = end - pos_;
  std::vector<float> pixels(n * per);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = order_[pos_ + i];
    std::memcpy(pixels.data() + i * per, dataset_->images.ptr() + src * per, per * sizeof(float));
    out.labels[i] = dataset_->labels[src];
  }
  out.images = Tensor(with_count(dataset_->images.shape(), n), std::move(pixels));
  pos_ = end;
  return true;
}

BatchIterator batch_iter(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  return BatchIterator(dataset, batch_size, seed, epoch);
}

Tensor slice_images(const Dataset& dataset, std::size_t begin, std::size_t end) {
  if (begin >= end || end > dataset.size()) throw IndexError("image slice out of range");
  const std::size_t per = image_numel(dataset);
  std::vector<float> pixels(dataset.images.ptr() + begin * per, dataset.images.ptr() + end * per);
  return Tensor(with_count(dataset.images.shape(), end - begin), std::move(pixels));
}

}  // namespace unlearn
