#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "support.hpp"
#include "unlearn/data.hpp"

using namespace unlearn;
using testsupport::TempDir;

namespace {

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void put_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  for (int s = 24; s >= 0; s -= 8) v.push_back(static_cast<std::uint8_t>(x >> s));
}

std::vector<std::uint8_t> idx_images(std::uint32_t magic, std::uint32_t n, std::uint32_t r, std::uint32_t c,
                                     const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> v;
  put_be32(v, magic);
  put_be32(v, n);
  put_be32(v, r);
  put_be32(v, c);
  v.insert(v.end(), pixels.begin(), pixels.end());
  return v;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t magic, const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> v;
  put_be32(v, magic);
  put_be32(v, static_cast<std::uint32_t>(labels.size()));
  v.insert(v.end(), labels.begin(), labels.end());
  return v;
}

}  // namespace

TEST_CASE("synthetic blobs") {
  const auto a = gen_synthetic_blobs(3, 10, 50, 3, 4, 4, 0.3);
  const auto b = gen_synthetic_blobs(3, 10, 50, 3, 4, 4, 0.3);
  CHECK(a.size() == 500);
  CHECK(a.images.shape() == Shape{500, 3, 4, 4});
  CHECK(bit_identical(a.images, b.images));
  CHECK(a.labels == b.labels);
  std::map<int, int> counts;
  for (int l : a.labels) ++counts[l];
  CHECK(counts.size() == 10);
  for (auto [k, c] : counts) CHECK(c == 50);
  for (float v : a.images.data()) CHECK((v >= 0.0f && v <= 1.0f));
  a.validate();

  const auto other_stream = gen_synthetic_blobs(3, 10, 50, 3, 4, 4, 0.3, 1);
  CHECK_FALSE(bit_identical(a.images, other_stream.images));

  const auto flat = gen_synthetic_blobs(5, 4, 6, 2, 3, 3, 0.0);
  const std::size_t per = 2 * 3 * 3;
  for (std::size_t i = 4; i < flat.size(); ++i) {
    const std::size_t j = i % 4;
    CHECK(std::equal(flat.images.ptr() + i * per, flat.images.ptr() + (i + 1) * per, flat.images.ptr() + j * per));
  }
  CHECK_THROWS_AS(gen_synthetic_blobs(1, 1, 5, 1, 2, 2, 0.1), ConfigError);
}

TEST_CASE("idx loader") {
  TempDir dir("idx");
  write_bytes(dir / "img", idx_images(0x803, 2, 2, 3, {0, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 17}));
  write_bytes(dir / "lab", idx_labels(0x801, {7, 2}));
  const auto d = load_idx(dir / "img", dir / "lab");
  CHECK(d.size() == 2);
  CHECK(d.images.shape() == Shape{2, 1, 2, 3});
  CHECK(d.labels == std::vector<int>{7, 2});
  CHECK(d.class_count == 8);
  CHECK(d.images[1] == doctest::Approx(0.2f));
  CHECK(d.images[5] == 1.0f);
  CHECK(d.images[11] == doctest::Approx(17.0f / 255.0f));

  write_bytes(dir / "badimg", idx_images(0x802, 2, 2, 3, std::vector<std::uint8_t>(12)));
  CHECK_THROWS_AS(load_idx(dir / "badimg", dir / "lab"), FormatError);
  write_bytes(dir / "badlab", idx_labels(0x803, {1, 2}));
  CHECK_THROWS_AS(load_idx(dir / "img", dir / "badlab"), FormatError);
  write_bytes(dir / "three", idx_labels(0x801, {1, 2, 3}));
  CHECK_THROWS_AS(load_idx(dir / "img", dir / "three"), IntegrityError);
  write_bytes(dir / "short", idx_images(0x803, 2, 2, 3, std::vector<std::uint8_t>(11)));
  CHECK_THROWS_AS(load_idx(dir / "short", dir / "lab"), IntegrityError);
  CHECK_THROWS_AS(load_idx(dir / "nope", dir / "lab"), IoError);
}

TEST_CASE("cifar10 binary loader") {
  TempDir dir("cifar");
  std::vector<std::uint8_t> bytes;
  for (std::uint8_t label : {std::uint8_t{3}, std::uint8_t{9}}) {
    bytes.push_back(label);
    for (std::size_t i = 0; i < 3072; ++i) bytes.push_back(static_cast<std::uint8_t>((i * 7 + label) % 256));
  }
  write_bytes(dir / "batch.bin", bytes);
  const auto d = load_cifar10_bin({dir / "batch.bin"});
  CHECK(d.size() == 2);
  CHECK(d.images.shape() == Shape{2, 3, 32, 32});
  CHECK(d.labels == std::vector<int>{3, 9});
  CHECK(d.class_count == 10);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t i : {std::size_t{0}, std::size_t{1023}, std::size_t{1024}, std::size_t{3071}}) {
      CHECK(d.images[r * 3072 + i] == doctest::Approx(float(bytes[r * 3073 + 1 + i]) / 255.0f));
    }
  }

  auto truncated = bytes;
  truncated.pop_back();
  write_bytes(dir / "trunc.bin", truncated);
  CHECK_THROWS_AS(load_cifar10_bin({dir / "trunc.bin"}), FormatError);

  auto bad = bytes;
  bad[3073] = 10;
  write_bytes(dir / "bad.bin", bad);
  CHECK_THROWS_AS(load_cifar10_bin({dir / "bad.bin"}), IntegrityError);

  const auto two = load_cifar10_bin({dir / "batch.bin", dir / "batch.bin"});
  CHECK(two.size() == 4);
}

TEST_CASE("split by class partitions the data") {
  const auto train = gen_synthetic_blobs(1, 10, 50, 1, 2, 2, 0.2);
  const auto test = gen_synthetic_blobs(1, 10, 5, 1, 2, 2, 0.2, 1);
  const auto s = split_by_class(train, test, 3);
  CHECK(s.forget.size() == 50);
  CHECK(s.retain.size() == 450);
  CHECK(s.test_forget.size() == 5);
  CHECK(s.test_retain.size() == 45);
  for (int l : s.forget.labels) CHECK(l == 3);
  for (int l : s.retain.labels) CHECK(l != 3);

  // Multiset of (label, first pixel) pairs is preserved.
  auto key = [](const Dataset& d) {
    std::multiset<std::pair<int, float>> m;
    for (std::size_t i = 0; i < d.size(); ++i) m.insert({d.labels[i], d.images[i * 4]});
    return m;
  };
  auto joined = key(s.retain);
  for (const auto& e : key(s.forget)) joined.insert(e);
  CHECK(joined == key(train));

  CHECK_THROWS_AS(split_by_class(train, test, 10), ConfigError);
  const auto nine = train.subset([&] {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < train.size(); ++i)
      if (train.labels[i] != 4) idx.push_back(i);
    return idx;
  }(), "no-four");
  CHECK_THROWS_AS(split_by_class(nine, test, 4), ConfigError);
}

TEST_CASE("balanced mia sample") {
  const auto a = gen_synthetic_blobs(1, 4, 50, 1, 2, 2, 0.2);
  const auto b = gen_synthetic_blobs(1, 4, 30, 1, 2, 2, 0.2, 1);
  const auto [m1, n1] = balanced_mia_sample(a, b, 100, 9);
  const auto [m2, n2] = balanced_mia_sample(a, b, 100, 9);
  CHECK(m1.size() == 100);
  CHECK(n1.size() == 100);
  CHECK(bit_identical(m1.images, m2.images));
  CHECK(bit_identical(n1.images, n2.images));
  CHECK_THROWS_AS(balanced_mia_sample(a, b, 121, 9), ConfigError);
}

TEST_CASE("batch iteration") {
  const auto d = gen_synthetic_blobs(1, 2, 5, 1, 2, 2, 0.2);
  auto it = batch_iter(d, 3, 4, 0);
  CHECK(it.batch_count() == 4);
  std::vector<std::size_t> sizes;
  std::multiset<int> labels;
  Batch b;
  while (it.next(b)) {
    sizes.push_back(b.labels.size());
    CHECK(b.images.dim(0) == b.labels.size());
    labels.insert(b.labels.begin(), b.labels.end());
  }
  CHECK(sizes == std::vector<std::size_t>{3, 3, 3, 1});
  CHECK(labels == std::multiset<int>(d.labels.begin(), d.labels.end()));

  CHECK(epoch_permutation(10, 4, 2) == epoch_permutation(10, 4, 2));
  CHECK(epoch_permutation(100, 4, 2) != epoch_permutation(100, 4, 3));
  auto p = epoch_permutation(100, 4, 2);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 100; ++i) CHECK(p[i] == i);
  CHECK_THROWS_AS(batch_iter(d, 0, 1, 0), ConfigError);
}
