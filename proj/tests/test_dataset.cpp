#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "scaat/dataset.hpp"
#include "scaat/fileio.hpp"

#include <filesystem>
#include <numeric>
#include <random>

using namespace scaat;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("scaat_test_dataset_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

std::string idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w, std::uint32_t magic = 0x803) {
  std::string b;
  put_be32(b, magic);
  put_be32(b, n);
  put_be32(b, h);
  put_be32(b, w);
  for (std::uint32_t i = 0; i < n * h * w; ++i) b.push_back(static_cast<char>((i * 37) % 256));
  return b;
}

std::string idx_labels(const std::vector<int>& labels, std::uint32_t magic = 0x801) {
  std::string b;
  put_be32(b, magic);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) b.push_back(static_cast<char>(l));
  return b;
}

std::string cifar_records(const std::vector<int>& labels) {
  std::string b;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    b.push_back(static_cast<char>(labels[r]));
    for (std::size_t k = 0; k < 3072; ++k) b.push_back(static_cast<char>((k + r) % 256));
  }
  return b;
}

DatasetErrorKind idx_error(const std::string& images, const std::string& labels) {
  TempDir dir;
  write_file_atomic(dir.path / "img", images);
  write_file_atomic(dir.path / "lbl", labels);
  try {
    load_idx(dir.path / "img", dir.path / "lbl");
  } catch (const DatasetError& e) {
    return e.kind();
  }
  FAIL("expected a dataset error");
  return DatasetErrorKind::io;
}

}  // namespace

TEST_CASE("idx files parse as uint8 images scaled to [0,1]") {
  TempDir dir;
  write_file_atomic(dir.path / "train-images-idx3-ubyte", idx_images(3, 2, 4));
  write_file_atomic(dir.path / "train-labels-idx1-ubyte", idx_labels({7, 0, 9}));
  auto d = load_dataset((dir.path / "train-images-idx3-ubyte").string(), DatasetFormat::idx, "train");
  CHECK(d.size() == 3);
  CHECK(d.sample_shape() == Shape{1, 2, 4});
  CHECK(d.labels == std::vector<int>{7, 0, 9});
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    CHECK(d.images[i] == static_cast<float>((i * 37) % 256) / 255.0f);
  }
  CHECK(d.sample(1).shape() == Shape{1, 2, 4});
  CHECK(load_dataset((dir.path / "train-images-idx3-ubyte").string(), DatasetFormat::idx, "train", 2)
            .size() == 2);
}

TEST_CASE("idx errors are distinguishable") {
  CHECK(idx_error(idx_images(2, 2, 2, 0x802), idx_labels({0, 1})) == DatasetErrorKind::bad_magic);
  CHECK(idx_error(idx_images(2, 2, 2), idx_labels({0, 1}, 0x803)) == DatasetErrorKind::bad_magic);
  CHECK(idx_error(idx_images(2, 2, 2), idx_labels({0, 10})) == DatasetErrorKind::label_out_of_range);

  // A length field promising more images than the file holds.
  std::string big = idx_images(2, 2, 2);
  big[7] = 3;
  CHECK(idx_error(big, idx_labels({0, 1, 1})) == DatasetErrorKind::truncated);
  CHECK(idx_error(idx_images(2, 2, 2).substr(0, 10), idx_labels({0, 1})) ==
        DatasetErrorKind::truncated);
  CHECK(idx_error(idx_images(2, 2, 2), idx_labels({0, 1}).substr(0, 9)) == DatasetErrorKind::truncated);

  try {
    load_idx("/nonexistent/images", "/nonexistent/labels");
    FAIL("expected an io error");
  } catch (const DatasetError& e) {
    CHECK(e.kind() == DatasetErrorKind::io);
  }
}

TEST_CASE("failed loads leave the destination untouched") {
  TempDir dir;
  std::string big = idx_images(4, 3, 3);
  big[7] = 9;
  write_file_atomic(dir.path / "img", big);
  write_file_atomic(dir.path / "lbl", idx_labels({0, 1, 2, 3, 4, 5, 6, 7, 8}));
  Dataset d;
  d.labels = {42};
  CHECK_THROWS_AS(d = load_idx(dir.path / "img", dir.path / "lbl"), DatasetError);
  CHECK(d.labels == std::vector<int>{42});
  CHECK(d.images.empty());
}

TEST_CASE("cifar binary batches") {
  TempDir dir;
  write_file_atomic(dir.path / "test_batch.bin", cifar_records({3, 8}));
  for (int i = 1; i <= 5; ++i) {
    write_file_atomic(dir.path / ("data_batch_" + std::to_string(i) + ".bin"),
                      cifar_records({i, i}));
  }
  auto test = load_cifar(dir.path, "test");
  CHECK(test.size() == 2);
  CHECK(test.labels == std::vector<int>{3, 8});
  CHECK(test.sample_shape() == Shape{3, 32, 32});
  CHECK(test.images[1] == 1.0f / 255.0f);
  CHECK(test.images[3072] == 1.0f / 255.0f);

  auto train = load_cifar(dir.path, "train", 5);
  CHECK(train.labels == std::vector<int>{1, 1, 2, 2, 3});
  CHECK(load_cifar(dir.path / "data_batch_2.bin", "train").labels == std::vector<int>{2, 2});

  write_file_atomic(dir.path / "short.bin", cifar_records({1}).substr(0, 3000));
  write_file_atomic(dir.path / "label.bin", cifar_records({11}));
  auto kind_of = [&](const fs::path& p) {
    try {
      load_cifar(p, "train");
    } catch (const DatasetError& e) {
      return e.kind();
    }
    return DatasetErrorKind::invalid_spec;
  };
  CHECK(kind_of(dir.path / "short.bin") == DatasetErrorKind::truncated);
  CHECK(kind_of(dir.path / "label.bin") == DatasetErrorKind::label_out_of_range);
  CHECK(kind_of(dir.path / "missing.bin") == DatasetErrorKind::io);
}

TEST_CASE("synthetic spec strings") {
  auto s = parse_synthetic_spec("half-informative:n=50,size=8,classes=3,ratios=0.1/0.5/0.9,seed=4");
  CHECK(s.n == 50);
  CHECK(s.size == 8);
  CHECK(s.classes == 3);
  CHECK(s.ratios == std::vector<double>{0.1, 0.5, 0.9});
  CHECK(s.seed == 4);
  CHECK(parse_synthetic_spec("half-informative").n == 2000);

  auto r = parse_synthetic_spec(format_synthetic_spec(s));
  CHECK(format_synthetic_spec(r) == format_synthetic_spec(s));

  for (const char* bad : {"checkerboard", "half-informative:n", "half-informative:n=abc",
                          "half-informative:size=2", "half-informative:ratios=1.5",
                          "half-informative:colour=red", "half-informative:classes=1"}) {
    try {
      parse_synthetic_spec(bad);
      FAIL("accepted " << bad);
    } catch (const DatasetError& e) {
      CHECK(e.kind() == DatasetErrorKind::invalid_spec);
    }
  }
}

TEST_CASE("half-informative generator") {
  SyntheticSpec s;
  s.n = 400;
  auto d = make_half_informative(s);
  CHECK(d.size() == 400);
  CHECK(d.sample_shape() == Shape{1, 16, 16});
  CHECK(d.relevant.size() == 400);

  std::size_t per_ratio[2] = {0, 0}, per_class[2] = {0, 0};
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double ratio = d.irrelevant_ratio[i];
    ++per_ratio[ratio > 0.5];
    ++per_class[d.labels[i]];
    const auto& rel = d.relevant[i];
    const std::size_t covered = std::accumulate(rel.begin(), rel.end(), std::size_t{0});
    // The object is a square of round(sqrt((1 - ratio) * 256)) pixels a side.
    CHECK(covered == (ratio > 0.5 ? 64u : 196u));
    for (std::size_t p = 0; p < rel.size(); ++p) {
      const float v = d.images[i * 256 + p];
      if (rel[p]) {
        CHECK(v > 0.4f);
      } else {
        CHECK(v <= static_cast<float>(s.noise));
      }
    }
  }
  CHECK(per_ratio[0] > 150);
  CHECK(per_ratio[1] > 150);
  CHECK(per_class[0] > 150);
  CHECK(per_class[1] > 150);

  // Class signal: the mean object intensity separates the classes.
  for (std::size_t i = 0; i < d.size(); ++i) {
    double sum = 0;
    std::size_t k = 0;
    for (std::size_t p = 0; p < 256; ++p) {
      if (d.relevant[i][p]) {
        sum += d.images[i * 256 + p];
        ++k;
      }
    }
    CHECK((sum / static_cast<double>(k) > 0.5) == (d.labels[i] == 1));
  }
}

TEST_CASE("synthetic generation is deterministic and split-aware") {
  SyntheticSpec s;
  s.n = 64;
  s.seed = 11;
  auto a = make_half_informative(s);
  auto b = make_half_informative(s);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  s.split = "test";
  auto t = make_half_informative(s);
  CHECK(t.images != a.images);
  CHECK(t.split == "test");
  auto via = load_dataset("half-informative:n=64,seed=11", DatasetFormat::synthetic, "test");
  CHECK(via.images == t.images);
}

TEST_CASE("dataset helpers") {
  SyntheticSpec s;
  s.n = 10;
  s.size = 4;
  auto d = make_half_informative(s);
  auto h = d.head(3);
  CHECK(h.size() == 3);
  CHECK(h.images.size() == 3 * 16);
  CHECK(h.relevant.size() == 3);
  const std::size_t idx[] = {4, 1};
  auto b = d.batch(idx);
  CHECK(b.shape() == Shape{2, 1, 4, 4});
  CHECK(b.values()(0) == d.images[4 * 16]);
  CHECK(d.labels_of(idx) == std::vector<int>{d.labels[4], d.labels[1]});
  const std::size_t oob[] = {10};
  CHECK_THROWS_AS(d.batch(oob), std::out_of_range);
  CHECK(dataset_format_from_string("cifar-binary") == DatasetFormat::cifar_binary);
  CHECK_THROWS_AS(dataset_format_from_string("png"), std::invalid_argument);
  d.images[0] = 1.5f;
  CHECK_THROWS_AS(d.validate(), DatasetError);
}
