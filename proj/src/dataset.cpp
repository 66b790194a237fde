#include "scaat/dataset.hpp"

#include "scaat/fileio.hpp"
#include "scaat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace scaat {

std::string to_string(DatasetErrorKind kind) {
  switch (kind) {
    case DatasetErrorKind::io:
      return "io";
    case DatasetErrorKind::bad_magic:
      return "bad_magic";
    case DatasetErrorKind::truncated:
      return "truncated";
    case DatasetErrorKind::label_out_of_range:
      return "label_out_of_range";
    case DatasetErrorKind::invalid_spec:
      return "invalid_spec";
  }
  return "io";
}

Tensor<float> Dataset::sample(std::size_t i) const {
  const std::size_t indices[1] = {i};
  return batch(indices).reshaped_leaf(sample_shape());
}

Tensor<float> Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t d = sample_size();
  Vec<float> v(static_cast<Eigen::Index>(indices.size() * d));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size()) {
      throw std::out_of_range("sample " + std::to_string(indices[k]) + " outside dataset of " +
                              std::to_string(size()));
    }
    std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(indices[k] * d), d,
                v.data() + k * d);
  }
  return Tensor<float>({indices.size(), channels, height, width}, std::move(v));
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  if (n >= size()) return *this;
  Dataset out = *this;
  out.images.resize(n * sample_size());
  out.labels.resize(n);
  if (!irrelevant_ratio.empty()) out.irrelevant_ratio.resize(n);
  if (!relevant.empty()) out.relevant.resize(n);
  return out;
}

void Dataset::validate() const {
  auto fail = [](DatasetErrorKind k, const std::string& m) { throw DatasetError(k, m); };
  if (labels.empty()) fail(DatasetErrorKind::invalid_spec, "dataset is empty");
  if (channels == 0 || height == 0 || width == 0) {
    fail(DatasetErrorKind::invalid_spec, "dataset has a zero image extent");
  }
  if (images.size() != labels.size() * sample_size()) {
    fail(DatasetErrorKind::truncated, "dataset holds " + std::to_string(images.size()) +
                                          " pixel values for " + std::to_string(labels.size()) +
                                          " samples");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      fail(DatasetErrorKind::label_out_of_range,
           "label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
               " outside [0," + std::to_string(num_classes) + ")");
    }
  }
  for (float v : images) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      fail(DatasetErrorKind::invalid_spec, "pixel value outside [0,1]");
    }
  }
}

std::string to_string(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::idx:
      return "idx";
    case DatasetFormat::cifar_binary:
      return "cifar-binary";
    case DatasetFormat::synthetic:
      return "synthetic";
  }
  return "idx";
}

DatasetFormat dataset_format_from_string(const std::string& name) {
  if (name == "idx") return DatasetFormat::idx;
  if (name == "cifar-binary" || name == "cifar") return DatasetFormat::cifar_binary;
  if (name == "synthetic") return DatasetFormat::synthetic;
  throw std::invalid_argument("unknown dataset format '" + name +
                              "' (expected idx|cifar-binary|synthetic)");
}

namespace {

std::string read_bytes(const std::filesystem::path& path) {
  try {
    return read_file(path);
  } catch (const std::exception& e) {
    throw DatasetError(DatasetErrorKind::io, e.what());
  }
}

std::uint32_t be32(const std::string& b, std::size_t off) {
  return (std::uint32_t(std::uint8_t(b[off])) << 24) | (std::uint32_t(std::uint8_t(b[off + 1])) << 16) |
         (std::uint32_t(std::uint8_t(b[off + 2])) << 8) | std::uint32_t(std::uint8_t(b[off + 3]));
}

void need(const std::string& bytes, std::size_t n, const std::filesystem::path& path) {
  if (bytes.size() < n) {
    throw DatasetError(DatasetErrorKind::truncated,
                       path.string() + ": expected at least " + std::to_string(n) +
                           " bytes, file has " + std::to_string(bytes.size()));
  }
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t num_classes) {
  const std::string ib = read_bytes(images);
  const std::string lb = read_bytes(labels);
  need(ib, 16, images);
  need(lb, 8, labels);
  if (be32(ib, 0) != 0x00000803) {
    throw DatasetError(DatasetErrorKind::bad_magic,
                       images.string() + ": not an IDX uint8 rank-3 image file");
  }
  if (be32(lb, 0) != 0x00000801) {
    throw DatasetError(DatasetErrorKind::bad_magic,
                       labels.string() + ": not an IDX uint8 rank-1 label file");
  }
  const std::size_t n = be32(ib, 4), h = be32(ib, 8), w = be32(ib, 12);
  const std::size_t nl = be32(lb, 4);
  if (n != nl) {
    throw DatasetError(DatasetErrorKind::invalid_spec,
                       std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  }
  need(ib, 16 + n * h * w, images);
  need(lb, 8 + n, labels);

  Dataset d;
  d.channels = 1;
  d.height = h;
  d.width = w;
  d.num_classes = num_classes;
  d.images.resize(n * h * w);
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    d.images[i] = static_cast<float>(std::uint8_t(ib[16 + i])) / 255.0f;
  }
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = std::uint8_t(lb[8 + i]);
  d.provenance = "idx:" + images.string();
  d.validate();
  return d;
}

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

void append_cifar(const std::filesystem::path& path, Dataset& d, std::size_t limit) {
  const std::string b = read_bytes(path);
  if (b.empty() || b.size() % kCifarRecord != 0) {
    throw DatasetError(DatasetErrorKind::truncated,
                       path.string() + ": size " + std::to_string(b.size()) +
                           " is not a whole number of " + std::to_string(kCifarRecord) +
                           "-byte records");
  }
  const std::size_t records = b.size() / kCifarRecord;
  for (std::size_t r = 0; r < records && (limit == 0 || d.labels.size() < limit); ++r) {
    const std::size_t off = r * kCifarRecord;
    const int label = std::uint8_t(b[off]);
    if (label >= 10) {
      throw DatasetError(DatasetErrorKind::label_out_of_range,
                         path.string() + ": record " + std::to_string(r) + " has label " +
                             std::to_string(label));
    }
    d.labels.push_back(label);
    for (std::size_t k = 1; k < kCifarRecord; ++k) {
      d.images.push_back(static_cast<float>(std::uint8_t(b[off + k])) / 255.0f);
    }
  }
}

}  // namespace

Dataset load_cifar(const std::filesystem::path& path, const std::string& split, std::size_t limit) {
  Dataset d;
  d.channels = 3;
  d.height = d.width = kCifarSide;
  d.num_classes = 10;
  d.split = split;
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(path)) {
    if (split == "test") {
      files.push_back(path / "test_batch.bin");
    } else {
      for (int i = 1; i <= 5; ++i) {
        files.push_back(path / ("data_batch_" + std::to_string(i) + ".bin"));
      }
    }
  } else {
    files.push_back(path);
  }
  for (const auto& f : files) {
    if (limit != 0 && d.labels.size() >= limit) break;
    if (!std::filesystem::exists(f)) {
      throw DatasetError(DatasetErrorKind::io, f.string() + ": no such file");
    }
    append_cifar(f, d, limit);
  }
  d.provenance = "cifar-binary:" + path.string() + ":" + split;
  d.validate();
  return d;
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  auto bad = [&](const std::string& why) {
    throw DatasetError(DatasetErrorKind::invalid_spec, "synthetic spec '" + text + "': " + why);
  };
  const std::string kind = "half-informative";
  SyntheticSpec s;
  if (text.rfind(kind, 0) != 0) bad("must start with '" + kind + "'");
  std::string rest = text.substr(kind.size());
  if (!rest.empty()) {
    if (rest[0] != ':') bad("expected ':' after the kind");
    rest = rest.substr(1);
  }
  std::stringstream ss(rest);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) bad("'" + item + "' is not key=value");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      if (key == "n") {
        s.n = std::stoul(value);
      } else if (key == "size") {
        s.size = std::stoul(value);
      } else if (key == "classes") {
        s.classes = std::stoul(value);
      } else if (key == "seed") {
        s.seed = std::stoull(value);
      } else if (key == "split") {
        s.split = value;
      } else if (key == "noise") {
        s.noise = std::stod(value);
      } else if (key == "contrast") {
        s.contrast = std::stod(value);
      } else if (key == "ratios") {
        s.ratios.clear();
        std::stringstream rs(value);
        std::string r;
        while (std::getline(rs, r, '/')) s.ratios.push_back(std::stod(r));
      } else {
        bad("unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      bad("cannot parse value of '" + key + "'");
    }
  }
  if (s.n == 0 || s.size < 4 || s.classes < 2) bad("need n >= 1, size >= 4, classes >= 2");
  if (s.ratios.empty()) bad("no irrelevant ratios given");
  for (double r : s.ratios) {
    if (!(r >= 0.0 && r < 1.0)) bad("irrelevant ratios must lie in [0,1)");
  }
  if (!(s.noise >= 0.0 && s.noise <= 0.5)) bad("noise must lie in [0,0.5]");
  if (!(s.contrast > 0.0 && s.contrast <= 0.8)) bad("contrast must lie in (0,0.8]");
  return s;
}

std::string format_synthetic_spec(const SyntheticSpec& s) {
  std::ostringstream out;
  out << "half-informative:n=" << s.n << ",size=" << s.size << ",classes=" << s.classes
      << ",ratios=";
  for (std::size_t i = 0; i < s.ratios.size(); ++i) out << (i ? "/" : "") << s.ratios[i];
  out << ",seed=" << s.seed << ",split=" << s.split << ",noise=" << s.noise
      << ",contrast=" << s.contrast;
  return out.str();
}

Dataset make_half_informative(const SyntheticSpec& s) {
  // Background is dark noise. The object is a square whose intensity
  // encodes the class. The gap between class levels shrinks as the object
  // grows, so every sample carries the same total class evidence.
  const std::size_t side = s.size, plane = side * side;
  auto rng = make_rng(s.seed, Stream::synthetic, s.split == "test" ? 1 : 0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_ratio(0, s.ratios.size() - 1);
  std::uniform_int_distribution<int> pick_class(0, static_cast<int>(s.classes) - 1);

  Dataset d;
  d.channels = 1;
  d.height = d.width = side;
  d.num_classes = s.classes;
  d.split = s.split;
  d.provenance = "synthetic:" + format_synthetic_spec(s);
  d.images.assign(s.n * plane, 0.0f);
  for (std::size_t i = 0; i < s.n; ++i) {
    const double ratio = s.ratios[pick_ratio(rng)];
    const int label = pick_class(rng);
    const auto obj = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(std::sqrt((1.0 - ratio) * static_cast<double>(plane)))),
        1, side);
    const std::size_t top = std::uniform_int_distribution<std::size_t>(0, side - obj)(rng);
    const std::size_t left = std::uniform_int_distribution<std::size_t>(0, side - obj)(rng);
    const double fraction = static_cast<double>(obj * obj) / static_cast<double>(plane);
    const double gap = std::min(0.8, s.contrast * 0.5 / fraction);
    const double level = 0.5 - gap / 2 + gap * label / static_cast<double>(s.classes - 1);
    std::vector<std::uint8_t> rel(plane, 0);
    float* img = d.images.data() + i * plane;
    for (std::size_t r = 0; r < side; ++r) {
      for (std::size_t c = 0; c < side; ++c) {
        const bool inside = r >= top && r < top + obj && c >= left && c < left + obj;
        const double v = inside ? level + s.noise * 0.1 * (u(rng) - 0.5) : s.noise * u(rng);
        img[r * side + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        rel[r * side + c] = inside;
      }
    }
    d.labels.push_back(label);
    d.irrelevant_ratio.push_back(ratio);
    d.relevant.push_back(std::move(rel));
  }
  d.validate();
  return d;
}

Dataset load_dataset(const std::string& path, DatasetFormat format, const std::string& split,
                     std::size_t limit) {
  Dataset d;
  switch (format) {
    case DatasetFormat::synthetic: {
      auto spec = parse_synthetic_spec(path);
      spec.split = split;
      d = make_half_informative(spec);
      break;
    }
    case DatasetFormat::cifar_binary:
      d = load_cifar(path, split, limit);
      break;
    case DatasetFormat::idx: {
      std::filesystem::path images(path);
      std::string name = images.filename().string();
      auto swap = [&](const std::string& from, const std::string& to) {
        const auto at = name.find(from);
        if (at != std::string::npos) name.replace(at, from.size(), to);
      };
      swap("images", "labels");
      swap("idx3", "idx1");
      if (name == images.filename().string()) name += "-labels";
      d = load_idx(images, images.parent_path() / name);
      d.split = split;
      break;
    }
  }
  return limit ? d.head(limit) : d;
}

}  // namespace scaat
