#include "scaat/checkpoint.hpp"

#include "scaat/fileio.hpp"

#include <bit>
#include <cstdint>
#include <cstring>

namespace scaat {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  float f32() { return std::bit_cast<float>(u32()); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out(kMagic, 4);
  for (const auto& t : tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw CheckpointError("tensor '" + t.name + "' has inconsistent shape");
    }
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t e : t.shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("not an SCT1 checkpoint (bad magic)");
  }
  Reader r(bytes);
  r.str(4);
  std::vector<NamedTensor> out;
  while (!r.done()) {
    NamedTensor t;
    t.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw CheckpointError("tensor '" + t.name + "' has implausible rank");
    for (std::uint32_t i = 0; i < rank; ++i) t.shape.push_back(r.u32());
    const std::size_t n = shape_numel(t.shape);
    if (n > (std::size_t{1} << 31)) {
      throw CheckpointError("tensor '" + t.name + "' has implausible size");
    }
    t.values.resize(n);
    for (auto& v : t.values) v = r.f32();
    out.push_back(std::move(t));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params) {
  std::vector<NamedTensor> tensors;
  for (const auto& [name, t] : params.tensors) {
    tensors.push_back({name, t.shape(),
                       std::vector<float>(t.values().data(), t.values().data() + t.numel())});
  }
  write_file_atomic(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

ParamSet<float> load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec,
                                bool trainable) {
  auto tensors = read_checkpoint(path);
  auto layout = detail::param_layout(spec);
  if (tensors.size() != layout.size()) {
    throw CheckpointError(path.string() + ": expected " + std::to_string(layout.size()) +
                          " tensors for the model spec, found " +
                          std::to_string(tensors.size()));
  }
  ParamSet<float> params{spec, {}};
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& t = tensors[i];
    if (t.name != layout[i].name || t.shape != layout[i].shape) {
      throw CheckpointError(path.string() + ": tensor " + std::to_string(i) + " is '" +
                            t.name + "' " + shape_str(t.shape) + ", expected '" +
                            layout[i].name + "' " + shape_str(layout[i].shape));
    }
    Vec<float> v = Eigen::Map<const Vec<float>>(t.values.data(),
                                                static_cast<Eigen::Index>(t.values.size()));
    params.tensors.emplace_back(t.name, Tensor<float>(t.shape, std::move(v), trainable));
  }
  return params;
}

}  // namespace scaat
