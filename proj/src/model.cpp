#include "scaat/model.hpp"

#include <stdexcept>

namespace scaat {

std::string to_string(Arch arch) { return arch == Arch::mlp ? "mlp" : "cnn"; }

Arch arch_from_string(const std::string& name) {
  if (name == "mlp") return Arch::mlp;
  if (name == "cnn") return Arch::cnn;
  throw std::invalid_argument("unknown architecture '" + name + "' (expected mlp|cnn)");
}

void ModelSpec::validate() const {
  if (channels == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("model input extents must be positive, got " +
                                shape_str(input_shape()));
  }
  if (num_classes < 2) {
    throw std::invalid_argument("model needs at least 2 classes, got " +
                                std::to_string(num_classes));
  }
  for (std::size_t w : hidden) {
    if (w == 0) throw std::invalid_argument("zero-sized hidden layer in model spec");
  }
  if (arch == Arch::cnn) {
    std::size_t h = height, w = width;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      if (h < 2 || w < 2) {
        throw std::invalid_argument("input " + shape_str(input_shape()) + " too small for " +
                                    std::to_string(hidden.size()) + " conv/pool stages");
      }
      h /= 2;
      w /= 2;
    }
  }
}

ModelSpec reference_cnn(std::size_t channels, std::size_t height, std::size_t width,
                        std::size_t num_classes, std::uint64_t seed) {
  return ModelSpec{Arch::cnn, channels, height, width, num_classes, {16, 32}, seed};
}

namespace detail {

std::vector<ParamLayout> param_layout(const ModelSpec& spec) {
  std::vector<ParamLayout> out;
  if (spec.arch == Arch::cnn) {
    std::size_t in = spec.channels;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      const auto idx = std::to_string(i);
      const std::size_t f = spec.hidden[i];
      out.push_back({"conv" + idx + ".weight", {f, in, 3, 3}, in * 9});
      out.push_back({"conv" + idx + ".bias", {f}, in * 9});
      in = f;
    }
    const std::size_t features = cnn_feature_size(spec);
    out.push_back({"fc0.weight", {spec.num_classes, features}, features});
    out.push_back({"fc0.bias", {spec.num_classes}, features});
  } else {
    std::size_t in = spec.input_size();
    std::vector<std::size_t> widths = spec.hidden;
    widths.push_back(spec.num_classes);
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const auto idx = std::to_string(i);
      out.push_back({"fc" + idx + ".weight", {widths[i], in}, in});
      out.push_back({"fc" + idx + ".bias", {widths[i]}, in});
      in = widths[i];
    }
  }
  return out;
}

}  // namespace detail

}  // namespace scaat
