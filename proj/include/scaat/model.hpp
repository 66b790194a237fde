#pragma once

// Small image classifiers: a fully connected MLP and a conv-relu-pool CNN.

#include "scaat/ops.hpp"
#include "scaat/rng.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace scaat {

enum class Arch { mlp, cnn };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& name);

struct ModelSpec {
  Arch arch = Arch::cnn;
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t num_classes = 10;
  /// Hidden widths for an MLP, conv channel counts for a CNN.
  std::vector<std::size_t> hidden{16, 32};
  std::uint64_t seed = 0;

  Shape input_shape() const { return {channels, height, width}; }
  std::size_t input_size() const { return channels * height * width; }

  /// Throws std::invalid_argument on a spec that cannot be built.
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

/// conv3x3(16)-relu-pool2-conv3x3(32)-relu-pool2-dense(num_classes).
ModelSpec reference_cnn(std::size_t channels, std::size_t height, std::size_t width,
                        std::size_t num_classes, std::uint64_t seed = 0);

/// Named parameters of one model. Order is the layer order.
template <typename T>
struct ParamSet {
  ModelSpec spec;
  std::vector<std::pair<std::string, Tensor<T>>> tensors;

  const Tensor<T>& at(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw std::out_of_range("no parameter named '" + name + "'");
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.numel();
    return n;
  }

  /// Copy with fresh leaves; gradients are requested on them iff `trainable`.
  ParamSet copy(bool trainable) const {
    ParamSet out{spec, {}};
    for (const auto& [n, t] : tensors) out.tensors.emplace_back(n, t.detach(trainable));
    return out;
  }

  /// Same values, no gradient tracking. Used for input-only gradients.
  ParamSet frozen() const { return copy(false); }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out{spec, {}};
    for (const auto& [n, t] : tensors) {
      out.tensors.emplace_back(n, Tensor<U>(t.shape(), t.values().template cast<U>()));
    }
    return out;
  }

  bool all_finite() const {
    for (const auto& [n, t] : tensors) {
      if (!t.values().isFinite().all()) return false;
    }
    return true;
  }
};

namespace detail {

// Flattened feature size after the conv stack of a CNN.
inline std::size_t cnn_feature_size(const ModelSpec& spec) {
  std::size_t h = spec.height, w = spec.width, c = spec.channels;
  for (std::size_t ch : spec.hidden) {
    h /= 2;
    w /= 2;
    c = ch;
  }
  return c * h * w;
}

// (name, shape, fan_in) for every parameter of the spec.
struct ParamLayout {
  std::string name;
  Shape shape;
  std::size_t fan_in;
};

std::vector<ParamLayout> param_layout(const ModelSpec& spec);

}  // namespace detail

/// Weights and biases drawn from U(-sqrt(1/fan_in), +sqrt(1/fan_in)).
template <typename T>
ParamSet<T> init_model(const ModelSpec& spec, bool trainable = true) {
  spec.validate();
  auto rng = make_rng(spec.seed, Stream::init);
  ParamSet<T> params{spec, {}};
  for (const auto& layer : detail::param_layout(spec)) {
    const double bound = std::sqrt(1.0 / static_cast<double>(layer.fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Vec<T> v(static_cast<Eigen::Index>(shape_numel(layer.shape)));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    params.tensors.emplace_back(layer.name, Tensor<T>(layer.shape, std::move(v), trainable));
  }
  return params;
}

/// Raw class scores. x is (C,H,W) -> (num_classes) or (N,C,H,W) -> (N,num_classes).
template <typename T>
Tensor<T> forward(const ParamSet<T>& params, const Tensor<T>& x) {
  const ModelSpec& spec = params.spec;
  const Shape expected = spec.input_shape();
  bool single = false;
  Tensor<T> h = x;
  if (x.shape() == expected) {
    single = true;
    h = reshape(x, {1, spec.channels, spec.height, spec.width});
  } else if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != expected) {
    throw ShapeError("model input: expected shape " + shape_str(expected) + " or (N," +
                     shape_str(expected).substr(1) + ", got " + shape_str(x.shape()));
  }
  const std::size_t n = h.dim(0);

  if (spec.arch == Arch::cnn) {
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      const auto idx = std::to_string(i);
      h = conv2d(h, params.at("conv" + idx + ".weight"), params.at("conv" + idx + ".bias"),
                 {1, 1});
      h = max_pool2d(relu(h), 2, 2);
    }
    h = reshape(h, {n, h.numel() / n});
    h = add(matmul(h, params.at("fc0.weight"), true), params.at("fc0.bias"));
  } else {
    h = reshape(h, {n, spec.input_size()});
    const std::size_t layers = spec.hidden.size() + 1;
    for (std::size_t i = 0; i < layers; ++i) {
      const auto idx = std::to_string(i);
      h = add(matmul(h, params.at("fc" + idx + ".weight"), true),
              params.at("fc" + idx + ".bias"));
      if (i + 1 < layers) h = relu(h);
    }
  }
  if (single) h = reshape(h, {spec.num_classes});
  return h;
}

/// Softmax of the class scores.
template <typename T>
Tensor<T> predict_proba(const ParamSet<T>& params, const Tensor<T>& x) {
  return softmax(forward(params, x));
}

}  // namespace scaat
