#pragma once

// Gradient saliency maps and the low-saliency feature selection used to
// build perturbation masks.

#include "scaat/model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace scaat {

enum class SaliencyMethod { vanilla, smooth_grad, integrated_gradients };

std::string to_string(SaliencyMethod m);
SaliencyMethod saliency_method_from_string(const std::string& name);

using MapArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Non-negative per-pixel scores at input resolution. Flat index of pixel
/// (h, w) is h * width + w.
struct SaliencyMap {
  MapArray values;
  SaliencyMethod method = SaliencyMethod::vanilla;
  std::size_t region = 1;

  std::size_t height() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t width() const { return static_cast<std::size_t>(values.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  std::span<const double> flat() const { return {values.data(), size()}; }
};

/// Sorted, distinct flat pixel indices.
using IndexSet = std::vector<std::size_t>;

/// Reduces a (C,H,W) gradient to per-pixel max over channels of |g|.
template <typename T>
SaliencyMap channel_max_abs(const T* grad, std::size_t channels, std::size_t height,
                            std::size_t width) {
  SaliencyMap map;
  map.values = MapArray::Zero(static_cast<Eigen::Index>(height),
                              static_cast<Eigen::Index>(width));
  const std::size_t plane = height * width;
  double* out = map.values.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      out[p] = std::max(out[p], std::abs(static_cast<double>(grad[c * plane + p])));
    }
  }
  return map;
}

/// Parameters with gradient tracking switched off; a no-op when already so.
template <typename T>
ParamSet<T> frozen_view(const ParamSet<T>& params) {
  for (const auto& [n, t] : params.tensors) {
    if (t.requires_grad()) return params.frozen();
  }
  return params;
}

/// d score_{c_i} / d x_i given raw scores already computed from the leaf
/// x. With `retain_graph` the scores stay differentiable afterwards.
template <typename T>
Tensor<T> selected_score_gradient(const Tensor<T>& scores, const Tensor<T>& x,
                                  std::span<const int> classes, bool retain_graph = false) {
  const std::size_t n = scores.dim(0), nc = scores.dim(1);
  if (classes.size() != n) {
    throw ShapeError("saliency: " + std::to_string(classes.size()) + " classes for a batch of " +
                     std::to_string(n));
  }
  Vec<T> select = Vec<T>::Zero(static_cast<Eigen::Index>(n * nc));
  for (std::size_t i = 0; i < n; ++i) {
    if (classes[i] < 0 || static_cast<std::size_t>(classes[i]) >= nc) {
      throw std::out_of_range("saliency: class " + std::to_string(classes[i]) +
                              " outside [0," + std::to_string(nc) + ")");
    }
    select[static_cast<Eigen::Index>(i * nc + classes[i])] = T(1);
  }
  auto picked = sum(mul(scores, Tensor<T>(scores.shape(), std::move(select))));
  std::vector<Tensor<T>> leaf{x};
  return gradients<T>(picked, leaf, nullptr, retain_graph).front();
}

/// d score_{c_i} / d x_i for every sample of a (N,C,H,W) batch. The raw
/// scores of the forward pass are copied to `scores_out` when given.
template <typename T>
Tensor<T> class_score_input_gradient(const ParamSet<T>& params, const Tensor<T>& batch,
                                     std::span<const int> classes,
                                     Tensor<T>* scores_out = nullptr) {
  auto frozen = frozen_view(params);
  auto x = batch.detach(true);
  auto scores = forward(frozen, x);
  if (scores_out) *scores_out = scores.detach(false);
  return selected_score_gradient(scores, x, classes);
}

/// One channel-reduced |gradient| map per sample of a (N,C,H,W) gradient.
template <typename T>
std::vector<SaliencyMap> maps_from_gradient(const Tensor<T>& grad, const ModelSpec& s) {
  std::vector<SaliencyMap> maps;
  for (std::size_t i = 0; i < grad.dim(0); ++i) {
    maps.push_back(channel_max_abs(grad.values().data() + i * s.input_size(), s.channels,
                                   s.height, s.width));
  }
  return maps;
}

template <typename T>
Tensor<T> as_batch(const ParamSet<T>& params, const Tensor<T>& x) {
  if (x.shape() == params.spec.input_shape()) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    return x.reshaped_leaf(std::move(s));
  }
  return x;
}

/// |d score_y / d x| reduced over channels, one map per batch sample.
template <typename T>
std::vector<SaliencyMap> vanilla_gsmaps(const ParamSet<T>& params, const Tensor<T>& batch,
                                        std::span<const int> classes,
                                        Tensor<T>* scores_out = nullptr) {
  auto b = as_batch(params, batch);
  return maps_from_gradient(class_score_input_gradient(params, b, classes, scores_out),
                            params.spec);
}

template <typename T>
SaliencyMap vanilla_gsmap(const ParamSet<T>& params, const Tensor<T>& x, int y) {
  const int classes[1] = {y};
  return vanilla_gsmaps(params, x, std::span<const int>(classes)).front();
}

/// Mean vanilla map over `samples` noisy copies x + N(0, sigma^2).
template <typename T>
SaliencyMap smooth_grad(const ParamSet<T>& params, const Tensor<T>& x, int y,
                        std::size_t samples, double sigma, Rng& rng) {
  if (samples == 0) throw std::invalid_argument("smooth_grad: need at least one sample");
  if (!(sigma >= 0)) throw std::invalid_argument("smooth_grad: sigma must be >= 0");
  if (sigma == 0) {
    auto map = vanilla_gsmap(params, x, y);
    map.method = SaliencyMethod::smooth_grad;
    return map;
  }
  const auto& s = params.spec;
  const std::size_t d = s.input_size();
  if (x.numel() != d) {
    throw ShapeError("smooth_grad: expected one sample of shape " + shape_str(s.input_shape()) +
                     ", got " + shape_str(x.shape()));
  }
  std::normal_distribution<double> noise(0.0, sigma);
  Vec<T> noisy(static_cast<Eigen::Index>(samples * d));
  for (std::size_t k = 0; k < samples; ++k) {
    for (std::size_t j = 0; j < d; ++j) {
      noisy[static_cast<Eigen::Index>(k * d + j)] =
          x.values()[static_cast<Eigen::Index>(j)] + static_cast<T>(noise(rng));
    }
  }
  Tensor<T> batch({samples, s.channels, s.height, s.width}, std::move(noisy));
  std::vector<int> classes(samples, y);
  auto maps = vanilla_gsmaps(params, batch, classes);
  SaliencyMap out;
  out.values = MapArray::Zero(maps[0].values.rows(), maps[0].values.cols());
  for (const auto& m : maps) out.values += m.values;
  out.values /= static_cast<double>(samples);
  out.method = SaliencyMethod::smooth_grad;
  return out;
}

/// Signed attributions (x - baseline) * mean gradient along the straight
/// path, sampled at the midpoints of `steps` equal segments. Shape (C,H,W).
template <typename T>
Tensor<T> integrated_gradients_attributions(const ParamSet<T>& params, const Tensor<T>& x,
                                            int y, const Tensor<T>& baseline,
                                            std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("integrated_gradients: steps must be >= 1");
  const auto& s = params.spec;
  const std::size_t d = s.input_size();
  if (x.numel() != d || baseline.numel() != d) {
    throw ShapeError("integrated_gradients: input " + shape_str(x.shape()) + " and baseline " +
                     shape_str(baseline.shape()) + " must both be " +
                     shape_str(s.input_shape()));
  }
  const Vec<T> diff = x.values() - baseline.values();
  Vec<T> path(static_cast<Eigen::Index>(steps * d));
  for (std::size_t k = 0; k < steps; ++k) {
    const T alpha = static_cast<T>((static_cast<double>(k) + 0.5) / static_cast<double>(steps));
    path.segment(static_cast<Eigen::Index>(k * d), static_cast<Eigen::Index>(d)) =
        baseline.values() + alpha * diff;
  }
  Tensor<T> batch({steps, s.channels, s.height, s.width}, std::move(path));
  std::vector<int> classes(steps, y);
  auto g = class_score_input_gradient(params, batch, classes);
  Vec<T> avg = Vec<T>::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t k = 0; k < steps; ++k) {
    avg += g.values().segment(static_cast<Eigen::Index>(k * d), static_cast<Eigen::Index>(d));
  }
  avg /= static_cast<T>(steps);
  return Tensor<T>(s.input_shape(), diff * avg);
}

template <typename T>
SaliencyMap integrated_gradients(const ParamSet<T>& params, const Tensor<T>& x, int y,
                                 const Tensor<T>& baseline, std::size_t steps) {
  auto attr = integrated_gradients_attributions(params, x, y, baseline, steps);
  const auto& s = params.spec;
  auto map = channel_max_abs(attr.values().data(), s.channels, s.height, s.width);
  map.method = SaliencyMethod::integrated_gradients;
  return map;
}

/// Replaces every r x r block by its mean. r must divide both extents.
SaliencyMap region_average(const SaliencyMap& map, std::size_t r);

/// Element at 0-based position floor(q * s) of the ascending sort, or +inf
/// when that position is past the end.
double quantile_threshold(std::span<const double> values, double q);

/// Indices whose value is strictly below quantile_threshold(values, q).
IndexSet lowest(std::span<const double> values, double q);
IndexSet lowest(const SaliencyMap& map, double q);

/// Region side used for training masks: 4, or 2 below 32x32.
std::size_t mask_region_side(std::size_t height, std::size_t width);

/// Min-max normalised 8-bit raster, row-major. Constant maps become zeros.
std::vector<std::uint8_t> to_gray8(const SaliencyMap& map);

void write_pgm(const std::filesystem::path& path, const SaliencyMap& map);
void write_csv(const std::filesystem::path& path, const SaliencyMap& map);

}  // namespace scaat
