#pragma once

// Sparsity and faithfulness measures for saliency maps: entropy, deflate
// size, Gini index, LeRF/MoRF perturbation curves and their AOPC.

#include "scaat/dataset.hpp"
#include "scaat/rng.hpp"
#include "scaat/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

namespace scaat {

/// Shannon entropy in bits of the map normalised to sum 1. Throws
/// std::domain_error when no value is positive.
double saliency_entropy(std::span<const double> values);
double saliency_entropy(const SaliencyMap& map);

/// Deflate size (zlib, default level) of the 8-bit min-max raster, in KiB.
double compressed_size_kib(const SaliencyMap& map);

/// sum_i (2i - n - 1) a_(i) / (n sum a) over the ascending sort; in
/// [0, (n-1)/n]. Throws std::domain_error when no value is positive.
double gini_index(std::span<const double> values);
double gini_index(const SaliencyMap& map);

enum class Order { lerf, morf };

std::string to_string(Order o);
Order order_from_string(const std::string& name);

struct CurveConfig {
  std::size_t steps = 20;
  /// Share of the image perturbed after the last step.
  double fraction = 0.2;
  std::size_t repeats = 5;
  /// Tile side; chosen from the input size when unset.
  std::optional<std::size_t> region;

  void validate() const;
};

/// 8 from 96x96 up, 4 from 32x32 up, 2 below; 1 when that does not divide.
std::size_t eval_region_side(std::size_t height, std::size_t width);

struct PerturbationCurve {
  Order order = Order::lerf;
  double fraction = 0.2;
  std::size_t repeats = 5;
  /// Mean decay after step l+1; the clean input (decay 0) is not stored.
  std::vector<double> values;
  /// Population standard deviation of the decay over repeats.
  std::vector<double> stddev;

  std::size_t steps() const { return values.size(); }
};

/// Tiles perturbed after step l of `steps`: round(l * fraction * tiles / steps).
std::size_t tiles_after_step(std::size_t l, std::size_t steps, double fraction, std::size_t tiles);

/// Tile indices (row-major over the tile grid) sorted by mean saliency,
/// ascending for lerf and descending for morf; ties by ascending index.
std::vector<std::size_t> rank_tiles(const SaliencyMap& map, std::size_t region, Order order);

/// Flat pixel indices covered by tile `t` of an h x w plane.
std::vector<std::size_t> tile_pixels(std::size_t t, std::size_t region, std::size_t height,
                                     std::size_t width);

/// Mean of the curve values.
double aopc(const PerturbationCurve& curve);
/// aopc(morf) / aopc(lerf), or nothing when aopc(lerf) is 0.
std::optional<double> aopc_rel(double aopc_morf, double aopc_lerf);

/// Decay of softmax probability of the clean argmax class as the tiles in
/// `tile_order` are replaced, a growing prefix at a time, by uniform noise.
/// Each repeat draws one fresh noise image from `rng`.
template <typename T>
PerturbationCurve perturbation_curve_ranked(const ParamSet<T>& params, const Tensor<T>& x,
                                            std::span<const std::size_t> tile_order,
                                            std::size_t region, const CurveConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto& s = params.spec;
  const std::size_t d = s.input_size(), plane = s.height * s.width;
  if (x.numel() != d) {
    throw ShapeError("perturbation curve: input " + shape_str(x.shape()) + " is not " +
                     shape_str(s.input_shape()));
  }
  if (region == 0 || s.height % region != 0 || s.width % region != 0) {
    throw std::invalid_argument("perturbation curve: region side " + std::to_string(region) +
                                " does not divide " + std::to_string(s.height) + "x" +
                                std::to_string(s.width));
  }
  const std::size_t tiles = plane / (region * region);
  if (tile_order.size() != tiles) {
    throw std::invalid_argument("perturbation curve: ranking has " +
                                std::to_string(tile_order.size()) + " tiles, image has " +
                                std::to_string(tiles));
  }
  const std::size_t L = cfg.steps, R = cfg.repeats;
  auto frozen = frozen_view(params);

  const Tensor<T> clean(Shape{1, s.channels, s.height, s.width}, x.values());
  const Vec<T> p0 = softmax(forward(frozen, clean)).values();
  Eigen::Index c = 0;
  p0.maxCoeff(&c);

  // One batch row per (repeat, step).
  Vec<T> rows(static_cast<Eigen::Index>(R * L * d));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec<T> fill(static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t k = 0; k < d; ++k) fill(static_cast<Eigen::Index>(k)) = static_cast<T>(u(rng));
    Vec<T> img = x.values();
    std::size_t done = 0;
    for (std::size_t l = 1; l <= L; ++l) {
      const std::size_t upto = tiles_after_step(l, L, cfg.fraction, tiles);
      for (; done < upto; ++done) {
        for (std::size_t p : tile_pixels(tile_order[done], region, s.height, s.width)) {
          for (std::size_t ch = 0; ch < s.channels; ++ch) {
            const auto k = static_cast<Eigen::Index>(ch * plane + p);
            img(k) = fill(k);
          }
        }
      }
      rows.segment(static_cast<Eigen::Index>((r * L + l - 1) * d), static_cast<Eigen::Index>(d)) =
          img;
    }
  }
  const Vec<T> probs =
      softmax(forward(frozen, Tensor<T>({R * L, s.channels, s.height, s.width}, std::move(rows))))
          .values();
  const std::size_t nc = s.num_classes;

  PerturbationCurve out;
  out.fraction = cfg.fraction;
  out.repeats = R;
  out.values.assign(L, 0.0);
  out.stddev.assign(L, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      const double decay = static_cast<double>(p0(c)) -
                           static_cast<double>(probs(static_cast<Eigen::Index>((r * L + l) * nc) + c));
      sum += decay;
      sq += decay * decay;
    }
    const double mean = sum / static_cast<double>(R);
    out.values[l] = mean;
    out.stddev[l] = std::sqrt(std::max(0.0, sq / static_cast<double>(R) - mean * mean));
  }
  return out;
}

template <typename T>
PerturbationCurve perturbation_curve(const ParamSet<T>& params, const Tensor<T>& x,
                                     const SaliencyMap& smap, Order order, const CurveConfig& cfg,
                                     Rng& rng) {
  const std::size_t region =
      cfg.region ? *cfg.region : eval_region_side(params.spec.height, params.spec.width);
  const auto ranking = rank_tiles(smap, region, order);
  auto curve = perturbation_curve_ranked(params, x, std::span<const std::size_t>(ranking), region,
                                         cfg, rng);
  curve.order = order;
  return curve;
}

struct EvalConfig {
  SaliencyMethod saliency = SaliencyMethod::vanilla;
  CurveConfig curve;
  std::size_t smoothgrad_samples = 50;
  double smoothgrad_sigma = 0.15;
  std::size_t ig_steps = 50;
  std::uint64_t seed = 0;
  /// Evaluate the first `limit` samples only; 0 means all.
  std::size_t limit = 0;

  void validate() const;
};

/// Per-sample values. Measures that are undefined for a sample (all-zero
/// saliency, zero LeRF AOPC) are NaN.
struct SampleMetrics {
  std::size_t index = 0;
  int label = 0;
  int predicted = 0;
  double entropy = 0.0;
  double size_kib = 0.0;
  double gini = 0.0;
  double aopc_lerf = 0.0;
  double aopc_morf = 0.0;
  double aopc_rel = 0.0;
};

struct MetricsReport {
  std::vector<SampleMetrics> samples;
  /// Means over the samples where each measure is defined, except aopc_rel
  /// which is aopc_morf / aopc_lerf of the aggregates (NaN when the latter is 0).
  double entropy = 0.0;
  double size_kib = 0.0;
  double gini = 0.0;
  double aopc_lerf = 0.0;
  double aopc_morf = 0.0;
  double aopc_rel = 0.0;
  double accuracy = 0.0;
  /// Mean curves over samples.
  PerturbationCurve lerf;
  PerturbationCurve morf;
};

/// Saliency map of one (C,H,W) sample for class `y`.
SaliencyMap saliency_for(const ParamSet<float>& params, const Tensor<float>& x, int y,
                         const EvalConfig& cfg, Rng& rng);

/// Metrics of one sample; pure in (params, sample, cfg.seed).
SampleMetrics evaluate_sample(const ParamSet<float>& params, const Dataset& data, std::size_t i,
                              const EvalConfig& cfg, PerturbationCurve* lerf = nullptr,
                              PerturbationCurve* morf = nullptr);

/// Recomputes the aggregate fields from `samples` and the given curves.
void aggregate(MetricsReport& report, std::span<const PerturbationCurve> lerf,
               std::span<const PerturbationCurve> morf);

/// Worker count: SCAAT_THREADS when set and positive, else the hardware
/// concurrency, never more than `jobs`.
std::size_t worker_count(std::size_t jobs);

/// Evaluates samples in parallel and reduces them in index order, so the
/// report does not depend on the worker count.
MetricsReport evaluate_model(const ParamSet<float>& params, const Dataset& data,
                             const EvalConfig& cfg);

}  // namespace scaat
