#include "scaat/metrics.hpp"

#include <zlib.h>

#include <cstdlib>
#include <limits>
#include <thread>

namespace scaat {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double positive_sum(std::span<const double> values, const char* what) {
  double total = 0.0;
  for (double v : values) {
    if (v < 0.0 || !std::isfinite(v)) {
      throw std::domain_error(std::string(what) + ": values must be finite and non-negative");
    }
    total += v;
  }
  if (!(total > 0.0)) throw std::domain_error(std::string(what) + ": map has no positive value");
  return total;
}

}  // namespace

double saliency_entropy(std::span<const double> values) {
  const double total = positive_sum(values, "saliency_entropy");
  double h = 0.0;
  for (double v : values) {
    if (v <= 0.0) continue;
    const double p = v / total;
    h -= p * std::log2(p);
  }
  return std::max(h, 0.0);
}

double saliency_entropy(const SaliencyMap& map) { return saliency_entropy(map.flat()); }

double compressed_size_kib(const SaliencyMap& map) {
  const auto raster = to_gray8(map);
  uLongf len = compressBound(static_cast<uLong>(raster.size()));
  std::vector<Bytef> buf(len);
  if (compress2(buf.data(), &len, raster.data(), static_cast<uLong>(raster.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK) {
    throw std::runtime_error("compressed_size_kib: zlib compression failed");
  }
  return static_cast<double>(len) / 1024.0;
}

double gini_index(std::span<const double> values) {
  const double total = positive_sum(values, "gini_index");
  std::vector<double> a(values.begin(), values.end());
  std::sort(a.begin(), a.end());
  const double n = static_cast<double>(a.size());
  double num = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (2.0 * static_cast<double>(i + 1) - n - 1.0) * a[i];
  }
  return num / (n * total);
}

double gini_index(const SaliencyMap& map) { return gini_index(map.flat()); }

std::string to_string(Order o) { return o == Order::lerf ? "lerf" : "morf"; }

Order order_from_string(const std::string& name) {
  if (name == "lerf") return Order::lerf;
  if (name == "morf") return Order::morf;
  throw std::invalid_argument("unknown perturbation order '" + name + "' (expected lerf|morf)");
}

void CurveConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("curve steps must be >= 1");
  if (repeats < 1) throw std::invalid_argument("curve repeats must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("perturbed fraction must lie in (0,1], got " +
                                std::to_string(fraction));
  }
  if (region && *region == 0) throw std::invalid_argument("curve region side must be >= 1");
}

std::size_t eval_region_side(std::size_t height, std::size_t width) {
  const std::size_t side = std::min(height, width);
  const std::size_t r = side >= 96 ? 8 : side >= 32 ? 4 : 2;
  if (height % r == 0 && width % r == 0) return r;
  return 1;
}

std::size_t tiles_after_step(std::size_t l, std::size_t steps, double fraction,
                             std::size_t tiles) {
  const double exact = static_cast<double>(l) * fraction * static_cast<double>(tiles) /
                       static_cast<double>(steps);
  return std::min(tiles, static_cast<std::size_t>(std::llround(exact)));
}

std::vector<std::size_t> rank_tiles(const SaliencyMap& map, std::size_t region, Order order) {
  const std::size_t h = map.height(), w = map.width();
  if (region == 0 || h % region != 0 || w % region != 0) {
    throw std::invalid_argument("region side " + std::to_string(region) + " does not divide " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t tw = w / region, th = h / region;
  const auto rr = static_cast<Eigen::Index>(region);
  std::vector<double> mean(th * tw);
  for (std::size_t i = 0; i < th; ++i) {
    for (std::size_t j = 0; j < tw; ++j) {
      mean[i * tw + j] = map.values
                             .block(static_cast<Eigen::Index>(i) * rr,
                                    static_cast<Eigen::Index>(j) * rr, rr, rr)
                             .mean();
    }
  }
  std::vector<std::size_t> idx(mean.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return order == Order::lerf ? mean[a] < mean[b] : mean[a] > mean[b];
  });
  return idx;
}

std::vector<std::size_t> tile_pixels(std::size_t t, std::size_t region, std::size_t height,
                                     std::size_t width) {
  const std::size_t tw = width / region;
  const std::size_t top = (t / tw) * region, left = (t % tw) * region;
  if (top + region > height) throw std::out_of_range("tile " + std::to_string(t) + " outside image");
  std::vector<std::size_t> out;
  out.reserve(region * region);
  for (std::size_t r = 0; r < region; ++r) {
    for (std::size_t c = 0; c < region; ++c) out.push_back((top + r) * width + left + c);
  }
  return out;
}

double aopc(const PerturbationCurve& curve) {
  if (curve.values.empty()) throw std::invalid_argument("aopc of an empty curve");
  return std::accumulate(curve.values.begin(), curve.values.end(), 0.0) /
         static_cast<double>(curve.values.size());
}

std::optional<double> aopc_rel(double aopc_morf, double aopc_lerf) {
  if (aopc_lerf == 0.0) return std::nullopt;
  return aopc_morf / aopc_lerf;
}

void EvalConfig::validate() const {
  curve.validate();
  if (smoothgrad_samples < 1) throw std::invalid_argument("smoothgrad samples must be >= 1");
  if (!(smoothgrad_sigma >= 0.0)) throw std::invalid_argument("smoothgrad sigma must be >= 0");
  if (ig_steps < 1) throw std::invalid_argument("ig steps must be >= 1");
}

SaliencyMap saliency_for(const ParamSet<float>& params, const Tensor<float>& x, int y,
                         const EvalConfig& cfg, Rng& rng) {
  switch (cfg.saliency) {
    case SaliencyMethod::vanilla:
      return vanilla_gsmap(params, x, y);
    case SaliencyMethod::smooth_grad:
      return smooth_grad(params, x, y, cfg.smoothgrad_samples, cfg.smoothgrad_sigma, rng);
    case SaliencyMethod::integrated_gradients:
      return integrated_gradients(params, x, y, Tensor<float>::zeros(x.shape()), cfg.ig_steps);
  }
  return vanilla_gsmap(params, x, y);
}

SampleMetrics evaluate_sample(const ParamSet<float>& params, const Dataset& data, std::size_t i,
                              const EvalConfig& cfg, PerturbationCurve* lerf,
                              PerturbationCurve* morf) {
  const auto x = data.sample(i);
  SampleMetrics m;
  m.index = i;
  m.label = data.labels.at(i);
  const Tensor<float> one(Shape{1, data.channels, data.height, data.width}, x.values());
  m.predicted = static_cast<int>(argmax_rows(forward(params, one)).front());

  // Saliency and curves follow the predicted class, the one whose score
  // the perturbation curve tracks.
  Rng smooth = make_rng(cfg.seed, Stream::smoothing, i);
  const auto map = saliency_for(params, x, m.predicted, cfg, smooth);
  const bool any = (map.values > 0.0).any();
  m.entropy = any ? saliency_entropy(map) : kNaN;
  m.gini = any ? gini_index(map) : kNaN;
  m.size_kib = compressed_size_kib(map);

  // Both orderings see the same noise images.
  Rng fill_l = make_rng(cfg.seed, Stream::evaluation, i);
  Rng fill_m = make_rng(cfg.seed, Stream::evaluation, i);
  auto cl = perturbation_curve(params, x, map, Order::lerf, cfg.curve, fill_l);
  auto cm = perturbation_curve(params, x, map, Order::morf, cfg.curve, fill_m);
  m.aopc_lerf = aopc(cl);
  m.aopc_morf = aopc(cm);
  m.aopc_rel = aopc_rel(m.aopc_morf, m.aopc_lerf).value_or(kNaN);
  if (lerf) *lerf = std::move(cl);
  if (morf) *morf = std::move(cm);
  return m;
}

namespace {

double mean_defined(const std::vector<SampleMetrics>& s, double SampleMetrics::*field) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& m : s) {
    if (std::isnan(m.*field)) continue;
    sum += m.*field;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : kNaN;
}

PerturbationCurve mean_curve(std::span<const PerturbationCurve> curves, Order order) {
  PerturbationCurve out;
  out.order = order;
  if (curves.empty()) return out;
  out.fraction = curves[0].fraction;
  out.repeats = curves[0].repeats;
  const std::size_t L = curves[0].steps();
  out.values.assign(L, 0.0);
  out.stddev.assign(L, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    double sum = 0.0, sq = 0.0;
    for (const auto& c : curves) {
      sum += c.values[l];
      sq += c.values[l] * c.values[l];
    }
    const double n = static_cast<double>(curves.size());
    out.values[l] = sum / n;
    out.stddev[l] = std::sqrt(std::max(0.0, sq / n - out.values[l] * out.values[l]));
  }
  return out;
}

}  // namespace

void aggregate(MetricsReport& r, std::span<const PerturbationCurve> lerf,
               std::span<const PerturbationCurve> morf) {
  r.entropy = mean_defined(r.samples, &SampleMetrics::entropy);
  r.size_kib = mean_defined(r.samples, &SampleMetrics::size_kib);
  r.gini = mean_defined(r.samples, &SampleMetrics::gini);
  r.aopc_lerf = mean_defined(r.samples, &SampleMetrics::aopc_lerf);
  r.aopc_morf = mean_defined(r.samples, &SampleMetrics::aopc_morf);
  r.aopc_rel = aopc_rel(r.aopc_morf, r.aopc_lerf).value_or(kNaN);
  std::size_t correct = 0;
  for (const auto& m : r.samples) correct += m.predicted == m.label;
  r.accuracy = r.samples.empty() ? kNaN
                                 : static_cast<double>(correct) / static_cast<double>(r.samples.size());
  r.lerf = mean_curve(lerf, Order::lerf);
  r.morf = mean_curve(morf, Order::morf);
}

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SCAAT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

MetricsReport evaluate_model(const ParamSet<float>& params, const Dataset& data,
                             const EvalConfig& cfg) {
  cfg.validate();
  data.validate();
  if (params.spec.input_shape() != data.sample_shape() ||
      params.spec.num_classes != data.num_classes) {
    throw std::invalid_argument("model expects " + shape_str(params.spec.input_shape()) +
                                " with " + std::to_string(params.spec.num_classes) +
                                " classes, dataset has " + shape_str(data.sample_shape()) +
                                " with " + std::to_string(data.num_classes));
  }
  const std::size_t n = cfg.limit ? std::min(cfg.limit, data.size()) : data.size();
  const auto frozen = frozen_view(params);

  MetricsReport report;
  report.samples.resize(n);
  std::vector<PerturbationCurve> lerf(n), morf(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < n; i += stride) {
      try {
        report.samples[i] = evaluate_sample(frozen, data, i, cfg, &lerf[i], &morf[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = worker_count(n);
  if (workers <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  aggregate(report, lerf, morf);
  return report;
}

}  // namespace scaat
