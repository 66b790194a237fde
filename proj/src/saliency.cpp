#include "scaat/saliency.hpp"

#include "scaat/fileio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace scaat {

std::string to_string(SaliencyMethod m) {
  switch (m) {
    case SaliencyMethod::vanilla:
      return "vanilla";
    case SaliencyMethod::smooth_grad:
      return "smoothgrad";
    case SaliencyMethod::integrated_gradients:
      return "ig";
  }
  return "vanilla";
}

SaliencyMethod saliency_method_from_string(const std::string& name) {
  if (name == "vanilla") return SaliencyMethod::vanilla;
  if (name == "smoothgrad") return SaliencyMethod::smooth_grad;
  if (name == "ig") return SaliencyMethod::integrated_gradients;
  throw std::invalid_argument("unknown saliency method '" + name +
                              "' (expected vanilla|smoothgrad|ig)");
}

SaliencyMap region_average(const SaliencyMap& map, std::size_t r) {
  const std::size_t h = map.height(), w = map.width();
  if (r == 0 || h % r != 0 || w % r != 0) {
    throw std::invalid_argument("region side " + std::to_string(r) + " does not divide " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  SaliencyMap out = map;
  out.region = r;
  const auto rr = static_cast<Eigen::Index>(r);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(h); i += rr) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(w); j += rr) {
      const double m = map.values.block(i, j, rr, rr).mean();
      out.values.block(i, j, rr, rr).setConstant(m);
    }
  }
  return out;
}

double quantile_threshold(std::span<const double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty list");
  if (!(q >= 0.0 && q <= 1.0)) {
    throw std::invalid_argument("quantile fraction must lie in [0,1], got " + std::to_string(q));
  }
  // The small slack keeps q values built by repeated +/- steps from
  // landing one position short.
  const auto pos = static_cast<std::size_t>(std::floor(q * static_cast<double>(values.size()) + 1e-9));
  if (pos >= values.size()) return std::numeric_limits<double>::infinity();
  std::vector<double> sorted(values.begin(), values.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(pos),
                   sorted.end());
  return sorted[pos];
}

IndexSet lowest(std::span<const double> values, double q) {
  const double threshold = quantile_threshold(values, q);
  IndexSet out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < threshold) out.push_back(i);
  }
  return out;
}

IndexSet lowest(const SaliencyMap& map, double q) { return lowest(map.flat(), q); }

std::size_t mask_region_side(std::size_t height, std::size_t width) {
  const std::size_t r = (height < 32 || width < 32) ? 2 : 4;
  if (height % r == 0 && width % r == 0) return r;
  return 1;
}

std::vector<std::uint8_t> to_gray8(const SaliencyMap& map) {
  const double lo = map.values.minCoeff();
  const double hi = map.values.maxCoeff();
  std::vector<std::uint8_t> out(map.size(), 0);
  if (!(hi > lo)) return out;
  const double* v = map.values.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (v[i] - lo) / (hi - lo)));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const SaliencyMap& map) {
  std::string bytes = "P5\n" + std::to_string(map.width()) + " " +
                      std::to_string(map.height()) + "\n255\n";
  const auto gray = to_gray8(map);
  bytes.append(reinterpret_cast<const char*>(gray.data()), gray.size());
  write_file_atomic(path, bytes);
}

void write_csv(const std::filesystem::path& path, const SaliencyMap& map) {
  std::string out;
  char buf[32];
  for (Eigen::Index i = 0; i < map.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < map.values.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", map.values(i, j));
      if (j) out += ',';
      out += buf;
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace scaat
