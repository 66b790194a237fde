#include "scaat/divergence.hpp"

#include "scaat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace scaat {

namespace {

void check_lengths(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("divergence between distributions of length " +
                                std::to_string(p.size()) + " and " + std::to_string(q.size()));
  }
}

}  // namespace

double kl_div(std::span<const double> p, std::span<const double> q) {
  check_lengths(p, q);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    acc += p[i] * (std::log2(p[i] + kLogFloor) - std::log2(q[i] + kLogFloor));
  }
  return std::max(acc, 0.0);
}

double js_div(std::span<const double> p, std::span<const double> q) {
  check_lengths(p, q);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += (p[i] - q[i]) * (std::log2(p[i] + kLogFloor) - std::log2(q[i] + kLogFloor));
  }
  return 0.5 * acc;
}

}  // namespace scaat
