#pragma once

#include <cstdint>
#include <random>

namespace scaat {

using Rng = std::mt19937_64;

/// Independent streams derived from one run seed. Each consumer draws from
/// its own stream so that skipping one consumer never shifts another.
enum class Stream : std::uint64_t {
  init = 1,
  data = 2,
  perturbation = 3,
  smoothing = 4,
  evaluation = 5,
  synthetic = 6,
};

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t salt = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(salt),
                    static_cast<std::uint32_t>(salt >> 32)};
  return Rng(seq);
}

}  // namespace scaat
