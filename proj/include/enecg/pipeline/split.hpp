#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "enecg/error.hpp"

namespace enecg::pipeline {

struct Split {
  std::vector<std::size_t> train, val, test;
};

inline void check_ratios(const std::array<double, 3>& ratios) {
  for (double r : ratios) {
    if (!(r > 0.0)) throw UsageError("split ratios must be positive");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw UsageError("split ratios must sum to 1");
  }
}

/// Seeded shuffle of 0..n-1 followed by a contiguous train/val/test partition.
inline Split split(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed) {
  if (n == 0) throw UsageError("cannot split an empty dataset");
  check_ratios(ratios);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto dn = static_cast<double>(n);
  const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(ratios[0] * dn)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios[1] * dn)));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

}  // namespace enecg::pipeline
