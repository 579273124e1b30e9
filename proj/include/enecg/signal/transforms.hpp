#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/numerics/tape.hpp"
#include "enecg/signal/record.hpp"

namespace enecg::signal {

inline std::size_t downsample_window(std::size_t length, std::size_t target_len) {
  if (target_len == 0) throw UsageError("downsample target length must be positive");
  if (target_len > length) {
    throw DimensionError("downsample target length " + std::to_string(target_len) +
                         " exceeds signal length " + std::to_string(length));
  }
  return length / target_len;
}

/// Window mean-pooling along time: window = floor(T / target_len), the first
/// target_len windows are kept and any trailing samples dropped.
inline Tensor downsample(const Tensor& leads, std::size_t target_len) {
  if (leads.rank() != 2) throw DimensionError("downsample expects leads x samples");
  const std::size_t c = leads.dim(0), len = leads.dim(1);
  const std::size_t window = downsample_window(len, target_len);
  if (window == 1) {
    Tensor out({c, target_len});
    for (std::size_t i = 0; i < c; ++i)
      std::copy_n(&leads[i * len], target_len, &out[i * target_len]);
    return out;
  }
  Tensor out({c, target_len});
  const auto w = static_cast<double>(window);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < target_len; ++j) {
      double acc = 0.0;
      const double* p = &leads[i * len + j * window];
      for (std::size_t u = 0; u < window; ++u) acc += p[u];
      out[i * target_len + j] = acc / w;
    }
  }
  return out;
}

inline Tensor downsample(const EcgRecord& x, std::size_t target_len) {
  return downsample(x.leads, target_len);
}

/// Differentiable form of downsample() for inputs recorded on a tape.
inline Var downsample(const Var& leads, std::size_t target_len) {
  const Shape& shape = leads.shape();
  if (shape.size() != 2) throw DimensionError("downsample expects leads x samples");
  const std::size_t window = downsample_window(shape[1], target_len);
  Var pooled = window == 1 ? leads : numerics::mean_pool(leads, window);
  if (pooled.shape()[1] == target_len) return pooled;
  return numerics::slice(pooled, 1, 0, target_len);
}

inline void check_lead_indices(std::span<const std::size_t> indices, std::size_t n_leads) {
  if (indices.empty()) throw UsageError("lead subset must be nonempty");
  std::vector<bool> seen(n_leads, false);
  for (std::size_t i : indices) {
    if (i >= n_leads) {
      throw DimensionError("lead index " + std::to_string(i) + " out of range for " +
                           std::to_string(n_leads) + " leads");
    }
    if (seen[i]) throw UsageError("duplicate lead index " + std::to_string(i));
    seen[i] = true;
  }
}

/// Row-selected copy in the given order.
inline Tensor leads_sample(const Tensor& leads, std::span<const std::size_t> indices) {
  if (leads.rank() != 2) throw DimensionError("leads_sample expects leads x samples");
  check_lead_indices(indices, leads.dim(0));
  const std::size_t len = leads.dim(1);
  Tensor out({indices.size(), len});
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(&leads[indices[r] * len], len, &out[r * len]);
  return out;
}

inline Tensor leads_sample(const EcgRecord& x, std::span<const std::size_t> indices) {
  return leads_sample(x.leads, indices);
}

inline Var leads_sample(const Var& leads, std::span<const std::size_t> indices) {
  const Shape& shape = leads.shape();
  if (shape.size() != 2) throw DimensionError("leads_sample expects leads x samples");
  check_lead_indices(indices, shape[0]);
  std::vector<Var> rows;
  rows.reserve(indices.size());
  for (std::size_t i : indices) rows.push_back(numerics::slice(leads, 0, i, i + 1));
  return rows.size() == 1 ? rows[0] : numerics::concat(rows, 0);
}

}  // namespace enecg::signal
