#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/experts/expert.hpp"
#include "enecg/gating/gate.hpp"
#include "enecg/numerics/tape.hpp"
#include "enecg/pipeline/config.hpp"
#include "enecg/signal/record.hpp"
#include "enecg/signal/transforms.hpp"

namespace enecg::pipeline {

inline std::vector<experts::ExpertModel> build_experts(const std::vector<ExpertSpec>& roster,
                                                       std::size_t n_leads) {
  std::vector<experts::ExpertModel> out;
  out.reserve(roster.size());
  for (const auto& s : roster)
    out.push_back(experts::build_expert(s.arch, s.seed, s.input_len, s.feature_dim, n_leads, s.name));
  return out;
}

/// Frozen expert outputs and gate inputs for a whole dataset. Experts never
/// train, so their features are computed once and reused by every head.
struct FeatureCache {
  std::vector<Tensor> features;  // per expert [n x F_e]
  Tensor gate_inputs;            // [n x |leads| * pooled_len]
  std::vector<signal::LabelSet> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

using RecordSource = std::function<signal::LabeledRecord(std::size_t index)>;

/// Pulls records one at a time from `source`, so the raw signals of a large
/// dataset are never held in memory together.
inline FeatureCache featurize(std::span<const experts::ExpertModel> models,
                              const gating::GateOptions& gate, std::size_t n,
                              const RecordSource& source) {
  if (n == 0) throw UsageError("cannot featurize an empty dataset");
  if (models.empty()) throw UsageError("no experts to featurize with");
  FeatureCache c;
  const std::size_t g = gate.leads.size() * gate.pooled_len;
  for (const auto& m : models) c.features.emplace_back(Shape{n, m.feature_dim()});
  c.gate_inputs = Tensor({n, g});
  c.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const signal::LabeledRecord r = source(i);
    for (std::size_t e = 0; e < models.size(); ++e) {
      const Tensor f = models[e].forward(signal::downsample(r.record.leads, models[e].required_input_len()));
      std::copy(f.data().begin(), f.data().end(), &c.features[e][i * f.size()]);
    }
    const Tensor gi = gating::gate_input(r.record.leads, gate);
    std::copy(gi.data().begin(), gi.data().end(), &c.gate_inputs[i * g]);
    c.labels.push_back(r.labels);
  }
  return c;
}

inline FeatureCache featurize(std::span<const experts::ExpertModel> models,
                              const gating::GateOptions& gate,
                              std::span<const signal::LabeledRecord> records) {
  return featurize(models, gate, records.size(), [&](std::size_t i) { return records[i]; });
}

/// Per-column affine map (x - mean) * inv_std, frozen after fitting.
struct Standardizer {
  Tensor mean;
  Tensor inv_std;

  static Standardizer identity(std::size_t dim) { return {Tensor({dim}, 0.0), Tensor({dim}, 1.0)}; }

  /// Fits on the given rows of x [n x F]; columns with zero spread keep scale 1.
  static Standardizer fit(const Tensor& x, std::span<const std::size_t> rows) {
    if (rows.empty()) throw UsageError("cannot fit a standardizer on zero rows");
    const std::size_t f = x.size() / x.dim(0);
    Standardizer s{Tensor({f}, 0.0), Tensor({f}, 1.0)};
    for (std::size_t r : rows)
      for (std::size_t j = 0; j < f; ++j) s.mean[j] += x[r * f + j];
    const auto n = static_cast<double>(rows.size());
    for (std::size_t j = 0; j < f; ++j) s.mean[j] /= n;
    std::vector<double> var(f, 0.0);
    for (std::size_t r : rows)
      for (std::size_t j = 0; j < f; ++j) {
        const double d = x[r * f + j] - s.mean[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < f; ++j) {
      const double sd = std::sqrt(var[j] / n);
      s.inv_std[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    return s;
  }

  Var apply(const Var& x) const {
    Tape& tape = *x.tape();
    Tensor neg = mean;
    for (double& v : neg.data()) v = -v;
    return numerics::mul(numerics::add(x, tape.constant(std::move(neg))), tape.leaf(inv_std));
  }
};

/// Affine target coding for regression: z = (y - mean) / scale.
struct TargetScaler {
  double mean = 0.0;
  double scale = 1.0;

  double encode(double y) const { return (y - mean) / scale; }
  double decode(double z) const { return z * scale + mean; }
};

}  // namespace enecg::pipeline
