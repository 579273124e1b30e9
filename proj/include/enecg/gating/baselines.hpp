#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/gating/gate.hpp"
#include "enecg/metrics.hpp"
#include "enecg/numerics/adam.hpp"
#include "enecg/numerics/tape.hpp"

// Reference weighting strategies compared against the learned gate:
// confidence-aware (zero-shot), greedy search (training-free) and a
// sample-aware weight generator (tuning). These are reconstructions; the
// procedures below are the definitions used throughout the project.

namespace enecg::gating {

enum class TargetKind { regression, binary, multiclass };

/// Validation targets: regression values, or class indices stored as doubles.
struct Targets {
  TargetKind kind = TargetKind::regression;
  std::vector<double> values;
};

/// Higher is better: -MAE, positive-class F1 (sigmoid > 0.5), or accuracy.
inline double score(const Targets& t, const Tensor& combined) {
  if (t.values.empty()) throw UsageError("score on an empty target set");
  const std::size_t n = t.values.size();
  if (combined.dim(0) != n) throw DimensionError("score: prediction rows != targets");
  const std::size_t l = combined.size() / n;
  switch (t.kind) {
    case TargetKind::regression: {
      std::vector<double> pred(n);
      for (std::size_t i = 0; i < n; ++i) pred[i] = combined[i * l];
      return -metrics::mae(pred, t.values);
    }
    case TargetKind::binary: {
      std::vector<int> pred(n), truth(n);
      for (std::size_t i = 0; i < n; ++i) {
        pred[i] = combined[i * l] > 0.0 ? 1 : 0;
        truth[i] = static_cast<int>(t.values[i]);
      }
      return metrics::f1_binary(pred, truth);
    }
    case TargetKind::multiclass: {
      std::vector<int> pred(n), truth(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double* row = &combined[i * l];
        pred[i] = static_cast<int>(std::max_element(row, row + l) - row);
        truth[i] = static_cast<int>(t.values[i]);
      }
      return metrics::accuracy(pred, truth);
    }
  }
  return 0.0;
}

inline void check_logit_set(std::span<const Tensor> logits) {
  if (logits.empty()) throw UsageError("no expert logits supplied");
  for (const auto& t : logits) {
    if (t.shape() != logits[0].shape()) {
      throw DimensionError("expert logit shapes differ: " + numerics::shape_str(t.shape()) +
                           " vs " + numerics::shape_str(logits[0].shape()));
    }
  }
}

/// sum_i weights[i] * logits[i]; each logits[i] is [n x L].
inline Tensor combine_static(std::span<const Tensor> logits, const Tensor& weights) {
  check_logit_set(logits);
  if (weights.size() != logits.size()) {
    throw DimensionError("static weights length " + std::to_string(weights.size()) + " vs " +
                         std::to_string(logits.size()) + " experts");
  }
  Tensor out(logits[0].shape());
  for (std::size_t i = 0; i < logits.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += weights[i] * logits[i][j];
  return out;
}

inline Tensor normalized(std::vector<double> w) {
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(s > 0.0)) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
  } else {
    for (double& v : w) v /= s;
  }
  return Tensor::vector(std::move(w));
}

/// Confidence-aware weights: cosine similarity between each expert's
/// flattened validation logits and the one-hot label matrix, clamped at 0
/// and normalized. A binary logit z is read as the two-class pair (-z/2, z/2).
inline Tensor zero_shot_confidence_weights(std::span<const Tensor> logits, const Targets& labels) {
  if (labels.kind == TargetKind::regression) {
    throw NotApplicableError("zero-shot confidence weighting does not apply to regression tasks");
  }
  check_logit_set(logits);
  const std::size_t n = labels.values.size();
  if (n == 0) throw UsageError("empty validation set");
  std::vector<double> w(logits.size(), 0.0);
  for (std::size_t e = 0; e < logits.size(); ++e) {
    const Tensor& z = logits[e];
    if (z.dim(0) != n) throw DimensionError("logit rows != validation labels");
    const std::size_t l = z.size() / n;
    double dot = 0.0, nz = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto y = static_cast<std::size_t>(labels.values[i]);
      if (labels.kind == TargetKind::binary) {
        const double a = -0.5 * z[i * l], b = 0.5 * z[i * l];
        dot += y == 1 ? b : a;
        nz += a * a + b * b;
      } else {
        for (std::size_t c = 0; c < l; ++c) {
          const double v = z[i * l + c];
          if (c == y) dot += v;
          nz += v * v;
        }
      }
    }
    const double cos = nz > 0.0 ? dot / (std::sqrt(nz) * std::sqrt(static_cast<double>(n))) : 0.0;
    w[e] = std::max(cos, 0.0);
  }
  return normalized(std::move(w));
}

struct GreedyResult {
  Tensor weights;
  std::vector<double> history;  // validation score after each accepted step
};

/// Starts from the best single expert; each round tries adding alpha * e_j
/// for every expert j and alpha on the grid (renormalizing), accepts the best
/// candidate if it strictly improves the validation score, else stops.
inline GreedyResult greedy_search(std::span<const Tensor> logits, const Targets& labels,
                                  double grid_step = 0.1, std::size_t max_rounds = 100) {
  if (labels.values.empty()) throw UsageError("greedy search needs a nonempty validation set");
  check_logit_set(logits);
  if (!(grid_step > 0.0 && grid_step <= 1.0)) throw UsageError("grid step must lie in (0,1]");
  const std::size_t n = logits.size();
  std::vector<double> w(n, 0.0);
  std::size_t best = 0;
  double best_score = -INFINITY;
  for (std::size_t e = 0; e < n; ++e) {
    const double s = score(labels, logits[e]);
    if (s > best_score) {
      best_score = s;
      best = e;
    }
  }
  w[best] = 1.0;
  GreedyResult out{Tensor::vector(w), {best_score}};
  const auto steps = static_cast<std::size_t>(std::floor(1.0 / grid_step + 1e-9));
  for (std::size_t round = 0; round < max_rounds; ++round) {
    double cand_score = best_score;
    std::vector<double> cand;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t s = 1; s <= steps; ++s) {
        std::vector<double> trial = w;
        trial[j] += grid_step * static_cast<double>(s);
        const Tensor tw = normalized(trial);
        const double sc = score(labels, combine_static(logits, tw));
        if (sc > cand_score) {
          cand_score = sc;
          cand.assign(tw.data().begin(), tw.data().end());
        }
      }
    }
    if (cand.empty()) break;
    w = cand;
    best_score = cand_score;
    out.history.push_back(best_score);
  }
  out.weights = Tensor::vector(w);
  return out;
}

inline Tensor greedy_search_weights(std::span<const Tensor> logits, const Targets& labels,
                                    double grid_step = 0.1) {
  return greedy_search(logits, labels, grid_step).weights;
}

// ---------------------------------------------------------------------------
// Sample-aware weight generator

/// Stacks per-expert [n x L] logits into [n x N x L].
inline Tensor stack_experts(std::span<const Tensor> logits) {
  check_logit_set(logits);
  const std::size_t n = logits[0].dim(0), l = logits[0].size() / n, ne = logits.size();
  Tensor out({n, ne, l});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < ne; ++e)
      std::copy_n(&logits[e][i * l], l, &out[(i * ne + e) * l]);
  return out;
}

/// Broadcasts per-expert scalar weights [n x N x 1] to [n x N x L].
inline Var expand_weights(const Var& w, std::size_t l) {
  const std::size_t cols = w.shape()[2];
  if (cols == l) return w;
  if (cols != 1) {
    throw DimensionError("cannot expand " + std::to_string(cols) + " weight columns to " +
                         std::to_string(l));
  }
  std::vector<Var> parts(l, w);
  return numerics::concat(parts, 2);
}

struct SampleAwareOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// Task loss on combined logits [b x L] for the given validation rows.
using CombinedLoss = std::function<Var(const Var& combined, std::span<const std::size_t> rows)>;

/// Trains a gate with full (non-LoRA) layers on the validation split only,
/// mapping each sample's gate input to weights over fixed expert logits.
inline GatingNetwork sample_aware_weights_train(const Tensor& gate_inputs,
                                                std::span<const Tensor> logits,
                                                const CombinedLoss& loss, GateOptions gate_opts,
                                                const SampleAwareOptions& opts) {
  check_logit_set(logits);
  const std::size_t n = gate_inputs.dim(0);
  if (n == 0 || logits[0].dim(0) != n) throw UsageError("sample-aware training needs validation rows");
  const std::size_t l = logits[0].size() / n;
  gate_opts.lora.mode = adapters::AdaptMode::full;
  std::mt19937_64 rng(opts.seed);
  GatingNetwork gate(logits.size(), gate_opts.per_coordinate ? l : 1, gate_opts, rng);
  const Tensor stacked = stack_experts(logits);
  auto params = gate.trainable_params();
  numerics::AdamState adam({opts.learning_rate});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += opts.batch_size) {
      const std::span<const std::size_t> rows(order.data() + start,
                                              std::min(opts.batch_size, n - start));
      Tape tape;
      Var w = expand_weights(gate.forward(tape.constant(numerics::gather_rows(gate_inputs, rows))), l);
      Var y = tape.constant(numerics::gather_rows(stacked, rows));
      Var objective = loss(combine(y, w), rows);
      if (!std::isfinite(objective.value().item())) {
        throw NumericError("sample-aware training: non-finite loss at epoch " +
                           std::to_string(epoch));
      }
      for (Tensor* p : params) p->zero_grad();
      tape.backward(objective);
      numerics::adam_step(params, adam);
    }
  }
  return gate;
}

/// Combined logits [n x L] from a trained generator over fixed expert logits.
inline Tensor sample_aware_combine(GatingNetwork& gate, const Tensor& gate_inputs,
                                   std::span<const Tensor> logits) {
  const std::size_t l = logits[0].size() / logits[0].dim(0);
  Tape tape;
  Var w = expand_weights(gate.forward(tape.constant(gate_inputs)), l);
  return combine(tape.constant(stack_experts(logits)), w).value();
}

}  // namespace enecg::gating
