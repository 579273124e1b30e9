#pragma once

#include <algorithm>
#include <chrono>
#include <span>
#include <string>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/gating/baselines.hpp"
#include "enecg/metrics.hpp"
#include "enecg/pipeline/features.hpp"
#include "enecg/pipeline/model.hpp"
#include "enecg/pipeline/task.hpp"
#include "enecg/pipeline/train.hpp"

namespace enecg::pipeline {

/// Validation/test targets of one task in the model's coding (regression
/// targets encoded by `scaler`).
inline gating::Targets task_targets(const TaskSpec& spec, const TargetScaler& scaler,
                                    const FeatureCache& cache, std::span<const std::size_t> rows) {
  gating::Targets t{spec.kind, {}};
  for (std::size_t r : rows) {
    const double v = target_value(cache.labels.at(r), spec.name);
    t.values.push_back(spec.kind == TargetKind::regression ? scaler.encode(v) : v);
  }
  return t;
}

/// Columns [offset, offset + L) of a [n x W] logit matrix.
inline Tensor task_columns(const Tensor& combined, std::size_t offset, std::size_t l) {
  const std::size_t n = combined.dim(0), w = combined.size() / n;
  Tensor out({n, l});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(&combined[i * w + offset], l, &out[i * l]);
  return out;
}

/// Task metric of logits [n x L] against raw labels: MAE on decoded values,
/// F1 with sigmoid > 0.5, or top-1 accuracy.
inline double task_metric(const TaskSpec& spec, const TargetScaler& scaler, const Tensor& logits,
                          std::span<const signal::LabelSet> labels) {
  const std::size_t n = labels.size();
  if (n == 0) throw UsageError("cannot evaluate an empty split");
  if (logits.dim(0) != n || logits.size() != n * spec.output_dim) {
    throw DimensionError("task '" + std::string(to_string(spec.name)) + "' expects [" +
                         std::to_string(n) + "x" + std::to_string(spec.output_dim) +
                         "] logits, got " + numerics::shape_str(logits.shape()));
  }
  switch (spec.metric) {
    case MetricKind::mae: {
      std::vector<double> pred(n), truth(n);
      for (std::size_t i = 0; i < n; ++i) {
        pred[i] = scaler.decode(logits[i]);
        truth[i] = target_value(labels[i], spec.name);
      }
      return metrics::mae(pred, truth);
    }
    case MetricKind::f1: {
      std::vector<int> pred(n), truth(n);
      for (std::size_t i = 0; i < n; ++i) {
        pred[i] = logits[i] > 0.0 ? 1 : 0;
        truth[i] = static_cast<int>(target_value(labels[i], spec.name));
      }
      return metrics::f1_binary(pred, truth);
    }
    case MetricKind::accuracy: {
      const std::size_t l = spec.output_dim;
      std::vector<int> pred(n), truth(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double* row = &logits[i * l];
        pred[i] = static_cast<int>(std::max_element(row, row + l) - row);
        truth[i] = static_cast<int>(target_value(labels[i], spec.name));
      }
      return metrics::accuracy(pred, truth);
    }
  }
  return 0.0;
}

/// One metric value per task of the model on the given rows.
inline std::vector<double> evaluate(EnsembleModel& model, const FeatureCache& cache,
                                    std::span<const std::size_t> rows, bool with_lora = true) {
  if (rows.empty()) throw UsageError("cannot evaluate an empty split");
  const Tensor combined = predict(model, cache, rows, with_lora);
  const auto labels = gather_labels(cache, rows);
  std::vector<double> out;
  for (std::size_t t = 0; t < model.tasks().size(); ++t) {
    const TaskSpec& spec = model.tasks()[t];
    out.push_back(task_metric(spec, model.target_scaler(t),
                              task_columns(combined, model.offset(t), spec.output_dim), labels));
  }
  return out;
}

/// Efficiency figures of one model.
struct BenchResult {
  double inference_sps = 0.0;  // end to end from raw records
  double train_sps = 0.0;      // optimizer steps on cached expert features
  std::size_t params_trainable = 0;
  std::size_t params_frozen = 0;
  std::size_t params_total = 0;
  std::size_t activation_bytes = 0;  // one training batch, forward + backward
  std::size_t passes = 0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw UsageError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Median throughput over `passes` timed passes. Inference runs the full
/// per-record path (downsample, frozen experts, heads, gate); training steps
/// run on a copy of the model so the original is left untouched.
inline BenchResult bench(EnsembleModel& model, std::span<const signal::LabeledRecord> records,
                         const FeatureCache& cache, std::span<const std::size_t> rows,
                         std::size_t batch_size = 32, std::size_t passes = 3) {
  if (passes == 0) throw UsageError("bench needs at least one pass");
  if (records.empty() || rows.empty()) throw UsageError("bench needs records and rows");
  using clock = std::chrono::steady_clock;
  BenchResult r;
  r.passes = passes;
  r.params_trainable = model.trainable_count();
  r.params_total = model.total_count();
  r.params_frozen = model.frozen_count();

  std::vector<double> inf, trn;
  for (std::size_t p = 0; p < passes; ++p) {
    const auto t0 = clock::now();
    for (const auto& rec : records) {
      Tape tape;
      (void)model.forward_record(tape.leaf(rec.record.leads), true);
    }
    inf.push_back(static_cast<double>(records.size()) /
                  std::max(1e-9, std::chrono::duration<double>(clock::now() - t0).count()));
  }

  EnsembleModel copy = model;
  const std::vector<Tensor*> params = copy.trainable_params();
  for (Tensor* q : params) q->ensure_grad();
  const std::vector<double> pos_weight(copy.tasks().size(), 1.0);
  numerics::AdamState adam({1e-3});
  for (std::size_t p = 0; p < passes; ++p) {
    const auto t0 = clock::now();
    std::size_t seen = 0;
    for (std::size_t s = 0; s < rows.size(); s += batch_size) {
      const auto part = rows.subspan(s, std::min(batch_size, rows.size() - s));
      Tape tape;
      ForwardParts fp = copy.forward_features(tape, gather_features(cache, part),
                                              numerics::gather_rows(cache.gate_inputs, part));
      const auto labels = gather_labels(cache, part);
      Var loss = task_loss(copy, fp.combined, labels, pos_weight);
      for (Tensor* q : params) q->zero_grad();
      tape.backward(loss);
      numerics::adam_step(params, adam);
      if (s == 0) r.activation_bytes = std::max(r.activation_bytes, tape.activation_bytes());
      seen += part.size();
    }
    trn.push_back(static_cast<double>(seen) /
                  std::max(1e-9, std::chrono::duration<double>(clock::now() - t0).count()));
  }
  r.inference_sps = median(inf);
  r.train_sps = median(trn);
  return r;
}

}  // namespace enecg::pipeline
