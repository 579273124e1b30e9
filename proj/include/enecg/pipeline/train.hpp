#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/numerics/adam.hpp"
#include "enecg/numerics/tape.hpp"
#include "enecg/pipeline/features.hpp"
#include "enecg/pipeline/model.hpp"
#include "enecg/pipeline/task.hpp"

namespace enecg::pipeline {

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  bool class_weighting = true;
  bool standardize = true;
};

/// Model-selection score on the validation split, higher is better. When
/// unset, the negative validation loss is used.
using ValidationScore = std::function<double(EnsembleModel&)>;

/// Fits feature standardizers, regression target coding and positive-class
/// weights from the training rows. Returns the per-task positive weights.
inline std::vector<double> fit_preprocessing(EnsembleModel& model, const FeatureCache& cache,
                                             std::span<const std::size_t> train_rows,
                                             const TrainOptions& opts) {
  if (train_rows.empty()) throw UsageError("training split is empty");
  for (std::size_t e = 0; e < model.n_experts(); ++e) {
    model.scaler(e) = opts.standardize ? Standardizer::fit(cache.features[e], train_rows)
                                       : Standardizer::identity(model.expert(e).feature_dim());
  }
  std::vector<double> pos_weight(model.tasks().size(), 1.0);
  for (std::size_t t = 0; t < model.tasks().size(); ++t) {
    const TaskSpec& spec = model.tasks()[t];
    if (spec.kind == TargetKind::regression) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t r : train_rows) mean += target_value(cache.labels[r], spec.name);
      mean /= static_cast<double>(train_rows.size());
      for (std::size_t r : train_rows) {
        const double d = target_value(cache.labels[r], spec.name) - mean;
        sq += d * d;
      }
      const double sd = std::sqrt(sq / static_cast<double>(train_rows.size()));
      model.target_scaler(t) = opts.standardize ? TargetScaler{mean, sd > 0.0 ? sd : 1.0}
                                                : TargetScaler{};
    } else if (spec.kind == TargetKind::binary && opts.class_weighting) {
      double pos = 0.0;
      for (std::size_t r : train_rows) pos += target_value(cache.labels[r], spec.name);
      const double neg = static_cast<double>(train_rows.size()) - pos;
      pos_weight[t] = pos > 0.0 ? neg / pos : 1.0;
    }
  }
  return pos_weight;
}

/// Sum over tasks of each task's loss on its slice of the combined logits.
inline Var task_loss(const EnsembleModel& model, const Var& combined,
                     std::span<const signal::LabelSet> labels, std::span<const double> pos_weight) {
  const std::size_t b = labels.size();
  Var total;
  for (std::size_t t = 0; t < model.tasks().size(); ++t) {
    const TaskSpec& spec = model.tasks()[t];
    const std::size_t off = model.offset(t);
    Var z = model.tasks().size() == 1
                ? combined
                : numerics::slice(combined, 1, off, off + spec.output_dim);
    Var term;
    switch (spec.loss) {
      case LossKind::mse: {
        Tensor y({b, 1});
        for (std::size_t i = 0; i < b; ++i)
          y[i] = model.target_scaler(t).encode(target_value(labels[i], spec.name));
        term = numerics::mse_loss(z, y);
        break;
      }
      case LossKind::weighted_bce: {
        Tensor y({b, 1});
        for (std::size_t i = 0; i < b; ++i) y[i] = target_value(labels[i], spec.name);
        term = numerics::bce_with_logits(z, y, pos_weight[t]);
        break;
      }
      case LossKind::cross_entropy: {
        std::vector<std::size_t> y(b);
        for (std::size_t i = 0; i < b; ++i)
          y[i] = static_cast<std::size_t>(target_value(labels[i], spec.name));
        term = numerics::cross_entropy(z, y);
        break;
      }
    }
    total = t == 0 ? term : numerics::add(total, term);
  }
  return total;
}

inline std::vector<Tensor> gather_features(const FeatureCache& cache,
                                           std::span<const std::size_t> rows) {
  std::vector<Tensor> out;
  for (const auto& f : cache.features) out.push_back(numerics::gather_rows(f, rows));
  return out;
}

inline std::vector<signal::LabelSet> gather_labels(const FeatureCache& cache,
                                                   std::span<const std::size_t> rows) {
  std::vector<signal::LabelSet> out;
  for (std::size_t r : rows) out.push_back(cache.labels.at(r));
  return out;
}

/// Combined logits [n x sum L] for the given rows, computed in chunks.
inline Tensor predict(EnsembleModel& model, const FeatureCache& cache,
                      std::span<const std::size_t> rows, bool with_lora = true,
                      std::size_t chunk = 256) {
  if (rows.empty()) throw UsageError("cannot predict on an empty split");
  Tensor out({rows.size(), model.output_dim()});
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const auto part = rows.subspan(start, std::min(chunk, rows.size() - start));
    Tape tape;
    ForwardParts p = model.forward_features(tape, gather_features(cache, part),
                                            numerics::gather_rows(cache.gate_inputs, part), with_lora);
    const Tensor& c = p.combined.value();
    std::copy(c.data().begin(), c.data().end(), &out[start * model.output_dim()]);
  }
  return out;
}

inline double dataset_loss(EnsembleModel& model, const FeatureCache& cache,
                           std::span<const std::size_t> rows, std::span<const double> pos_weight,
                           std::size_t chunk = 256) {
  double acc = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const auto part = rows.subspan(start, std::min(chunk, rows.size() - start));
    Tape tape;
    ForwardParts p = model.forward_features(tape, gather_features(cache, part),
                                            numerics::gather_rows(cache.gate_inputs, part));
    const auto labels = gather_labels(cache, part);
    acc += task_loss(model, p.combined, labels, pos_weight).value().item() *
           static_cast<double>(part.size());
  }
  return acc / static_cast<double>(rows.size());
}

struct TrainHistory {
  std::vector<double> train_loss;  // [0]: before training; [e]: mean batch loss of epoch e
  std::vector<double> val_loss;    // [0]: before training; [e]: after epoch e
  std::vector<double> val_score;   // selection score per entry of val_loss
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  double seconds = 0.0;
};

/// Adam on the model's trainable tensors with a per-epoch shuffle. The
/// parameters with the lowest validation loss are restored at the end.
/// Expert and frozen adapter checksums are verified after training.
inline TrainHistory train_model(EnsembleModel& model, const FeatureCache& cache,
                                std::span<const std::size_t> train_rows,
                                std::span<const std::size_t> val_rows, const TrainOptions& opts,
                                const ValidationScore& val_score = {}) {
  if (opts.batch_size == 0) throw UsageError("batch size must be positive");
  const auto start_time = std::chrono::steady_clock::now();
  const std::vector<double> pos_weight = fit_preprocessing(model, cache, train_rows, opts);
  const std::uint64_t frozen_before = model.frozen_checksum();
  const std::vector<Tensor*> params = model.trainable_params();
  for (Tensor* p : params) p->ensure_grad();

  TrainHistory h;
  const bool has_val = !val_rows.empty();
  h.train_loss.push_back(dataset_loss(model, cache, train_rows, pos_weight));
  h.val_loss.push_back(has_val ? dataset_loss(model, cache, val_rows, pos_weight) : h.train_loss[0]);
  auto score_now = [&](double vl) { return val_score && has_val ? val_score(model) : -vl; };
  h.val_score.push_back(score_now(h.val_loss[0]));
  double best = h.val_score[0];
  std::vector<std::vector<double>> snapshot;
  auto take_snapshot = [&] {
    snapshot.clear();
    for (Tensor* p : params) snapshot.push_back(p->values());
  };
  take_snapshot();

  numerics::AdamState adam({opts.learning_rate});
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(train_rows.begin(), train_rows.end());
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += opts.batch_size) {
      const std::span<const std::size_t> rows(order.data() + s,
                                              std::min(opts.batch_size, order.size() - s));
      Tape tape;
      ForwardParts p = model.forward_features(tape, gather_features(cache, rows),
                                              numerics::gather_rows(cache.gate_inputs, rows));
      const auto labels = gather_labels(cache, rows);
      Var loss = task_loss(model, p.combined, labels, pos_weight);
      const double v = loss.value().item();
      if (!std::isfinite(v)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(h.steps + 1));
      }
      for (Tensor* q : params) q->zero_grad();
      tape.backward(loss);
      numerics::adam_step(params, adam);
      sum += v;
      ++batches;
      ++h.steps;
    }
    h.train_loss.push_back(sum / static_cast<double>(batches));
    const double vl = has_val ? dataset_loss(model, cache, val_rows, pos_weight) : h.train_loss.back();
    if (!std::isfinite(vl)) {
      throw NumericError("non-finite validation loss after epoch " + std::to_string(epoch));
    }
    h.val_loss.push_back(vl);
    h.val_score.push_back(score_now(vl));
    if (h.val_score.back() > best) {
      best = h.val_score.back();
      h.best_epoch = epoch;
      take_snapshot();
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->values() = snapshot[i];
  for (Tensor* p : params) p->clear_grad();
  if (model.frozen_checksum() != frozen_before) {
    throw NumericError("frozen parameters changed during training");
  }
  h.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return h;
}

}  // namespace enecg::pipeline
