#pragma once

#include <algorithm>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "enecg/adapters/lora.hpp"
#include "enecg/error.hpp"
#include "enecg/numerics/tape.hpp"
#include "enecg/signal/transforms.hpp"

namespace enecg::gating {

struct GateOptions {
  std::vector<std::size_t> leads{1};  // lead II
  std::size_t pooled_len = 250;
  std::size_t hidden = 64;
  bool per_coordinate = true;  // false: one scalar weight per expert
  adapters::LoraOptions lora;
};

/// Gate input for one record: selected leads, mean-pooled, flattened.
inline Tensor gate_input(const Tensor& leads, const GateOptions& opts) {
  Tensor sub = signal::downsample(signal::leads_sample(leads, opts.leads), opts.pooled_len);
  return sub.reshaped({sub.size()});
}

inline Var gate_input(const Var& leads, const GateOptions& opts) {
  Var sub = signal::downsample(signal::leads_sample(leads, opts.leads), opts.pooled_len);
  return numerics::reshape(sub, {opts.leads.size() * opts.pooled_len});
}

/// Mixture-of-experts gate: two LoRA-adapted layers with ReLU, softmax over
/// the expert axis. Output [n x N x cols], every (sample, column) slice of
/// the expert axis is a probability vector.
class GatingNetwork {
 public:
  GatingNetwork(std::size_t n_experts, std::size_t cols, GateOptions opts, std::mt19937_64& rng)
      : opts_(std::move(opts)), n_experts_(n_experts), cols_(cols) {
    if (n_experts == 0 || cols == 0) throw UsageError("gate needs at least one expert and column");
    if (opts_.leads.empty()) throw UsageError("gate lead subset must be nonempty");
    signal::check_lead_indices(opts_.leads,
                               1 + *std::max_element(opts_.leads.begin(), opts_.leads.end()));
    layers_.emplace_back(input_dim(), opts_.hidden, opts_.lora, rng);
    layers_.emplace_back(opts_.hidden, n_experts * cols, opts_.lora, rng);
  }

  const GateOptions& options() const noexcept { return opts_; }
  std::size_t n_experts() const noexcept { return n_experts_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t input_dim() const { return opts_.leads.size() * opts_.pooled_len; }
  std::vector<adapters::LoraLinear>& layers() noexcept { return layers_; }
  const std::vector<adapters::LoraLinear>& layers() const noexcept { return layers_; }

  /// Pre-softmax scores [n x N x cols].
  Var scores(const Var& input, bool with_lora = true) {
    const Shape& s = input.shape();
    const bool vec = s.size() == 1;
    if (!((vec && s[0] == input_dim()) || (s.size() == 2 && s[1] == input_dim()))) {
      throw DimensionError("gate expects input width " + std::to_string(input_dim()) + " (" +
                           std::to_string(opts_.leads.size()) + " leads x " +
                           std::to_string(opts_.pooled_len) + " samples), got " +
                           numerics::shape_str(s));
    }
    Var x = vec ? numerics::reshape(input, {1, input_dim()}) : input;
    Var h = numerics::relu(layers_[0].forward(x, with_lora));
    Var z = layers_[1].forward(h, with_lora);
    return numerics::reshape(z, {x.shape()[0], n_experts_, cols_});
  }

  Var forward(const Var& input, bool with_lora = true) {
    return numerics::softmax(scores(input, with_lora), 1);
  }

  std::vector<Tensor*> trainable_params() {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
      for (Tensor* p : l.trainable_params()) out.push_back(p);
    return out;
  }
  std::size_t trainable_count() const {
    return layers_[0].trainable_count() + layers_[1].trainable_count();
  }
  std::size_t total_count() const { return layers_[0].total_count() + layers_[1].total_count(); }
  std::uint64_t frozen_checksum() const {
    return numerics::combine_checksums(layers_[0].frozen_checksum(), layers_[1].frozen_checksum());
  }

  void save(adapters::Checkpoint& ck, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].save(ck, prefix + "/layer" + std::to_string(i));
  }
  void load(const adapters::Checkpoint& ck, const std::string& prefix) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].load(ck, prefix + "/layer" + std::to_string(i));
  }

 private:
  GateOptions opts_;
  std::size_t n_experts_;
  std::size_t cols_;
  std::vector<adapters::LoraLinear> layers_;
};

/// Weights [N x cols] for one pooled lead subset [|leads| x pooled_len].
inline Tensor gate_forward(GatingNetwork& g, const Tensor& lead_subset) {
  const auto& o = g.options();
  if (lead_subset.rank() != 2 || lead_subset.dim(0) != o.leads.size() ||
      lead_subset.dim(1) != o.pooled_len) {
    throw DimensionError("gate expects lead subset [" + std::to_string(o.leads.size()) + "x" +
                         std::to_string(o.pooled_len) + "], got " +
                         numerics::shape_str(lead_subset.shape()));
  }
  Tape tape;
  const Tensor flat = lead_subset.reshaped({lead_subset.size()});
  Var w = g.forward(tape.leaf(flat));
  return w.value().reshaped({g.n_experts(), g.cols()});
}

// ---------------------------------------------------------------------------
// Weighted-sum ensemble

/// logits, weights: [n x N x L] -> [n x L], summing over the expert axis.
inline Var combine(const Var& logits, const Var& weights) {
  if (logits.shape() != weights.shape()) {
    throw DimensionError("ensemble logits " + numerics::shape_str(logits.shape()) +
                         " vs weights " + numerics::shape_str(weights.shape()));
  }
  return numerics::sum(numerics::mul(weights, logits), 1);
}

/// Single-sample form: logits, weights [N x L] -> [L].
inline Tensor ensemble_combine(const Tensor& logits, const Tensor& weights) {
  if (logits.shape() != weights.shape() || logits.rank() != 2) {
    throw DimensionError("ensemble logits " + numerics::shape_str(logits.shape()) +
                         " vs weights " + numerics::shape_str(weights.shape()));
  }
  for (double w : weights.data()) {
    if (w < 0.0) throw UsageError("ensemble weights must be nonnegative");
  }
  const std::size_t n = logits.dim(0), l = logits.dim(1);
  Tensor out({l});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < l; ++j) out[j] += weights.at(i, j) * logits.at(i, j);
  return out;
}

/// Per-sample ensemble record.
struct EnsembleOutput {
  Tensor logits;    // [N x L]
  Tensor weights;   // [N x L]
  Tensor combined;  // [L]
};

}  // namespace enecg::gating
