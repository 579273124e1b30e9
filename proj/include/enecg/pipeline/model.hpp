#pragma once

#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "enecg/adapters/checkpoint.hpp"
#include "enecg/adapters/lora.hpp"
#include "enecg/error.hpp"
#include "enecg/experts/expert.hpp"
#include "enecg/gating/gate.hpp"
#include "enecg/numerics/tape.hpp"
#include "enecg/pipeline/features.hpp"
#include "enecg/pipeline/task.hpp"
#include "enecg/signal/record_io.hpp"
#include "enecg/signal/transforms.hpp"

namespace enecg::pipeline {

/// Tape values of one forward pass.
struct ForwardParts {
  Var logits;    // [b x N x sum L]
  Var weights;   // [b x N x sum L]
  Var combined;  // [b x sum L]
};

/// EnECG for a group of tasks: one LoRA head per (expert, task) on top of
/// shared frozen experts, one gate producing weights over the experts, and
/// the weighted sum of expert logits. With a single expert the gate is
/// omitted and the head logits pass through unchanged.
class EnsembleModel {
 public:
  EnsembleModel(std::vector<const experts::ExpertModel*> members, std::vector<TaskSpec> tasks,
                const adapters::HeadOptions& head, const gating::GateOptions& gate,
                std::uint64_t seed)
      : members_(std::move(members)), tasks_(std::move(tasks)) {
    if (members_.empty()) throw UsageError("ensemble needs at least one expert");
    if (tasks_.empty()) throw UsageError("ensemble needs at least one task");
    std::mt19937_64 rng(seed);
    for (const auto* m : members_) {
      scalers_.push_back(Standardizer::identity(m->feature_dim()));
      for (const auto& t : tasks_) heads_.emplace_back(m->feature_dim(), t.output_dim, head, rng);
    }
    for (const auto& t : tasks_) {
      offsets_.push_back(output_dim_);
      output_dim_ += t.output_dim;
    }
    target_scalers_.resize(tasks_.size());
    if (members_.size() > 1) {
      gate_.emplace(members_.size(), gate.per_coordinate ? output_dim_ : 1, gate, rng);
    }
  }

  std::size_t n_experts() const noexcept { return members_.size(); }
  const std::vector<TaskSpec>& tasks() const noexcept { return tasks_; }
  std::size_t output_dim() const noexcept { return output_dim_; }
  std::size_t offset(std::size_t task) const { return offsets_.at(task); }
  const experts::ExpertModel& expert(std::size_t e) const { return *members_.at(e); }
  adapters::LoraHead& head(std::size_t e, std::size_t t) { return heads_.at(e * tasks_.size() + t); }
  const adapters::LoraHead& head(std::size_t e, std::size_t t) const {
    return heads_.at(e * tasks_.size() + t);
  }
  bool has_gate() const noexcept { return gate_.has_value(); }
  gating::GatingNetwork& gate() {
    if (!gate_) throw UsageError("single-expert model has no gate");
    return *gate_;
  }

  Standardizer& scaler(std::size_t e) { return scalers_.at(e); }
  const Standardizer& scaler(std::size_t e) const { return scalers_.at(e); }
  TargetScaler& target_scaler(std::size_t t) { return target_scalers_.at(t); }
  const TargetScaler& target_scaler(std::size_t t) const { return target_scalers_.at(t); }

  /// Forward from frozen expert features (one [b x F_e] per expert) and gate
  /// inputs [b x G].
  ForwardParts forward_features(Tape& tape, std::span<const Tensor> features,
                                const Tensor& gate_inputs, bool with_lora = true) {
    if (features.size() != members_.size()) {
      throw UsageError("expected features for " + std::to_string(members_.size()) +
                       " experts, got " + std::to_string(features.size()));
    }
    std::vector<Var> feats;
    for (const auto& f : features) feats.push_back(tape.constant(f));
    return forward_vars(feats, members_.size() > 1 ? tape.constant(gate_inputs) : Var{}, with_lora);
  }

  /// Fully on-tape forward from one raw record [C x T]: per-expert
  /// downsample, frozen expert, head, then gate on the sampled leads.
  ForwardParts forward_record(const Var& leads, bool with_lora = true) {
    std::vector<Var> feats;
    for (const auto* m : members_) {
      Var f = m->forward(signal::downsample(leads, m->required_input_len()));
      feats.push_back(numerics::reshape(f, {1, m->feature_dim()}));
    }
    Var g;
    if (gate_) {
      g = gating::gate_input(leads, gate_->options());
      g = numerics::reshape(g, {1, g.shape()[0]});
    }
    return forward_vars(feats, g, with_lora);
  }

  std::vector<Tensor*> trainable_params() {
    std::vector<Tensor*> out;
    for (auto& h : heads_)
      for (Tensor* p : h.trainable_params()) out.push_back(p);
    if (gate_)
      for (Tensor* p : gate_->trainable_params()) out.push_back(p);
    return out;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& h : heads_) n += h.trainable_count();
    if (gate_) n += gate_->trainable_count();
    return n;
  }

  /// Every parameter of the model, frozen experts included.
  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto* m : members_) n += m->parameter_count();
    for (const auto& h : heads_) n += h.total_count();
    if (gate_) n += gate_->total_count();
    return n;
  }

  std::size_t frozen_count() const { return total_count() - trainable_count(); }

  /// Checksum over expert parameters and every frozen adapter tensor.
  std::uint64_t frozen_checksum() const {
    std::uint64_t h = 0;
    for (const auto* m : members_) h = numerics::combine_checksums(h, m->checksum());
    for (const auto& hd : heads_) h = numerics::combine_checksums(h, hd.frozen_checksum());
    if (gate_) h = numerics::combine_checksums(h, gate_->frozen_checksum());
    return h;
  }

  void save(adapters::Checkpoint& ck) const {
    ck.put_meta("experts", std::to_string(members_.size()));
    ck.put_meta("output_dim", std::to_string(output_dim_));
    for (std::size_t e = 0; e < members_.size(); ++e) {
      const std::string& en = members_[e]->name();
      ck.put_meta("expert/" + en + "/checksum", std::to_string(members_[e]->checksum()));
      ck.put("scaler/" + en + "/mean", scalers_[e].mean);
      ck.put("scaler/" + en + "/inv_std", scalers_[e].inv_std);
      for (std::size_t t = 0; t < tasks_.size(); ++t)
        head(e, t).save(ck, "head/" + en + "/" + std::string(to_string(tasks_[t].name)));
    }
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      const std::string tn(to_string(tasks_[t].name));
      ck.put_meta("target/" + tn + "/mean", signal::format_double(target_scalers_[t].mean));
      ck.put_meta("target/" + tn + "/scale", signal::format_double(target_scalers_[t].scale));
    }
    if (gate_) gate_->save(ck, "gate");
  }

  void load(const adapters::Checkpoint& ck) {
    if (ck.meta_value("experts") != std::to_string(members_.size()) ||
        ck.meta_value("output_dim") != std::to_string(output_dim_)) {
      throw ParseError("checkpoint does not match the model layout");
    }
    for (std::size_t e = 0; e < members_.size(); ++e) {
      const std::string& en = members_[e]->name();
      if (ck.meta_value("expert/" + en + "/checksum") != std::to_string(members_[e]->checksum())) {
        throw ParseError("checkpoint was trained against a different expert '" + en + "'");
      }
      scalers_[e].mean = ck.tensor("scaler/" + en + "/mean");
      scalers_[e].inv_std = ck.tensor("scaler/" + en + "/inv_std");
      for (std::size_t t = 0; t < tasks_.size(); ++t)
        head(e, t).load(ck, "head/" + en + "/" + std::string(to_string(tasks_[t].name)));
    }
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      const std::string tn(to_string(tasks_[t].name));
      target_scalers_[t].mean = meta_double(ck, "target/" + tn + "/mean");
      target_scalers_[t].scale = meta_double(ck, "target/" + tn + "/scale");
    }
    if (gate_) gate_->load(ck, "gate");
  }

 private:
  static double meta_double(const adapters::Checkpoint& ck, const std::string& key) {
    double v = 0.0;
    if (!signal::detail::parse_number(ck.meta_value(key), v)) {
      throw ParseError("checkpoint meta '" + key + "' is not a number");
    }
    return v;
  }

  ForwardParts forward_vars(std::span<const Var> feats, const Var& gate_in, bool with_lora) {
    using namespace numerics;
    const std::size_t b = feats[0].shape()[0];
    const std::size_t n = members_.size();
    std::vector<Var> per_expert;
    for (std::size_t e = 0; e < n; ++e) {
      const Shape& s = feats[e].shape();
      if (s.size() != 2 || s[0] != b || s[1] != members_[e]->feature_dim()) {
        throw DimensionError("expert '" + members_[e]->name() + "' features must be [" +
                             std::to_string(b) + "x" + std::to_string(members_[e]->feature_dim()) +
                             "], got " + shape_str(s));
      }
      Var x = scalers_[e].apply(feats[e]);
      std::vector<Var> cols;
      for (std::size_t t = 0; t < tasks_.size(); ++t) cols.push_back(head(e, t).forward(x, with_lora));
      Var y = cols.size() == 1 ? cols[0] : concat(cols, 1);
      per_expert.push_back(reshape(y, {b, 1, output_dim_}));
    }
    ForwardParts out;
    out.logits = n == 1 ? per_expert[0] : concat(per_expert, 1);
    if (n == 1) {
      Tensor ones({b, 1, output_dim_}, 1.0);
      out.weights = feats[0].tape()->constant(std::move(ones));
      out.combined = reshape(per_expert[0], {b, output_dim_});
      return out;
    }
    if (gate_in.shape()[0] != b) throw DimensionError("gate input batch differs from feature batch");
    out.weights = gating::expand_weights(gate_->forward(gate_in, with_lora), output_dim_);
    out.combined = gating::combine(out.logits, out.weights);
    return out;
  }

  std::vector<const experts::ExpertModel*> members_;
  std::vector<TaskSpec> tasks_;
  std::vector<adapters::LoraHead> heads_;
  std::vector<Standardizer> scalers_;
  std::vector<TargetScaler> target_scalers_;
  std::vector<std::size_t> offsets_;
  std::size_t output_dim_ = 0;
  std::optional<gating::GatingNetwork> gate_;
};

/// Per-sample EnsembleOutputs of a batch [b x N x L] forward.
inline std::vector<gating::EnsembleOutput> to_outputs(const ForwardParts& p) {
  const Tensor& y = p.logits.value();
  const Tensor& w = p.weights.value();
  const Tensor& c = p.combined.value();
  const std::size_t b = y.dim(0), n = y.dim(1), l = y.dim(2);
  std::vector<gating::EnsembleOutput> out;
  for (std::size_t i = 0; i < b; ++i) {
    gating::EnsembleOutput o{Tensor({n, l}), Tensor({n, l}), Tensor({l})};
    std::copy_n(&y[i * n * l], n * l, o.logits.data().data());
    std::copy_n(&w[i * n * l], n * l, o.weights.data().data());
    std::copy_n(&c[i * l], l, o.combined.data().data());
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace enecg::pipeline
