#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "enecg/adapters/checkpoint.hpp"
#include "enecg/error.hpp"
#include "enecg/numerics/tape.hpp"

namespace enecg::adapters {

/// lora: W0 frozen, only A, B (and optionally bias) train.
/// full: W0 trains directly, no low-rank factors (ablation).
enum class AdaptMode { lora, full };

struct LoraOptions {
  std::size_t rank = 4;
  bool bias_trainable = true;
  AdaptMode mode = AdaptMode::lora;
};

/// h = (W0 + B A) x + bias, evaluated as W0 x + B (A x).
///
/// W0 is d x k, A is r x k, B is d x r. The effective rank is
/// min(rank, d, k) so narrow output layers stay valid. A is drawn from
/// U(+-1/sqrt(k)) and B starts at zero, so the initial output equals W0 x + bias.
class LoraLinear {
 public:
  LoraLinear(std::size_t in_features, std::size_t out_features, const LoraOptions& opts,
             std::mt19937_64& rng)
      : mode_(opts.mode), bias_trainable_(opts.bias_trainable) {
    if (in_features == 0 || out_features == 0) throw UsageError("LoraLinear needs positive extents");
    const std::size_t k = in_features, d = out_features;
    rank_ = mode_ == AdaptMode::lora ? std::min({opts.rank, d, k}) : 0;
    if (mode_ == AdaptMode::lora && opts.rank == 0) throw UsageError("LoRA rank must be >= 1");
    const double bound = 1.0 / std::sqrt(static_cast<double>(k));
    std::uniform_real_distribution<double> u(-bound, bound);
    w0_ = Tensor({d, k});
    for (double& v : w0_.data()) v = u(rng);
    bias_ = Tensor({d});
    if (rank_ > 0) {
      a_ = Tensor({rank_, k});
      for (double& v : a_.data()) v = u(rng);
      b_ = Tensor({d, rank_});
    }
    w0_.set_requires_grad(mode_ == AdaptMode::full);
    bias_.set_requires_grad(bias_trainable_);
    a_.set_requires_grad(rank_ > 0);
    b_.set_requires_grad(rank_ > 0);
  }

  std::size_t in_features() const { return w0_.dim(1); }
  std::size_t out_features() const { return w0_.dim(0); }
  std::size_t rank() const noexcept { return rank_; }
  AdaptMode mode() const noexcept { return mode_; }

  Tensor& w0() noexcept { return w0_; }
  const Tensor& w0() const noexcept { return w0_; }
  Tensor& bias() noexcept { return bias_; }
  const Tensor& bias() const noexcept { return bias_; }
  Tensor& a() noexcept { return a_; }
  const Tensor& a() const noexcept { return a_; }
  Tensor& b() noexcept { return b_; }
  const Tensor& b() const noexcept { return b_; }

  /// x: [n x k] or [k]. With `with_lora` false the low-rank branch is
  /// skipped, giving the frozen-base forward.
  Var forward(const Var& x, bool with_lora = true) {
    using namespace numerics;
    const Shape& s = x.shape();
    const std::size_t k = in_features();
    const bool vec = s.size() == 1;
    if (!((vec && s[0] == k) || (s.size() == 2 && s[1] == k))) {
      throw DimensionError("LoraLinear expects input of width " + std::to_string(k) + ", got " +
                           shape_str(s));
    }
    Tape& tape = *x.tape();
    Var in = vec ? reshape(x, {1, k}) : x;
    Var h = matmul(in, transpose(tape.leaf(w0_)));
    if (with_lora && rank_ > 0) {
      Var down = matmul(in, transpose(tape.leaf(a_)));
      h = add(h, matmul(down, transpose(tape.leaf(b_))));
    }
    h = add(h, tape.leaf(bias_));
    return vec ? reshape(h, {out_features()}) : h;
  }

  std::vector<Tensor*> trainable_params() {
    std::vector<Tensor*> out;
    if (mode_ == AdaptMode::full) out.push_back(&w0_);
    if (rank_ > 0) {
      out.push_back(&a_);
      out.push_back(&b_);
    }
    if (bias_trainable_) out.push_back(&bias_);
    return out;
  }

  std::size_t trainable_count() const {
    const std::size_t d = out_features(), k = in_features();
    std::size_t n = mode_ == AdaptMode::full ? d * k : rank_ * (d + k);
    if (bias_trainable_) n += d;
    return n;
  }

  std::size_t total_count() const {
    return w0_.size() + bias_.size() + (rank_ > 0 ? a_.size() + b_.size() : 0);
  }

  /// Checksum over whatever the configured mode keeps frozen.
  std::uint64_t frozen_checksum() const {
    std::uint64_t h = mode_ == AdaptMode::lora ? w0_.checksum() : 0;
    if (!bias_trainable_) h = numerics::combine_checksums(h, bias_.checksum());
    return h;
  }

  void save(Checkpoint& ck, const std::string& prefix) const {
    ck.put_meta(prefix + "/rank", std::to_string(rank_));
    ck.put(prefix + "/W0", w0_);
    ck.put(prefix + "/bias", bias_);
    if (rank_ > 0) {
      ck.put(prefix + "/A", a_);
      ck.put(prefix + "/B", b_);
    }
  }

  void load(const Checkpoint& ck, const std::string& prefix) {
    if (ck.meta_value(prefix + "/rank") != std::to_string(rank_)) {
      throw ParseError("checkpoint rank mismatch at '" + prefix + "'");
    }
    assign(w0_, ck.tensor(prefix + "/W0"), prefix + "/W0");
    assign(bias_, ck.tensor(prefix + "/bias"), prefix + "/bias");
    if (rank_ > 0) {
      assign(a_, ck.tensor(prefix + "/A"), prefix + "/A");
      assign(b_, ck.tensor(prefix + "/B"), prefix + "/B");
    }
  }

 private:
  static void assign(Tensor& dst, const Tensor& src, const std::string& name) {
    if (dst.shape() != src.shape()) {
      throw ParseError("checkpoint tensor '" + name + "' has shape " +
                       numerics::shape_str(src.shape()) + ", expected " +
                       numerics::shape_str(dst.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
  }

  AdaptMode mode_;
  bool bias_trainable_;
  std::size_t rank_ = 0;
  Tensor w0_, bias_, a_, b_;
};

/// Plain evaluation of one layer on a single input vector.
inline Tensor lora_forward(LoraLinear& layer, const Tensor& x) {
  Tape tape;
  return layer.forward(tape.leaf(static_cast<const Tensor&>(x))).value();
}

struct HeadOptions {
  std::size_t hidden = 64;
  std::size_t depth = 2;
  LoraOptions lora;
};

/// Per-expert, per-task output head: LoRA-adapted FFN with ReLU between
/// layers, mapping expert features to L task logits.
class LoraHead {
 public:
  LoraHead(std::size_t in_features, std::size_t output_dim, const HeadOptions& opts,
           std::mt19937_64& rng) {
    if (opts.depth != 1 && opts.depth != 2) throw UsageError("head depth must be 1 or 2");
    if (opts.depth == 2) {
      layers_.emplace_back(in_features, opts.hidden, opts.lora, rng);
      layers_.emplace_back(opts.hidden, output_dim, opts.lora, rng);
    } else {
      layers_.emplace_back(in_features, output_dim, opts.lora, rng);
    }
  }

  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t output_dim() const { return layers_.back().out_features(); }
  std::vector<LoraLinear>& layers() noexcept { return layers_; }
  const std::vector<LoraLinear>& layers() const noexcept { return layers_; }

  /// features: [n x k] or [k] -> [n x L] or [L].
  Var forward(const Var& features, bool with_lora = true) {
    Var h = features;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].forward(h, with_lora);
      if (i + 1 < layers_.size()) h = numerics::relu(h);
    }
    return h;
  }

  std::vector<Tensor*> trainable_params() {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
      for (Tensor* p : l.trainable_params()) out.push_back(p);
    return out;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.trainable_count();
    return n;
  }
  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.total_count();
    return n;
  }
  std::uint64_t frozen_checksum() const {
    std::uint64_t h = 0;
    for (const auto& l : layers_) h = numerics::combine_checksums(h, l.frozen_checksum());
    return h;
  }

  void save(Checkpoint& ck, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].save(ck, prefix + "/layer" + std::to_string(i));
  }
  void load(const Checkpoint& ck, const std::string& prefix) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].load(ck, prefix + "/layer" + std::to_string(i));
  }

 private:
  std::vector<LoraLinear> layers_;
};

inline std::vector<Tensor*> trainable_params(LoraHead& head) { return head.trainable_params(); }

inline Tensor head_forward(LoraHead& head, const Tensor& features) {
  Tape tape;
  return head.forward(tape.leaf(static_cast<const Tensor&>(features))).value();
}

}  // namespace enecg::adapters
