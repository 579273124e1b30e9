#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/numerics/tape.hpp"

namespace enecg::experts {

enum class ExpertArch { spectral, convolutional, statistical };

inline std::string_view to_string(ExpertArch a) {
  switch (a) {
    case ExpertArch::spectral: return "spectral";
    case ExpertArch::convolutional: return "convolutional";
    case ExpertArch::statistical: return "statistical";
  }
  return "?";
}

inline ExpertArch parse_arch(std::string_view tag) {
  if (tag == "spectral") return ExpertArch::spectral;
  if (tag == "convolutional") return ExpertArch::convolutional;
  if (tag == "statistical") return ExpertArch::statistical;
  throw UsageError("unknown expert architecture '" + std::string(tag) +
                   "' (expected spectral | convolutional | statistical)");
}

inline std::size_t default_input_len(ExpertArch a) {
  switch (a) {
    case ExpertArch::spectral: return 512;
    case ExpertArch::convolutional: return 1000;
    case ExpertArch::statistical: return 2500;
  }
  return 0;
}

inline constexpr std::size_t kSpectralBins = 64;
inline constexpr std::size_t kStatPatches = 32;
inline constexpr std::size_t kConvChannels1 = 16;
inline constexpr std::size_t kConvChannels2 = 64;
inline constexpr std::size_t kConvWidth1 = 9;
inline constexpr std::size_t kConvWidth2 = 9;
inline constexpr std::size_t kConvStride = 4;

/// Frozen feature extractor standing in for a pretrained foundation model.
/// Parameters are drawn once from `seed` and never receive gradient.
class ExpertModel {
 public:
  ExpertModel(std::string name, ExpertArch arch, std::uint64_t seed, std::size_t input_len,
              std::size_t feature_dim, std::size_t n_leads)
      : name_(std::move(name)),
        arch_(arch),
        seed_(seed),
        input_len_(input_len),
        feature_dim_(feature_dim),
        n_leads_(n_leads) {
    if (input_len == 0 || feature_dim == 0 || n_leads == 0) {
      throw UsageError("expert '" + name_ + "': input length, feature dim and leads must be positive");
    }
    init_params();
  }

  const std::string& name() const noexcept { return name_; }
  ExpertArch arch() const noexcept { return arch_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t required_input_len() const noexcept { return input_len_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t n_leads() const noexcept { return n_leads_; }
  const std::vector<Tensor>& parameters() const noexcept { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 0;
    for (const auto& p : params_) h = numerics::combine_checksums(h, p.checksum());
    return h;
  }

  /// x: [n_leads x required_input_len] -> [feature_dim]. Differentiable in x.
  Var forward(const Var& x) const {
    const Shape& s = x.shape();
    if (s.size() != 2 || s[0] != n_leads_ || s[1] != input_len_) {
      throw DimensionError("expert '" + name_ + "' expects input [" + std::to_string(n_leads_) +
                           "x" + std::to_string(input_len_) + "] (length " +
                           std::to_string(input_len_) + "), got " + numerics::shape_str(s));
    }
    using namespace numerics;
    Tape& tape = *x.tape();
    Var pre;
    switch (arch_) {
      case ExpertArch::spectral: {
        Var mag = scale(dft_magnitude(x, kSpectralBins), 2.0 / static_cast<double>(input_len_));
        pre = reshape(mag, {1, n_leads_ * kSpectralBins});
        break;
      }
      case ExpertArch::convolutional: {
        Var h1 = relu(conv1d(x, tape.leaf(params_[2]), kConvStride));
        Var h2 = relu(conv1d(h1, tape.leaf(params_[3]), kConvStride));
        pre = reshape(mean_pool(h2, h2.shape()[1]), {1, kConvChannels2});
        break;
      }
      case ExpertArch::statistical: {
        const std::size_t w = input_len_ / kStatPatches;
        Var mu = mean_pool(x, w);
        Var mx = max_pool(x, w);
        Var mn = scale(max_pool(scale(x, -1.0), w), -1.0);
        Var var = add(mean_pool(mul(x, x), w), scale(mul(mu, mu), -1.0));
        Var sd = numerics::sqrt(var);
        pre = reshape(concat({mu, sd, mn, mx}, 1), {1, n_leads_ * 4 * kStatPatches});
        break;
      }
    }
    Var out = matmul(pre, tape.leaf(params_[0]));
    return add(reshape(out, {feature_dim_}), tape.leaf(params_[1]));
  }

  Tensor forward(const Tensor& x) const {
    Tape tape;
    return forward(tape.leaf(x)).value();
  }

 private:
  void init_params() {
    std::mt19937_64 rng(seed_);
    auto normal = [&rng](Shape shape, double sd) {
      Tensor t(std::move(shape));
      std::normal_distribution<double> d(0.0, sd);
      for (double& v : t.data()) v = d(rng);
      return t;
    };
    std::size_t fan_in = 0;
    switch (arch_) {
      case ExpertArch::spectral:
        if (input_len_ < kSpectralBins) {
          throw DimensionError("spectral expert needs input length >= " +
                               std::to_string(kSpectralBins));
        }
        fan_in = n_leads_ * kSpectralBins;
        break;
      case ExpertArch::convolutional: {
        const std::size_t t1 = input_len_ < kConvWidth1 ? 0 : (input_len_ - kConvWidth1) / kConvStride + 1;
        if (t1 < kConvWidth2) {
          throw DimensionError("convolutional expert input length " + std::to_string(input_len_) +
                               " too short");
        }
        fan_in = kConvChannels2;
        break;
      }
      case ExpertArch::statistical:
        if (input_len_ < kStatPatches) {
          throw DimensionError("statistical expert needs input length >= " +
                               std::to_string(kStatPatches));
        }
        fan_in = n_leads_ * 4 * kStatPatches;
        break;
    }
    params_.push_back(normal({fan_in, feature_dim_}, 1.0 / std::sqrt(static_cast<double>(fan_in))));
    params_.push_back(normal({feature_dim_}, 0.1));
    if (arch_ == ExpertArch::convolutional) {
      params_.push_back(normal({kConvChannels1, n_leads_, kConvWidth1},
                               std::sqrt(2.0 / static_cast<double>(n_leads_ * kConvWidth1))));
      params_.push_back(normal({kConvChannels2, kConvChannels1, kConvWidth2},
                               std::sqrt(2.0 / static_cast<double>(kConvChannels1 * kConvWidth2))));
    }
    for (auto& p : params_) p.set_requires_grad(false);
  }

  std::string name_;
  ExpertArch arch_;
  std::uint64_t seed_;
  std::size_t input_len_;
  std::size_t feature_dim_;
  std::size_t n_leads_;
  std::vector<Tensor> params_;
};

inline ExpertModel build_expert(ExpertArch arch, std::uint64_t seed, std::size_t required_input_len,
                                std::size_t feature_dim, std::size_t n_leads = 12,
                                std::string name = {}) {
  if (name.empty()) name = std::string(to_string(arch));
  return ExpertModel(std::move(name), arch, seed, required_input_len, feature_dim, n_leads);
}

inline ExpertModel build_expert(std::string_view tag, std::uint64_t seed,
                                std::size_t required_input_len, std::size_t feature_dim,
                                std::size_t n_leads = 12, std::string name = {}) {
  return build_expert(parse_arch(tag), seed, required_input_len, feature_dim, n_leads,
                      std::move(name));
}

inline Tensor expert_forward(const ExpertModel& m, const Tensor& x) { return m.forward(x); }

}  // namespace enecg::experts
