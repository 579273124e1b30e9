#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "enecg/adapters/lora.hpp"
#include "enecg/error.hpp"
#include "enecg/experts/expert.hpp"
#include "enecg/gating/gate.hpp"
#include "enecg/pipeline/split.hpp"
#include "enecg/pipeline/task.hpp"
#include "enecg/signal/generator.hpp"

namespace enecg::pipeline {

enum class Strategy { moe, zero_shot, greedy, sample_aware, uniform };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::moe: return "moe";
    case Strategy::zero_shot: return "zero_shot";
    case Strategy::greedy: return "greedy";
    case Strategy::sample_aware: return "sample_aware";
    case Strategy::uniform: return "uniform";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  for (Strategy v : {Strategy::moe, Strategy::zero_shot, Strategy::greedy, Strategy::sample_aware,
                     Strategy::uniform})
    if (to_string(v) == s) return v;
  throw UsageError("unknown ensemble strategy '" + std::string(s) +
                   "' (expected moe | zero_shot | greedy | sample_aware | uniform)");
}

struct ExpertSpec {
  std::string name;
  experts::ExpertArch arch = experts::ExpertArch::spectral;
  std::uint64_t seed = 0;
  std::size_t input_len = 0;
  std::size_t feature_dim = 64;
};

inline std::vector<ExpertSpec> default_experts() {
  using experts::ExpertArch;
  return {{"spectral", ExpertArch::spectral, 11, 512, 64},
          {"convolutional", ExpertArch::convolutional, 12, 1000, 64},
          {"statistical", ExpertArch::statistical, 13, 2500, 64}};
}

struct ExperimentConfig {
  std::uint64_t seed = 0;
  signal::GeneratorConfig generator;
  std::string data_manifest;  // empty: generate from `generator`
  std::vector<ExpertSpec> experts = default_experts();
  adapters::HeadOptions head;
  gating::GateOptions gate;
  std::vector<TaskName> tasks{kAllTasks.begin(), kAllTasks.end()};
  std::array<double, 3> split{0.7, 0.2, 0.1};
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  Strategy ensemble = Strategy::moe;
  bool class_weighting = true;
  bool standardize = true;
  bool joint = false;
  std::size_t repeats = 3;
  double greedy_step = 0.1;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    try {
      check_ratios(split);
    } catch (const UsageError& e) {
      fail(std::string("split: ") + e.what());
    }
    if (experts.empty()) fail("expert roster is empty");
    for (const auto& e : experts) {
      if (e.input_len == 0 || e.feature_dim == 0) {
        fail("expert '" + e.name + "': input_len and feature_dim must be positive");
      }
      if (e.input_len > generator.n_samples() && data_manifest.empty()) {
        fail("expert '" + e.name + "': input_len exceeds record length");
      }
    }
    for (std::size_t i = 0; i < experts.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (experts[i].name == experts[j].name) fail("duplicate expert name '" + experts[i].name + "'");
    if (tasks.empty()) fail("task list is empty");
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
    if (repeats == 0) fail("repeats must be positive");
    if (head.lora.rank == 0) fail("head rank must be >= 1");
    if (head.depth != 1 && head.depth != 2) fail("head depth must be 1 or 2");
    if (gate.pooled_len == 0) fail("gate pooled_len must be positive");
    if (!(greedy_step > 0.0 && greedy_step <= 1.0)) fail("greedy_step must lie in (0,1]");
    generator.validate();
  }
};

/// Seed of repeat `r`; repeat 0 uses the experiment seed itself.
inline std::uint64_t repeat_seed(std::uint64_t seed, std::size_t r) {
  return seed + 1000003ull * static_cast<std::uint64_t>(r);
}

}  // namespace enecg::pipeline
