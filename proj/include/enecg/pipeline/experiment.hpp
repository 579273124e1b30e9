#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/gating/baselines.hpp"
#include "enecg/pipeline/config.hpp"
#include "enecg/pipeline/evaluate.hpp"
#include "enecg/pipeline/features.hpp"
#include "enecg/pipeline/model.hpp"
#include "enecg/pipeline/split.hpp"
#include "enecg/pipeline/train.hpp"

namespace enecg::pipeline {

/// Task groups trained together: one group per task, or one group holding
/// every task in joint mode.
inline std::vector<std::vector<TaskSpec>> task_groups(const ExperimentConfig& cfg) {
  std::vector<std::vector<TaskSpec>> out;
  if (cfg.joint) {
    out.emplace_back();
    for (TaskName t : cfg.tasks) out.back().push_back(task_spec(t));
  } else {
    for (TaskName t : cfg.tasks) out.push_back({task_spec(t)});
  }
  return out;
}

inline TrainOptions train_options(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainOptions o;
  o.epochs = cfg.epochs;
  o.batch_size = cfg.batch_size;
  o.learning_rate = cfg.learning_rate;
  o.seed = seed;
  o.class_weighting = cfg.class_weighting;
  o.standardize = cfg.standardize;
  return o;
}

/// Feature cache restricted to one expert, for single-expert models.
inline FeatureCache expert_view(const FeatureCache& cache, std::size_t e) {
  FeatureCache c;
  c.features = {cache.features.at(e)};
  c.gate_inputs = cache.gate_inputs;
  c.labels = cache.labels;
  return c;
}

/// Selection score for single-task groups is the task metric on the
/// validation rows (sign-adjusted); multi-task groups use the loss.
inline ValidationScore metric_score(const FeatureCache& cache, std::span<const std::size_t> val) {
  return [&cache, val](EnsembleModel& m) -> double {
    if (m.tasks().size() != 1) return std::nan("");
    const double v = evaluate(m, cache, val)[0];
    return higher_is_better(m.tasks()[0].metric) ? v : -v;
  };
}

/// Trained components of one task group for one repeat.
struct GroupRun {
  std::vector<TaskSpec> tasks;
  std::optional<EnsembleModel> enecg;
  std::vector<EnsembleModel> singles;
  TrainHistory enecg_history;
  std::vector<TrainHistory> single_history;
};

struct RepeatRun {
  std::uint64_t seed = 0;
  Split split;
  std::vector<GroupRun> groups;
};

inline EnsembleModel make_enecg(const std::vector<experts::ExpertModel>& models,
                                const std::vector<TaskSpec>& tasks, const ExperimentConfig& cfg,
                                std::uint64_t seed) {
  std::vector<const experts::ExpertModel*> members;
  for (const auto& m : models) members.push_back(&m);
  return EnsembleModel(members, tasks, cfg.head, cfg.gate, seed);
}

inline EnsembleModel make_single(const experts::ExpertModel& model,
                                 const std::vector<TaskSpec>& tasks, const ExperimentConfig& cfg,
                                 std::uint64_t seed) {
  return EnsembleModel({&model}, tasks, cfg.head, cfg.gate, seed);
}

/// Trains EnECG and every single-expert baseline for each task group.
inline RepeatRun train_repeat(const ExperimentConfig& cfg,
                              const std::vector<experts::ExpertModel>& models,
                              const FeatureCache& cache, std::uint64_t seed,
                              const std::function<void(const std::string&)>& log = {}) {
  RepeatRun run;
  run.seed = seed;
  run.split = split(cache.size(), cfg.split, seed);
  if (run.split.train.empty() || run.split.val.empty() || run.split.test.empty()) {
    throw UsageError("dataset of " + std::to_string(cache.size()) +
                     " records is too small for a train/val/test split");
  }
  const TrainOptions opts = train_options(cfg, seed);
  for (const auto& tasks : task_groups(cfg)) {
    GroupRun g;
    g.tasks = tasks;
    std::string label;
    for (const auto& t : tasks) label += (label.empty() ? "" : "+") + std::string(to_string(t.name));
    for (std::size_t e = 0; e < models.size(); ++e) {
      const FeatureCache view = expert_view(cache, e);
      g.singles.push_back(make_single(models[e], tasks, cfg, seed));
      g.single_history.push_back(train_model(g.singles.back(), view, run.split.train,
                                             run.split.val, opts,
                                             metric_score(view, run.split.val)));
      if (log) log("seed " + std::to_string(seed) + " " + label + ": trained " + models[e].name());
    }
    g.enecg.emplace(make_enecg(models, tasks, cfg, seed));
    g.enecg_history = train_model(*g.enecg, cache, run.split.train, run.split.val, opts,
                                  metric_score(cache, run.split.val));
    if (log) log("seed " + std::to_string(seed) + " " + label + ": trained enecg");
    run.groups.push_back(std::move(g));
  }
  return run;
}

/// Mean and sample standard deviation of repeated measurements.
struct Summary {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> values;
};

inline Summary summarize(std::vector<double> values) {
  Summary s;
  s.values = std::move(values);
  if (s.values.empty()) return s;
  for (double v : s.values) s.mean += v;
  s.mean /= static_cast<double>(s.values.size());
  if (s.values.size() > 1) {
    double acc = 0.0;
    for (double v : s.values) acc += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(acc / static_cast<double>(s.values.size() - 1));
  }
  return s;
}

/// Test metric of each ensembling strategy for one task of one group.
/// Strategies other than moe combine the fine-tuned single-expert logits;
/// zero-shot is absent for regression tasks.
inline std::map<Strategy, double> strategy_metrics(const ExperimentConfig& cfg, GroupRun& g,
                                                   std::size_t t, const FeatureCache& cache,
                                                   const Split& sp, std::uint64_t seed) {
  const TaskSpec& spec = g.tasks[t];
  EnsembleModel& ref = g.singles.front();
  const std::size_t off = ref.offset(t), l = spec.output_dim;
  const TargetScaler& scaler = ref.target_scaler(t);
  const auto test_labels = gather_labels(cache, sp.test);

  std::vector<Tensor> val_full, test_full, val_logits, test_logits;
  for (std::size_t e = 0; e < g.singles.size(); ++e) {
    const FeatureCache view = expert_view(cache, e);
    val_full.push_back(predict(g.singles[e], view, sp.val));
    test_full.push_back(predict(g.singles[e], view, sp.test));
    val_logits.push_back(task_columns(val_full.back(), off, l));
    test_logits.push_back(task_columns(test_full.back(), off, l));
  }
  const gating::Targets val_targets = task_targets(spec, scaler, cache, sp.val);
  auto metric_of = [&](const Tensor& logits) { return task_metric(spec, scaler, logits, test_labels); };

  std::map<Strategy, double> out;
  out[Strategy::moe] = metric_of(task_columns(predict(*g.enecg, cache, sp.test), g.enecg->offset(t), l));
  const std::size_t n = g.singles.size();
  out[Strategy::uniform] =
      metric_of(gating::combine_static(test_logits, Tensor({n}, 1.0 / static_cast<double>(n))));
  out[Strategy::greedy] = metric_of(gating::combine_static(
      test_logits, gating::greedy_search_weights(val_logits, val_targets, cfg.greedy_step)));
  if (spec.kind != TargetKind::regression) {
    out[Strategy::zero_shot] = metric_of(gating::combine_static(
        test_logits, gating::zero_shot_confidence_weights(val_logits, val_targets)));
  }

  // Sample-aware generator: trained on the validation split only, on the
  // task loss of the weighted combination of fixed single-expert logits.
  std::vector<double> pos_weight(g.tasks.size(), 1.0);
  if (cfg.class_weighting && spec.kind == TargetKind::binary) {
    double pos = 0.0;
    for (std::size_t r : sp.train) pos += target_value(cache.labels[r], spec.name);
    if (pos > 0.0) pos_weight[t] = (static_cast<double>(sp.train.size()) - pos) / pos;
  }
  const Tensor val_gate = numerics::gather_rows(cache.gate_inputs, sp.val);
  const std::vector<TaskSpec> one{spec};
  EnsembleModel loss_ref({&ref.expert(0)}, one, cfg.head, cfg.gate, seed);
  loss_ref.target_scaler(0) = scaler;
  const std::vector<double> pw{pos_weight[t]};
  const std::vector<std::size_t> val_rows = sp.val;
  gating::CombinedLoss loss = [&](const Var& combined, std::span<const std::size_t> rows) {
    std::vector<signal::LabelSet> labels;
    for (std::size_t r : rows) labels.push_back(cache.labels[val_rows[r]]);
    return task_loss(loss_ref, combined, labels, pw);
  };
  gating::SampleAwareOptions sa;
  sa.epochs = cfg.epochs;
  sa.batch_size = cfg.batch_size;
  sa.learning_rate = cfg.learning_rate;
  sa.seed = seed;
  gating::GatingNetwork gen =
      gating::sample_aware_weights_train(val_gate, val_logits, loss, cfg.gate, sa);
  out[Strategy::sample_aware] = metric_of(gating::sample_aware_combine(
      gen, numerics::gather_rows(cache.gate_inputs, sp.test), test_logits));
  return out;
}

struct TaskOutcome {
  TaskSpec spec;
  std::vector<double> enecg;                         // per repeat, test metric
  std::vector<std::vector<double>> single;           // [expert][repeat]
  std::map<Strategy, std::vector<double>> strategy;  // per repeat; absent if not applicable
  std::size_t params_trainable = 0;
  std::size_t params_frozen = 0;
  std::size_t params_total = 0;
  std::optional<BenchResult> bench;
  double train_seconds = 0.0;

  /// Index of the single expert with the best mean test metric.
  std::size_t best_single() const {
    std::size_t best = 0;
    double bv = 0.0;
    for (std::size_t e = 0; e < single.size(); ++e) {
      const double m = summarize(single[e]).mean;
      const bool better = higher_is_better(spec.metric) ? m > bv : m < bv;
      if (e == 0 || better) {
        best = e;
        bv = m;
      }
    }
    return best;
  }

  /// Headline values for the configured strategy.
  std::vector<double> headline(Strategy s) const {
    if (s == Strategy::moe) return enecg;
    const auto it = strategy.find(s);
    if (it == strategy.end()) {
      throw NotApplicableError("strategy '" + std::string(to_string(s)) +
                               "' does not apply to task '" + std::string(to_string(spec.name)) + "'");
    }
    return it->second;
  }
};

struct ExperimentResult {
  std::vector<std::string> expert_names;
  std::vector<TaskOutcome> tasks;
  std::vector<RepeatRun> runs;
  double wallclock_s = 0.0;
  double featurize_s = 0.0;
};

struct ExperimentOptions {
  bool compare = true;
  bool bench = true;
  std::size_t bench_records = 16;
  RecordSource bench_source;  // raw records for end-to-end inference timing
  std::function<void(const std::string&)> log;
};

/// Trains every repeat and evaluates EnECG, the single-expert baselines and
/// (optionally) the alternative ensembling strategies on the test split.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::vector<experts::ExpertModel>& models,
                                       const FeatureCache& cache, const ExperimentOptions& opts) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;
  for (const auto& m : models) res.expert_names.push_back(m.name());
  for (TaskName t : cfg.tasks) {
    TaskOutcome o;
    o.spec = task_spec(t);
    o.single.resize(models.size());
    res.tasks.push_back(std::move(o));
  }
  auto outcome = [&](TaskName name) -> TaskOutcome& {
    for (auto& o : res.tasks)
      if (o.spec.name == name) return o;
    throw UsageError("task missing from outcome table");
  };

  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const std::uint64_t seed = repeat_seed(cfg.seed, r);
    RepeatRun run = train_repeat(cfg, models, cache, seed, opts.log);
    for (auto& g : run.groups) {
      const std::vector<double> m = evaluate(*g.enecg, cache, run.split.test);
      std::vector<std::vector<double>> singles;
      for (std::size_t e = 0; e < g.singles.size(); ++e)
        singles.push_back(evaluate(g.singles[e], expert_view(cache, e), run.split.test));
      for (std::size_t t = 0; t < g.tasks.size(); ++t) {
        TaskOutcome& o = outcome(g.tasks[t].name);
        o.enecg.push_back(m[t]);
        for (std::size_t e = 0; e < singles.size(); ++e) o.single[e].push_back(singles[e][t]);
        o.params_trainable = g.enecg->trainable_count();
        o.params_frozen = g.enecg->frozen_count();
        o.params_total = g.enecg->total_count();
        o.train_seconds += g.enecg_history.seconds;
        if (opts.compare || cfg.ensemble != Strategy::moe) {
          for (const auto& [s, v] : strategy_metrics(cfg, g, t, cache, run.split, seed))
            o.strategy[s].push_back(v);
        }
        if (opts.bench && r == 0 && t == 0 && opts.bench_source) {
          std::vector<signal::LabeledRecord> recs;
          for (std::size_t i = 0; i < opts.bench_records; ++i) recs.push_back(opts.bench_source(i));
          const std::size_t rows = std::min<std::size_t>(run.split.train.size(), 512);
          const BenchResult b = bench(*g.enecg, recs, cache,
                                      std::span(run.split.train).subspan(0, rows), cfg.batch_size);
          for (const auto& task : g.tasks) outcome(task.name).bench = b;
        }
      }
    }
    res.runs.push_back(std::move(run));
  }
  res.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace enecg::pipeline
