#pragma once

#include <array>
#include <string>
#include <string_view>

#include "enecg/error.hpp"
#include "enecg/gating/baselines.hpp"
#include "enecg/signal/record.hpp"

namespace enecg::pipeline {

enum class TaskName { rr, age, sex, potassium, arrhythmia };
enum class LossKind { mse, weighted_bce, cross_entropy };
enum class MetricKind { mae, f1, accuracy };

using gating::TargetKind;

struct TaskSpec {
  TaskName name = TaskName::rr;
  TargetKind kind = TargetKind::regression;
  std::size_t output_dim = 1;
  LossKind loss = LossKind::mse;
  MetricKind metric = MetricKind::mae;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

inline constexpr std::array<TaskName, 5> kAllTasks{TaskName::rr, TaskName::age, TaskName::sex,
                                                   TaskName::potassium, TaskName::arrhythmia};

inline TaskSpec task_spec(TaskName name) {
  switch (name) {
    case TaskName::rr:
    case TaskName::age:
      return {name, TargetKind::regression, 1, LossKind::mse, MetricKind::mae};
    case TaskName::sex:
    case TaskName::potassium:
      return {name, TargetKind::binary, 1, LossKind::weighted_bce, MetricKind::f1};
    case TaskName::arrhythmia:
      return {name, TargetKind::multiclass, signal::kArrhythmiaClasses, LossKind::cross_entropy,
              MetricKind::accuracy};
  }
  throw UsageError("unknown task");
}

inline std::string_view to_string(TaskName t) {
  switch (t) {
    case TaskName::rr: return "rr";
    case TaskName::age: return "age";
    case TaskName::sex: return "sex";
    case TaskName::potassium: return "potassium";
    case TaskName::arrhythmia: return "arrhythmia";
  }
  return "?";
}

inline std::string_view to_string(MetricKind m) {
  switch (m) {
    case MetricKind::mae: return "mae";
    case MetricKind::f1: return "f1";
    case MetricKind::accuracy: return "accuracy";
  }
  return "?";
}

inline TaskName parse_task(std::string_view s) {
  for (TaskName t : kAllTasks)
    if (to_string(t) == s) return t;
  throw UsageError("unknown task '" + std::string(s) +
                   "' (expected rr | age | sex | potassium | arrhythmia)");
}

inline bool higher_is_better(MetricKind m) { return m != MetricKind::mae; }

/// Raw target of `task` for one label set; class tasks return the index.
inline double target_value(const signal::LabelSet& l, TaskName task) {
  switch (task) {
    case TaskName::rr: return l.rr_ms;
    case TaskName::age: return l.age_years;
    case TaskName::sex: return l.sex;
    case TaskName::potassium: return l.potassium_abnormal;
    case TaskName::arrhythmia: return l.arrhythmia_class;
  }
  return 0.0;
}

}  // namespace enecg::pipeline
