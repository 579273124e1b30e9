#pragma once

#include <optional>
#include <string>

#include "enecg/error.hpp"
#include "enecg/pipeline/model.hpp"
#include "enecg/saliency/integrated_gradients.hpp"

namespace enecg::saliency {

/// Logit column `column` of task `task` as a function of the raw record.
/// Without `expert` the combined (gate-weighted) logit is attributed;
/// otherwise the head logit of that expert alone.
inline ScalarModel model_target(pipeline::EnsembleModel& model, std::size_t task,
                                std::size_t column = 0,
                                std::optional<std::size_t> expert = std::nullopt) {
  if (task >= model.tasks().size()) throw UsageError("task index out of range");
  if (column >= model.tasks()[task].output_dim) {
    throw DimensionError("task '" + std::string(pipeline::to_string(model.tasks()[task].name)) +
                         "' has " + std::to_string(model.tasks()[task].output_dim) +
                         " outputs, column " + std::to_string(column) + " requested");
  }
  if (expert && *expert >= model.n_experts()) throw UsageError("expert index out of range");
  const std::size_t col = model.offset(task) + column;
  return [&model, col, expert](const Var& x) {
    pipeline::ForwardParts p = model.forward_record(x, true);
    if (!expert) return numerics::sum(numerics::slice(p.combined, 1, col, col + 1));
    Var e = numerics::slice(p.logits, 1, *expert, *expert + 1);
    return numerics::sum(numerics::slice(e, 2, col, col + 1));
  };
}

}  // namespace enecg::saliency
