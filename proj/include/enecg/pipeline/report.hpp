#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "enecg/error.hpp"
#include "enecg/pipeline/experiment.hpp"

namespace enecg::pipeline {

using json = nlohmann::ordered_json;

inline json summary_json(const Summary& s) {
  return json{{"mean", s.mean}, {"std", s.std}, {"values", s.values}};
}

/// MetricsReport: one entry per task with the headline metric of the
/// configured strategy, parameter counts, throughput and timing.
inline json metrics_report(const ExperimentConfig& cfg, const ExperimentResult& r) {
  json tasks = json::array();
  for (const auto& o : r.tasks) {
    const Summary s = summarize(o.headline(cfg.ensemble));
    json t{{"task", to_string(o.spec.name)},
           {"metric", to_string(o.spec.metric)},
           {"strategy", to_string(cfg.ensemble)},
           {"mean", s.mean},
           {"std", s.std},
           {"values", s.values},
           {"params_trainable", o.params_trainable},
           {"params_frozen", o.params_frozen},
           {"params_total", o.params_total},
           {"throughput_sps", o.bench ? o.bench->inference_sps : 0.0},
           {"train_throughput_sps", o.bench ? o.bench->train_sps : 0.0},
           {"activation_bytes", o.bench ? o.bench->activation_bytes : 0},
           {"wallclock_s", o.train_seconds}};
    json singles = json::object();
    for (std::size_t e = 0; e < o.single.size(); ++e)
      singles[r.expert_names[e]] = summary_json(summarize(o.single[e]));
    t["single_experts"] = singles;
    t["best_single"] = r.expert_names[o.best_single()];
    tasks.push_back(std::move(t));
  }
  return json{{"seed", cfg.seed},
              {"repeats", cfg.repeats},
              {"experts", r.expert_names},
              {"wallclock_s", r.wallclock_s},
              {"featurize_s", r.featurize_s},
              {"tasks", tasks}};
}

inline std::string metrics_csv(const ExperimentConfig& cfg, const ExperimentResult& r) {
  std::ostringstream os;
  os << "task,metric,mean,std,params_trainable,params_total,throughput_sps,wallclock_s\n";
  os.precision(10);
  for (const auto& o : r.tasks) {
    const Summary s = summarize(o.headline(cfg.ensemble));
    os << to_string(o.spec.name) << ',' << to_string(o.spec.metric) << ',' << s.mean << ','
       << s.std << ',' << o.params_trainable << ',' << o.params_total << ','
       << (o.bench ? o.bench->inference_sps : 0.0) << ',' << o.train_seconds << '\n';
  }
  return os.str();
}

inline constexpr const char* kNotApplicable = "not applicable";

/// Strategy table: rows are tasks, columns zero_shot, greedy, sample_aware,
/// moe (plus uniform). Zero-shot cells of regression rows are marked
/// not applicable.
inline json comparison_report(const ExperimentConfig& cfg, const ExperimentResult& r) {
  json rows = json::array();
  for (const auto& o : r.tasks) {
    json cols = json::object();
    for (Strategy s : {Strategy::zero_shot, Strategy::greedy, Strategy::sample_aware, Strategy::moe,
                       Strategy::uniform}) {
      const auto it = o.strategy.find(s);
      if (s == Strategy::moe) {
        cols["moe"] = summary_json(summarize(o.enecg));
      } else if (it == o.strategy.end()) {
        cols[std::string(to_string(s))] = kNotApplicable;
      } else {
        cols[std::string(to_string(s))] = summary_json(summarize(it->second));
      }
    }
    rows.push_back(json{{"task", to_string(o.spec.name)},
                        {"metric", to_string(o.spec.metric)},
                        {"strategies", cols}});
  }
  return json{{"seed", cfg.seed}, {"repeats", cfg.repeats}, {"tasks", rows}};
}

inline std::string comparison_csv(const json& report) {
  std::ostringstream os;
  os.precision(10);
  os << "task,metric,strategy,mean,std\n";
  for (const auto& row : report["tasks"]) {
    for (const auto& [name, cell] : row["strategies"].items()) {
      os << row["task"].get<std::string>() << ',' << row["metric"].get<std::string>() << ','
         << name << ',';
      if (cell.is_string()) {
        os << "NA,NA\n";
      } else {
        os << cell["mean"].get<double>() << ',' << cell["std"].get<double>() << '\n';
      }
    }
  }
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace enecg::pipeline
