#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "enecg/adapters/checkpoint.hpp"
#include "enecg/cli/config_file.hpp"
#include "enecg/error.hpp"
#include "enecg/pipeline/dataset.hpp"
#include "enecg/pipeline/experiment.hpp"
#include "enecg/pipeline/report.hpp"
#include "enecg/saliency/integrated_gradients.hpp"
#include "enecg/saliency/targets.hpp"
#include "enecg/signal/record_io.hpp"

namespace enecg::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kConfig = 3,
  kParse = 4,
  kIo = 5,
  kDimension = 6,
  kNumeric = 7,
  kNotApplicable = 8,
};

inline int exit_code(std::string_view error_class) {
  if (error_class == "usage_error") return kUsage;
  if (error_class == "config_error") return kConfig;
  if (error_class == "parse_error") return kParse;
  if (error_class == "io_error") return kIo;
  if (error_class == "dimension_error") return kDimension;
  if (error_class == "numeric_error") return kNumeric;
  if (error_class == "not_applicable") return kNotApplicable;
  return kInternal;
}

inline constexpr std::size_t kRecordsPerFile = 100;

/// Seed precedence: command-line flag, then the config file, then the
/// ENECG_SEED environment variable.
inline void resolve_seed(RunConfig& c, std::optional<std::uint64_t> flag) {
  if (flag) {
    c.experiment.seed = *flag;
  } else if (!c.seed_given) {
    if (const char* env = std::getenv("ENECG_SEED"); env && *env) {
      try {
        c.experiment.seed = detail::to_uint(env);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("ENECG_SEED: ") + e.what());
      }
    }
  }
  c.seed_given = true;
  c.experiment.generator.seed = c.experiment.seed;
}

/// State shared by the subcommands of one invocation.
class Session {
 public:
  Session(RunConfig cfg, fs::path out, int verbosity, std::ostream& log)
      : cfg_(std::move(cfg)), out_(std::move(out)), verbosity_(verbosity), log_(log) {}

  const RunConfig& config() const { return cfg_; }
  const pipeline::ExperimentConfig& experiment() const { return cfg_.experiment; }
  const fs::path& out() const { return out_; }

  void info(const std::string& m) const {
    if (verbosity_ > 0) log_ << m << '\n';
  }

  fs::path path(const fs::path& rel) {
    const fs::path p = out_ / rel;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + p.parent_path().string() + "'");
    written_.push_back(rel);
    return p;
  }

  void write(const fs::path& rel, const std::string& text) {
    pipeline::write_text(path(rel).string(), text);
  }

  void begin() {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw IoError("cannot create output directory '" + out_.string() + "'");
    write("effective.cfg", effective_config(cfg_));
  }

  void finish(const std::string& command) {
    std::string m = "command " + command + "\n";
    for (const auto& f : written_) m += f.generic_string() + '\n';
    pipeline::write_text((out_ / "MANIFEST").string(), m);
  }

 private:
  RunConfig cfg_;
  fs::path out_;
  int verbosity_;
  std::ostream& log_;
  std::vector<fs::path> written_;
};

inline std::string group_label(const std::vector<pipeline::TaskSpec>& tasks) {
  std::string s;
  for (const auto& t : tasks) s += (s.empty() ? "" : "+") + std::string(pipeline::to_string(t.name));
  return s;
}

inline fs::path enecg_checkpoint(const fs::path& dir, const std::vector<pipeline::TaskSpec>& tasks) {
  return dir / ("enecg_" + group_label(tasks) + ".ckpt");
}

inline fs::path single_checkpoint(const fs::path& dir, const std::string& expert,
                                  const std::vector<pipeline::TaskSpec>& tasks) {
  return dir / ("single_" + expert + "_" + group_label(tasks) + ".ckpt");
}

inline void load_model(pipeline::EnsembleModel& m, const fs::path& path) {
  if (!fs::exists(path)) {
    throw IoError("checkpoint '" + path.string() + "' not found (run train first)");
  }
  m.load(adapters::Checkpoint::load(path));
}

inline pipeline::FeatureCache featurize_dataset(Session& s, const std::vector<experts::ExpertModel>& models,
                                                const pipeline::Dataset& ds, std::size_t limit) {
  const std::size_t n = std::min(ds.size, limit);
  s.info("featurizing " + std::to_string(n) + " records");
  return pipeline::featurize(models, s.experiment().gate, n, ds.source);
}

inline void cmd_gen(Session& s) {
  pipeline::ExperimentConfig cfg = s.experiment();
  cfg.data_manifest.clear();
  const pipeline::Dataset ds = pipeline::open_dataset(cfg);
  std::vector<fs::path> files;
  for (std::size_t start = 0; start < ds.size; start += kRecordsPerFile) {
    char name[32];
    std::snprintf(name, sizeof name, "records_%05zu.ecg", start / kRecordsPerFile);
    const fs::path rel = fs::path("data") / name;
    std::vector<signal::LabeledRecord> chunk;
    for (std::size_t i = start; i < std::min(ds.size, start + kRecordsPerFile); ++i)
      chunk.push_back(ds.source(i));
    signal::save_records(s.path(rel), chunk);
    files.push_back(name);
    s.info("wrote " + rel.generic_string());
  }
  signal::save_manifest(s.path("data/dataset.manifest"), files);
  s.finish("gen");
}

inline void cmd_train(Session& s, const fs::path& model_dir, bool compare) {
  const auto& cfg = s.experiment();
  const pipeline::Dataset ds = pipeline::open_dataset(cfg);
  const auto models = pipeline::build_experts(cfg.experts, ds.n_leads);
  const auto t0 = std::chrono::steady_clock::now();
  const pipeline::FeatureCache cache = featurize_dataset(s, models, ds, ds.size);
  const double feat_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  pipeline::ExperimentOptions opts;
  opts.compare = compare;
  opts.bench = !compare;
  opts.bench_records = std::min(s.config().bench.records, ds.size);
  opts.bench_source = ds.source;
  opts.log = [&s](const std::string& m) { s.info(m); };
  pipeline::ExperimentResult res = pipeline::run_experiment(cfg, models, cache, opts);
  res.featurize_s = feat_s;

  if (compare) {
    const auto report = pipeline::comparison_report(cfg, res);
    s.write("comparison.json", report.dump(2) + "\n");
    s.write("comparison.csv", pipeline::comparison_csv(report));
  }
  s.write("metrics.json", pipeline::metrics_report(cfg, res).dump(2) + "\n");
  s.write("metrics.csv", pipeline::metrics_csv(cfg, res));
  if (!compare) {
    for (const auto& g : res.runs.front().groups) {
      adapters::Checkpoint ck;
      g.enecg->save(ck);
      ck.save(s.path(fs::relative(enecg_checkpoint(model_dir, g.tasks), s.out())));
      for (std::size_t e = 0; e < g.singles.size(); ++e) {
        adapters::Checkpoint sk;
        g.singles[e].save(sk);
        sk.save(s.path(fs::relative(single_checkpoint(model_dir, models[e].name(), g.tasks), s.out())));
      }
    }
  }
  s.finish(compare ? "compare-ensembles" : "train");
}

inline void cmd_eval(Session& s, const fs::path& model_dir) {
  const auto& cfg = s.experiment();
  const pipeline::Dataset ds = pipeline::open_dataset(cfg);
  const auto models = pipeline::build_experts(cfg.experts, ds.n_leads);
  const std::uint64_t seed = pipeline::repeat_seed(cfg.seed, 0);
  const pipeline::FeatureCache cache = featurize_dataset(s, models, ds, ds.size);
  const pipeline::Split sp = pipeline::split(cache.size(), cfg.split, seed);

  pipeline::ExperimentResult res;
  for (const auto& m : models) res.expert_names.push_back(m.name());
  for (const auto& tasks : pipeline::task_groups(cfg)) {
    pipeline::EnsembleModel enecg = pipeline::make_enecg(models, tasks, cfg, seed);
    load_model(enecg, enecg_checkpoint(model_dir, tasks));
    const auto m = pipeline::evaluate(enecg, cache, sp.test);
    std::vector<std::vector<double>> singles;
    for (std::size_t e = 0; e < models.size(); ++e) {
      pipeline::EnsembleModel single = pipeline::make_single(models[e], tasks, cfg, seed);
      load_model(single, single_checkpoint(model_dir, models[e].name(), tasks));
      singles.push_back(pipeline::evaluate(single, pipeline::expert_view(cache, e), sp.test));
    }
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      pipeline::TaskOutcome o;
      o.spec = tasks[t];
      o.enecg = {m[t]};
      for (const auto& sv : singles) o.single.push_back({sv[t]});
      o.params_trainable = enecg.trainable_count();
      o.params_frozen = enecg.frozen_count();
      o.params_total = enecg.total_count();
      res.tasks.push_back(std::move(o));
    }
  }
  pipeline::ExperimentConfig shown = cfg;
  shown.repeats = 1;
  shown.ensemble = pipeline::Strategy::moe;
  s.write("eval.json", pipeline::metrics_report(shown, res).dump(2) + "\n");
  s.finish("eval");
}

inline void cmd_bench(Session& s, const fs::path& model_dir) {
  const auto& cfg = s.experiment();
  const pipeline::Dataset ds = pipeline::open_dataset(cfg);
  const auto models = pipeline::build_experts(cfg.experts, ds.n_leads);
  const std::size_t n = std::min<std::size_t>(ds.size, 256);
  const pipeline::FeatureCache cache = featurize_dataset(s, models, ds, n);
  std::vector<signal::LabeledRecord> recs;
  for (std::size_t i = 0; i < std::min(s.config().bench.records, n); ++i) recs.push_back(ds.source(i));
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;

  pipeline::json groups = pipeline::json::array();
  for (const auto& tasks : pipeline::task_groups(cfg)) {
    pipeline::EnsembleModel m = pipeline::make_enecg(models, tasks, cfg, cfg.seed);
    const fs::path ck = enecg_checkpoint(model_dir, tasks);
    const bool trained = fs::exists(ck);
    if (trained) load_model(m, ck);
    const auto b = pipeline::bench(m, recs, cache, rows, cfg.batch_size, s.config().bench.passes);
    groups.push_back(pipeline::json{{"tasks", group_label(tasks)},
                                    {"trained", trained},
                                    {"throughput_sps", b.inference_sps},
                                    {"train_throughput_sps", b.train_sps},
                                    {"params_trainable", b.params_trainable},
                                    {"params_frozen", b.params_frozen},
                                    {"params_total", b.params_total},
                                    {"activation_bytes", b.activation_bytes},
                                    {"passes", b.passes}});
    s.info("bench " + group_label(tasks) + ": " + std::to_string(b.inference_sps) + " samples/s");
  }
  s.write("bench.json", pipeline::json{{"groups", groups}}.dump(2) + "\n");
  s.finish("bench");
}

inline void cmd_saliency(Session& s, const fs::path& model_dir) {
  const auto& cfg = s.experiment();
  const SaliencyOptions& opt = s.config().saliency;
  const pipeline::Dataset ds = pipeline::open_dataset(cfg);
  const auto models = pipeline::build_experts(cfg.experts, ds.n_leads);
  const std::uint64_t seed = pipeline::repeat_seed(cfg.seed, 0);
  const pipeline::Split sp = pipeline::split(ds.size, cfg.split, seed);
  if (opt.record >= sp.test.size()) {
    throw UsageError("saliency record " + std::to_string(opt.record) + " outside the test split of " +
                     std::to_string(sp.test.size()));
  }
  for (const auto& tasks : pipeline::task_groups(cfg)) {
    std::size_t t = tasks.size();
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (tasks[i].name == opt.task) t = i;
    if (t == tasks.size()) continue;

    pipeline::EnsembleModel m = pipeline::make_enecg(models, tasks, cfg, seed);
    load_model(m, enecg_checkpoint(model_dir, tasks));
    std::optional<std::size_t> expert;
    if (!opt.expert.empty()) {
      for (std::size_t e = 0; e < models.size(); ++e)
        if (models[e].name() == opt.expert) expert = e;
      if (!expert) throw UsageError("unknown expert '" + opt.expert + "'");
    }
    const signal::LabeledRecord rec = ds.source(sp.test[opt.record]);
    const Tensor& x = rec.record.leads;
    std::size_t column = 0;
    if (tasks[t].output_dim > 1) {
      Tape tape;
      const Tensor c = m.forward_record(tape.leaf(x), true).combined.value();
      const double* row = &c[m.offset(t)];
      column = static_cast<std::size_t>(std::max_element(row, row + tasks[t].output_dim) - row);
    }
    const auto f = saliency::model_target(m, t, column, expert);
    const auto map = saliency::integrated_gradients(f, x, Tensor(x.shape()), opt.steps);
    const std::string name = "saliency_" + std::string(pipeline::to_string(opt.task)) +
                             (expert ? "_" + opt.expert : std::string()) + ".csv";
    saliency::export_saliency(map, s.path(name).string());
    s.path(name + ".json");
    s.info("completeness gap " + signal::format_double(map.completeness_gap));
    s.finish("saliency");
    return;
  }
  throw UsageError("task '" + std::string(pipeline::to_string(opt.task)) + "' is not in the task list");
}

/// Parses argv, runs one subcommand and returns the process exit code.
/// Failures print one line `error: <class>: <message>` to `err`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Ensemble of frozen ECG experts with LoRA heads and a mixture-of-experts gate"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  std::string config_path, out_dir = "out", models_dir;
  std::optional<std::uint64_t> seed;
  int verbosity = 0;
  std::optional<std::string> sal_task, sal_expert;
  std::optional<std::size_t> sal_steps, sal_record;

  app.add_option("--config", config_path, "Config file (key = value with [sections])");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--seed", seed, "Seed override");
  app.add_flag("-v,--verbose", verbosity, "Progress messages on stderr");

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset and manifest");
  auto* train = app.add_subcommand("train", "Train EnECG and single-expert baselines");
  auto* eval = app.add_subcommand("eval", "Evaluate trained checkpoints on the test split");
  auto* bench = app.add_subcommand("bench", "Measure throughput, parameters and activation size");
  auto* compare = app.add_subcommand("compare-ensembles", "Compare ensembling strategies");
  auto* sal = app.add_subcommand("saliency", "Export integrated-gradients attributions");
  for (auto* sub : {eval, bench, sal})
    sub->add_option("--models", models_dir, "Checkpoint directory (default <out>/models)");
  train->add_option("--models", models_dir, "Checkpoint directory (default <out>/models)");
  sal->add_option("--task", sal_task, "Task to attribute");
  sal->add_option("--expert", sal_expert, "Attribute one expert's logit instead of the ensemble");
  sal->add_option("--steps", sal_steps, "Interpolation steps");
  sal->add_option("--record", sal_record, "Index into the test split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: usage_error: " << e.what() << '\n' << app.help();
    return kUsage;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (sal_task) cfg.saliency.task = pipeline::parse_task(*sal_task);
    if (sal_expert) cfg.saliency.expert = *sal_expert;
    if (sal_steps) cfg.saliency.steps = *sal_steps;
    if (sal_record) cfg.saliency.record = *sal_record;
    resolve_seed(cfg, seed);
    cfg.experiment.validate();

    Session s(std::move(cfg), out_dir, verbosity, err);
    s.begin();
    const fs::path mdir = models_dir.empty() ? s.out() / "models" : fs::path(models_dir);

    if (gen->parsed()) cmd_gen(s);
    else if (train->parsed()) cmd_train(s, mdir, false);
    else if (eval->parsed()) cmd_eval(s, mdir);
    else if (bench->parsed()) cmd_bench(s, mdir);
    else if (compare->parsed()) cmd_train(s, mdir, true);
    else if (sal->parsed()) cmd_saliency(s, mdir);
    return kOk;
  } catch (const Error& e) {
    err << "error: " << e.error_class() << ": " << e.what() << '\n';
    return exit_code(e.error_class());
  } catch (const std::exception& e) {
    err << "error: internal_error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace enecg::cli
