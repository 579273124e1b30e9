#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/pipeline/config.hpp"
#include "enecg/signal/record_io.hpp"

namespace enecg::cli {

struct SaliencyOptions {
  pipeline::TaskName task = pipeline::TaskName::rr;
  std::size_t steps = 256;
  std::size_t record = 0;  // index into the test split of repeat 0
  std::string expert;      // empty: attribute the combined logit
};

struct BenchOptions {
  std::size_t records = 16;
  std::size_t passes = 3;
};

/// Everything a run reads from its config file.
struct RunConfig {
  pipeline::ExperimentConfig experiment;
  SaliencyOptions saliency;
  BenchOptions bench;
  bool seed_given = false;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> list(std::string_view v, char sep = ',') {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  for (auto part : signal::detail::split(v, sep)) out.push_back(trim(part));
  return out;
}

inline std::uint64_t to_uint(std::string_view v) {
  std::uint64_t x = 0;
  if (!signal::detail::parse_number(v, x)) throw ConfigError("expected a non-negative integer, got '" + std::string(v) + "'");
  return x;
}

inline std::size_t to_size(std::string_view v) { return static_cast<std::size_t>(to_uint(v)); }

inline double to_double(std::string_view v) {
  double x = 0.0;
  if (!signal::detail::parse_number(v, x)) throw ConfigError("expected a number, got '" + std::string(v) + "'");
  return x;
}

inline bool to_bool(std::string_view v) {
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + std::string(v) + "'");
}

inline std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(std::size_t v) { return std::to_string(v); }

template <class T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f,
                 const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + f(v[i]);
  return out;
}

inline std::vector<double> doubles(std::string_view v) {
  std::vector<double> out;
  for (const auto& s : list(v)) out.push_back(to_double(s));
  return out;
}

template <std::size_t N>
std::array<double, N> fixed(std::string_view v) {
  const auto d = doubles(v);
  if (d.size() != N) throw ConfigError("expected " + std::to_string(N) + " comma-separated numbers");
  std::array<double, N> out{};
  std::copy(d.begin(), d.end(), out.begin());
  return out;
}

template <std::size_t N>
std::string fmt_array(const std::array<double, N>& a) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + fmt(a[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<void(std::string_view)> set;
  std::function<std::string()> get;
};

struct Section {
  std::string name;
  std::vector<Field> fields;
};

inline Field size_field(std::string key, std::size_t& ref) {
  return {std::move(key), [&ref](std::string_view v) { ref = to_size(v); }, [&ref] { return fmt(ref); }};
}
inline Field double_field(std::string key, double& ref) {
  return {std::move(key), [&ref](std::string_view v) { ref = to_double(v); }, [&ref] { return fmt(ref); }};
}
inline Field bool_field(std::string key, bool& ref) {
  return {std::move(key), [&ref](std::string_view v) { ref = to_bool(v); }, [&ref] { return fmt(ref); }};
}
inline std::vector<Field> wave_fields(const std::string& p, signal::WaveShape& w) {
  return {double_field(p + "_amplitude", w.amplitude), double_field(p + "_center_s", w.center_s),
          double_field(p + "_width_s", w.width_s)};
}

inline adapters::AdaptMode to_mode(std::string_view v) {
  if (v == "lora") return adapters::AdaptMode::lora;
  if (v == "full") return adapters::AdaptMode::full;
  throw ConfigError("expected lora or full, got '" + std::string(v) + "'");
}
inline std::string fmt(adapters::AdaptMode m) { return m == adapters::AdaptMode::lora ? "lora" : "full"; }

/// Fixed sections of the config file, bound to the fields of `c`. The empty
/// name is the top-level section before any header.
inline std::vector<Section> sections(RunConfig& c) {
  auto& x = c.experiment;
  auto& g = x.generator;
  std::vector<Section> s;

  s.push_back({"",
               {{"seed",
                 [&c](std::string_view v) {
                   c.experiment.seed = to_uint(v);
                   c.seed_given = true;
                 },
                 [&x] { return std::to_string(x.seed); }},
                {"tasks",
                 [&x](std::string_view v) {
                   x.tasks.clear();
                   for (const auto& t : list(v)) {
                     try {
                       x.tasks.push_back(pipeline::parse_task(t));
                     } catch (const UsageError& e) {
                       throw ConfigError(e.what());
                     }
                   }
                 },
                 [&x] {
                   return join<pipeline::TaskName>(
                       x.tasks, [](const pipeline::TaskName& t) { return std::string(pipeline::to_string(t)); });
                 }},
                {"split",
                 [&x](std::string_view v) {
                   x.split = fixed<3>(v);
                   try {
                     pipeline::check_ratios(x.split);
                   } catch (const UsageError& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [&x] { return fmt_array(x.split); }},
                size_field("epochs", x.epochs),
                size_field("batch_size", x.batch_size),
                double_field("learning_rate", x.learning_rate),
                {"ensemble",
                 [&x](std::string_view v) {
                   try {
                     x.ensemble = pipeline::parse_strategy(v);
                   } catch (const UsageError& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [&x] { return std::string(pipeline::to_string(x.ensemble)); }},
                bool_field("class_weighting", x.class_weighting),
                bool_field("standardize", x.standardize),
                bool_field("joint", x.joint),
                size_field("repeats", x.repeats),
                double_field("greedy_step", x.greedy_step),
                {"data", [&x](std::string_view v) { x.data_manifest = std::string(v); },
                 [&x] { return x.data_manifest; }}}});

  Section gen{"generator",
              {size_field("n_records", g.n_records), size_field("n_leads", g.n_leads),
               double_field("sampling_rate_hz", g.sampling_rate_hz),
               double_field("duration_s", g.duration_s), double_field("hr_min_bpm", g.hr_min_bpm),
               double_field("hr_max_bpm", g.hr_max_bpm)}};
  for (auto* w : {&g.p_wave, &g.q_wave, &g.r_wave, &g.s_wave, &g.t_wave}) {
    const char* p = w == &g.p_wave ? "p" : w == &g.q_wave ? "q" : w == &g.r_wave ? "r" : w == &g.s_wave ? "s" : "t";
    for (auto& f : wave_fields(p, *w)) gen.fields.push_back(std::move(f));
  }
  for (auto f : {double_field("qt_min_s", g.qt_min_s), double_field("qt_max_s", g.qt_max_s),
                 double_field("age_slope_per_s", g.age_slope_per_s),
                 double_field("age_intercept", g.age_intercept),
                 double_field("age_noise_years", g.age_noise_years),
                 double_field("sex_p_scale", g.sex_p_scale),
                 double_field("potassium_t_scale", g.potassium_t_scale),
                 double_field("amplitude_jitter", g.amplitude_jitter),
                 double_field("axis_jitter", g.axis_jitter), double_field("noise_mv", g.noise_mv),
                 double_field("sex_prevalence", g.sex_prevalence),
                 double_field("potassium_prevalence", g.potassium_prevalence)})
    gen.fields.push_back(std::move(f));
  gen.fields.push_back({"class_prevalence", [&g](std::string_view v) { g.class_prevalence = doubles(v); },
                        [&g] { return join<double>(g.class_prevalence, [](const double& d) { return fmt(d); }); }});
  for (auto* a : {&g.p_axis, &g.qrs_axis, &g.t_axis}) {
    const char* k = a == &g.p_axis ? "p_axis" : a == &g.qrs_axis ? "qrs_axis" : "t_axis";
    gen.fields.push_back({k, [a](std::string_view v) { *a = fixed<3>(v); }, [a] { return fmt_array(*a); }});
  }
  gen.fields.push_back({"lead_matrix",
                        [&g](std::string_view v) {
                          g.lead_matrix.clear();
                          for (const auto& row : list(v, ';')) g.lead_matrix.push_back(fixed<3>(row));
                        },
                        [&g] {
                          return join<std::array<double, 3>>(
                              g.lead_matrix, [](const std::array<double, 3>& r) { return fmt_array(r); }, ";");
                        }});
  s.push_back(std::move(gen));

  auto& h = x.head;
  s.push_back({"head",
               {size_field("hidden", h.hidden), size_field("depth", h.depth),
                size_field("rank", h.lora.rank), bool_field("bias_trainable", h.lora.bias_trainable),
                {"mode", [&h](std::string_view v) { h.lora.mode = to_mode(v); },
                 [&h] { return fmt(h.lora.mode); }}}});

  auto& q = x.gate;
  s.push_back({"gate",
               {{"leads",
                 [&q](std::string_view v) {
                   q.leads.clear();
                   for (const auto& i : list(v)) q.leads.push_back(to_size(i));
                   if (q.leads.empty()) throw ConfigError("at least one lead required");
                 },
                 [&q] { return join<std::size_t>(q.leads, [](const std::size_t& i) { return fmt(i); }); }},
                size_field("pooled_len", q.pooled_len), size_field("hidden", q.hidden),
                bool_field("per_coordinate", q.per_coordinate), size_field("rank", q.lora.rank),
                bool_field("bias_trainable", q.lora.bias_trainable)}});

  auto& sal = c.saliency;
  s.push_back({"saliency",
               {{"task",
                 [&sal](std::string_view v) {
                   try {
                     sal.task = pipeline::parse_task(v);
                   } catch (const UsageError& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [&sal] { return std::string(pipeline::to_string(sal.task)); }},
                size_field("steps", sal.steps), size_field("record", sal.record),
                {"expert", [&sal](std::string_view v) { sal.expert = std::string(v); },
                 [&sal] { return sal.expert; }}}});

  s.push_back({"bench", {size_field("records", c.bench.records), size_field("passes", c.bench.passes)}});
  return s;
}

inline constexpr std::string_view kExpertPrefix = "expert.";

inline std::vector<Field> expert_fields(pipeline::ExpertSpec& e, bool& arch_set) {
  return {{"arch",
           [&e, &arch_set](std::string_view v) {
             try {
               e.arch = experts::parse_arch(v);
             } catch (const UsageError& err) {
               throw ConfigError(err.what());
             }
             arch_set = true;
           },
           [&e] { return std::string(experts::to_string(e.arch)); }},
          {"seed", [&e](std::string_view v) { e.seed = to_uint(v); }, [&e] { return std::to_string(e.seed); }},
          size_field("input_len", e.input_len), size_field("feature_dim", e.feature_dim)};
}

}  // namespace detail

/// Strict parse of the sectioned key = value format. Unknown sections or
/// keys, duplicate keys and malformed values are errors naming the line.
inline RunConfig parse_config(std::istream& in, const std::string& origin = "config") {
  RunConfig c;
  auto secs = detail::sections(c);
  std::vector<pipeline::ExpertSpec> roster;
  std::vector<bool> arch_set;
  std::vector<std::size_t> roster_line;
  std::string current;
  std::vector<std::string> seen;
  std::string line;
  std::size_t no = 0;
  auto fail = [&](const std::string& m) { throw ConfigError(origin + ":" + std::to_string(no) + ": " + m); };

  while (std::getline(in, line)) {
    ++no;
    std::string t = detail::trim(std::string_view(line).substr(0, line.find('#')));
    if (t.empty() || t.front() == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') fail("malformed section header '" + t + "'");
      current = detail::trim(std::string_view(t).substr(1, t.size() - 2));
      if (current.rfind(detail::kExpertPrefix, 0) == 0) {
        const std::string name = current.substr(detail::kExpertPrefix.size());
        if (name.empty()) fail("expert section needs a name");
        for (const auto& e : roster)
          if (e.name == name) fail("duplicate expert section '" + name + "'");
        pipeline::ExpertSpec e;
        e.name = name;
        e.input_len = 0;
        roster.push_back(e);
        arch_set.push_back(false);
        roster_line.push_back(no);
      } else {
        bool known = false;
        for (const auto& s : secs) known = known || (!s.name.empty() && s.name == current);
        if (!known) fail("unknown section [" + current + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail("expected 'key = value', got '" + t + "'");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    const std::string where = current.empty() ? key : current + "." + key;
    if (key.empty()) fail("missing key before '='");
    for (const auto& s : seen)
      if (s == where) fail("duplicate key '" + key + "'");
    seen.push_back(where);

    std::vector<detail::Field> expert_fields;
    const std::vector<detail::Field>* fields = nullptr;
    bool arch_line = false;
    if (current.rfind(detail::kExpertPrefix, 0) == 0) {
      expert_fields = detail::expert_fields(roster.back(), arch_line);
      fields = &expert_fields;
    } else {
      for (const auto& s : secs)
        if (s.name == current) fields = &s.fields;
    }
    const detail::Field* f = nullptr;
    for (const auto& cand : *fields)
      if (cand.key == key) f = &cand;
    if (!f) fail("unknown key '" + key + "'" + (current.empty() ? "" : " in [" + current + "]"));
    try {
      f->set(value);
    } catch (const ConfigError& e) {
      fail("key '" + key + "': " + e.what());
    }
    if (arch_line) arch_set.back() = true;
  }

  for (std::size_t i = 0; i < roster.size(); ++i) {
    no = roster_line[i];
    if (!arch_set[i]) fail("[expert." + roster[i].name + "] missing required key 'arch'");
    if (roster[i].input_len == 0) roster[i].input_len = experts::default_input_len(roster[i].arch);
  }
  if (!roster.empty()) c.experiment.experts = std::move(roster);
  try {
    c.experiment.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path + "'");
  return parse_config(in, path);
}

inline RunConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

/// Full effective config in the same format; parsing it reproduces `c`.
inline std::string effective_config(const RunConfig& c) {
  RunConfig copy = c;
  std::ostringstream os;
  for (const auto& s : detail::sections(copy)) {
    if (!s.name.empty()) os << "\n[" << s.name << "]\n";
    for (const auto& f : s.fields) os << f.key << " = " << f.get() << '\n';
  }
  for (auto& e : copy.experiment.experts) {
    bool set = true;
    os << "\n[" << detail::kExpertPrefix << e.name << "]\n";
    for (const auto& f : detail::expert_fields(e, set)) os << f.key << " = " << f.get() << '\n';
  }
  return os.str();
}

}  // namespace enecg::cli
