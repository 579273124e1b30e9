#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "enecg/error.hpp"
#include "enecg/numerics/tape.hpp"
#include "enecg/signal/record_io.hpp"

namespace enecg::saliency {

/// Differentiable scalar model: maps an input recorded on a tape to a
/// single-element output on the same tape.
using ScalarModel = std::function<Var(const Var& x)>;

struct SaliencyMap {
  Tensor attributions;  // same shape as the model input
  std::string baseline = "zeros";
  std::size_t steps = 0;
  double f_input = 0.0;
  double f_baseline = 0.0;
  double completeness_gap = 0.0;  // |sum(attr) - (F(x) - F(x'))|
};

inline double evaluate_scalar(const ScalarModel& f, const Tensor& x) {
  Tape tape;
  Var out = f(tape.leaf(x));
  if (out.value().size() != 1) {
    throw DimensionError("attribution target must be a single value, got shape " +
                         numerics::shape_str(out.shape()));
  }
  return out.value().item();
}

/// Midpoint-rule integrated gradients along the straight path from
/// `baseline` to `x` with m steps.
inline SaliencyMap integrated_gradients(const ScalarModel& f, const Tensor& x,
                                        const Tensor& baseline, std::size_t m,
                                        std::string baseline_name = "zeros") {
  if (m == 0) throw UsageError("integrated gradients needs at least one step");
  if (x.shape() != baseline.shape()) {
    throw DimensionError("baseline shape " + numerics::shape_str(baseline.shape()) +
                         " differs from input shape " + numerics::shape_str(x.shape()));
  }
  std::vector<double> avg(x.size(), 0.0);
  for (std::size_t t = 1; t <= m; ++t) {
    const double alpha = (static_cast<double>(t) - 0.5) / static_cast<double>(m);
    Tensor point(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) point[i] = baseline[i] + alpha * (x[i] - baseline[i]);
    point.set_requires_grad(true);
    Tape tape;
    Var out = f(tape.leaf(point));
    if (out.value().size() != 1) {
      throw DimensionError("attribution target must be a single value, got shape " +
                           numerics::shape_str(out.shape()));
    }
    tape.backward(out);
    if (point.has_grad()) {
      const auto g = point.grad();
      for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += g[i];
    }
  }
  SaliencyMap s;
  s.attributions = Tensor(x.shape());
  s.steps = m;
  s.baseline = std::move(baseline_name);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.attributions[i] = (x[i] - baseline[i]) * avg[i] / static_cast<double>(m);
    total += s.attributions[i];
  }
  s.f_input = evaluate_scalar(f, x);
  s.f_baseline = evaluate_scalar(f, baseline);
  s.completeness_gap = std::abs(total - (s.f_input - s.f_baseline));
  return s;
}

/// Writes `<path>` as CSV rows (lead, sample_index, attribution) and
/// `<path>.json` with the baseline, step count and completeness gap.
inline void export_saliency(const SaliencyMap& map, const std::string& path) {
  const Tensor& a = map.attributions;
  const std::size_t leads = a.rank() == 2 ? a.dim(0) : 1;
  const std::size_t len = a.size() / leads;
  std::ofstream csv(path, std::ios::binary);
  if (!csv) throw IoError("cannot write saliency file '" + path + "'");
  csv << "lead,sample_index,attribution\n";
  for (std::size_t c = 0; c < leads; ++c)
    for (std::size_t j = 0; j < len; ++j)
      csv << c << ',' << j << ',' << signal::format_double(a[c * len + j]) << '\n';
  if (!csv) throw IoError("write failed for '" + path + "'");
  nlohmann::ordered_json meta{{"baseline", map.baseline},
                              {"steps", map.steps},
                              {"leads", leads},
                              {"samples", len},
                              {"f_input", map.f_input},
                              {"f_baseline", map.f_baseline},
                              {"completeness_gap", map.completeness_gap}};
  std::ofstream js(path + ".json", std::ios::binary);
  if (!js) throw IoError("cannot write saliency sidecar '" + path + ".json'");
  js << meta.dump(2) << '\n';
  if (!js) throw IoError("write failed for '" + path + ".json'");
}

/// Reads the CSV written by export_saliency back into a [leads x samples]
/// tensor.
inline Tensor load_saliency_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read saliency file '" + path + "'");
  std::string line;
  std::getline(in, line);
  std::vector<std::size_t> lead, idx;
  std::vector<double> val;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = signal::detail::split(line, ',');
    std::size_t c = 0, j = 0;
    double v = 0.0;
    if (f.size() != 3 || !signal::detail::parse_number(f[0], c) ||
        !signal::detail::parse_number(f[1], j) || !signal::detail::parse_number(f[2], v)) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed saliency row");
    }
    lead.push_back(c);
    idx.push_back(j);
    val.push_back(v);
  }
  if (val.empty()) throw ParseError("saliency file '" + path + "' has no rows");
  std::size_t leads = 0, len = 0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    leads = std::max(leads, lead[i] + 1);
    len = std::max(len, idx[i] + 1);
  }
  Tensor out({leads, len});
  for (std::size_t i = 0; i < val.size(); ++i) out[lead[i] * len + idx[i]] = val[i];
  return out;
}

}  // namespace enecg::saliency
