#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "enecg/error.hpp"
#include "enecg/pipeline/model.hpp"
#include "enecg/pipeline/task.hpp"
#include "enecg/saliency/integrated_gradients.hpp"
#include "enecg/saliency/targets.hpp"
#include "enecg/signal/generator.hpp"
#include "test_util.hpp"

using namespace enecg;
using namespace enecg::saliency;
using test_support::random_tensor;

namespace {

ScalarModel linear(const Tensor& w) {
  return [&w](const Var& x) { return numerics::sum(numerics::mul(x, x.tape()->constant(w))); };
}

// Smooth nonlinear model: softmax over a random projection, read out
// through a fixed vector.
struct SmoothModel {
  Tensor proj, readout;
  SmoothModel(std::size_t in, std::mt19937_64& rng)
      : proj(random_tensor({in, 5}, rng)), readout(random_tensor({1, 5}, rng)) {}
  ScalarModel fn() const {
    return [this](const Var& x) {
      Tape& t = *x.tape();
      Var row = numerics::reshape(x, {1, x.value().size()});
      Var p = numerics::softmax(numerics::matmul(row, t.constant(proj)), 1);
      return numerics::sum(numerics::mul(p, t.constant(readout)));
    };
  }
};

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("enecg_saliency_" + name);
}

}  // namespace

TEST(IntegratedGradients, InputEqualToBaselineGivesZero) {
  std::mt19937_64 rng(1);
  SmoothModel m(12, rng);
  const Tensor x = random_tensor({3, 4}, rng);
  const SaliencyMap s = integrated_gradients(m.fn(), x, x, 16);
  for (double v : s.attributions.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(s.completeness_gap, 0.0);
}

TEST(IntegratedGradients, ExactForLinearModelsAnyStepCount) {
  std::mt19937_64 rng(2);
  const Tensor w = random_tensor({2, 6}, rng);
  const Tensor x = random_tensor({2, 6}, rng);
  const Tensor base = random_tensor({2, 6}, rng);
  for (std::size_t m : {1u, 2u, 7u, 64u}) {
    const SaliencyMap s = integrated_gradients(linear(w), x, base, m, "random");
    ASSERT_EQ(s.attributions.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
      EXPECT_NEAR(s.attributions[i], w[i] * (x[i] - base[i]), 1e-14);
    EXPECT_LE(s.completeness_gap, 1e-12);
    EXPECT_EQ(s.steps, m);
    EXPECT_EQ(s.baseline, "random");
  }
}

TEST(IntegratedGradients, MatchesDirectMidpointQuadrature) {
  std::mt19937_64 rng(3);
  SmoothModel m(8, rng);
  const Tensor x = random_tensor({8}, rng, -2.0, 2.0);
  const Tensor base({8});
  const std::size_t steps = 10;
  const SaliencyMap s = integrated_gradients(m.fn(), x, base, steps);
  // Independent oracle: central-difference gradients at each midpoint.
  std::vector<double> expected(8, 0.0);
  for (std::size_t t = 1; t <= steps; ++t) {
    const double a = (static_cast<double>(t) - 0.5) / steps;
    Tensor p({8});
    for (std::size_t i = 0; i < 8; ++i) p[i] = a * x[i];
    for (std::size_t i = 0; i < 8; ++i) {
      Tensor up = p, down = p;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      expected[i] += (evaluate_scalar(m.fn(), up) - evaluate_scalar(m.fn(), down)) / 2e-6;
    }
  }
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(s.attributions[i], x[i] * expected[i] / steps, 1e-8);
}

TEST(IntegratedGradients, GapShrinksWithMoreSteps) {
  std::mt19937_64 rng(4);
  SmoothModel m(10, rng);
  int improved = 0;
  double sum32 = 0.0, sum512 = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({2, 5}, rng, -3.0, 3.0);
    const Tensor base({2, 5});
    const double g32 = integrated_gradients(m.fn(), x, base, 32).completeness_gap;
    const double g512 = integrated_gradients(m.fn(), x, base, 512).completeness_gap;
    improved += g512 <= g32;
    sum32 += g32;
    sum512 += g512;
  }
  EXPECT_GE(improved, 18);
  EXPECT_LT(sum512, sum32);
}

TEST(IntegratedGradients, Deterministic) {
  std::mt19937_64 rng(5);
  SmoothModel m(6, rng);
  const Tensor x = random_tensor({6}, rng);
  const SaliencyMap a = integrated_gradients(m.fn(), x, Tensor({6}), 20);
  const SaliencyMap b = integrated_gradients(m.fn(), x, Tensor({6}), 20);
  EXPECT_EQ(a.attributions, b.attributions);
  EXPECT_EQ(a.completeness_gap, b.completeness_gap);
}

TEST(IntegratedGradients, Errors) {
  const Tensor w({4}, 1.0);
  EXPECT_THROW(integrated_gradients(linear(w), Tensor({4}), Tensor({4}), 0), UsageError);
  EXPECT_THROW(integrated_gradients(linear(w), Tensor({4}), Tensor({5}), 4), DimensionError);
  const ScalarModel vector_out = [](const Var& x) { return x; };
  EXPECT_THROW(integrated_gradients(vector_out, Tensor({4}), Tensor({4}), 4), DimensionError);
}

TEST(Export, RoundTripRowCountAndSidecar) {
  std::mt19937_64 rng(6);
  SmoothModel m(3 * 7, rng);
  const Tensor x = random_tensor({3, 7}, rng);
  const SaliencyMap s = integrated_gradients(m.fn(), x, Tensor({3, 7}), 8);
  const auto path = temp_path("map.csv");
  export_saliency(s, path.string());

  std::ifstream in(path);
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 1u + 3u * 7u);
  EXPECT_EQ(load_saliency_csv(path.string()), s.attributions);

  std::ifstream js(path.string() + ".json");
  const auto meta = nlohmann::json::parse(js);
  EXPECT_EQ(meta["baseline"], "zeros");
  EXPECT_EQ(meta["steps"], 8);
  EXPECT_EQ(meta["leads"], 3);
  EXPECT_EQ(meta["samples"], 7);
  ASSERT_TRUE(meta["completeness_gap"].is_number());
  EXPECT_TRUE(std::isfinite(meta["completeness_gap"].get<double>()));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
}

TEST(Export, UnwritablePathIsIoError) {
  SaliencyMap s;
  s.attributions = Tensor({1, 2});
  EXPECT_THROW(export_saliency(s, "/nonexistent/dir/map.csv"), IoError);
  EXPECT_THROW(load_saliency_csv("/nonexistent/dir/map.csv"), IoError);
}

TEST(Export, MalformedCsvIsParseError) {
  const auto path = temp_path("bad.csv");
  std::ofstream(path) << "lead,sample_index,attribution\n0,0,abc\n";
  EXPECT_THROW(load_saliency_csv(path.string()), ParseError);
  std::filesystem::remove(path);
}

namespace {

struct SmallEnsemble {
  std::vector<experts::ExpertModel> models;
  std::optional<pipeline::EnsembleModel> model;
  signal::LabeledRecord record;

  SmallEnsemble() {
    models.push_back(experts::build_expert(experts::ExpertArch::spectral, 1, 64, 8));
    models.push_back(experts::build_expert(experts::ExpertArch::statistical, 2, 64, 8));
    gating::GateOptions gate;
    gate.pooled_len = 20;
    gate.hidden = 6;
    adapters::HeadOptions head;
    head.hidden = 6;
    std::vector<pipeline::TaskSpec> tasks{pipeline::task_spec(pipeline::TaskName::rr),
                                          pipeline::task_spec(pipeline::TaskName::arrhythmia)};
    model.emplace(std::vector<const experts::ExpertModel*>{&models[0], &models[1]}, tasks, head,
                  gate, 3);
    signal::GeneratorConfig g;
    g.seed = 4;
    g.n_records = 1;
    g.duration_s = 0.2;
    record = signal::generate_record(g, 0);
  }
};

}  // namespace

TEST(Targets, EnsembleAndExpertTargetsReadTheRightLogit) {
  SmallEnsemble s;
  Tape tape;
  const pipeline::ForwardParts p = s.model->forward_record(tape.leaf(s.record.record.leads));
  const Tensor& combined = p.combined.value();
  const Tensor& logits = p.logits.value();
  const std::size_t w = s.model->output_dim();
  EXPECT_DOUBLE_EQ(evaluate_scalar(model_target(*s.model, 0), s.record.record.leads), combined[0]);
  EXPECT_DOUBLE_EQ(evaluate_scalar(model_target(*s.model, 1, 4), s.record.record.leads), combined[1 + 4]);
  EXPECT_DOUBLE_EQ(evaluate_scalar(model_target(*s.model, 1, 2, 1), s.record.record.leads),
                   logits[1 * w + 1 + 2]);
  EXPECT_THROW(model_target(*s.model, 0, 1), DimensionError);
  EXPECT_THROW(model_target(*s.model, 2), UsageError);
  EXPECT_THROW(model_target(*s.model, 0, 0, 2), UsageError);
}

TEST(Targets, EnsembleAttributionHasInputShapeAndFiniteGap) {
  SmallEnsemble s;
  const Tensor& x = s.record.record.leads;
  const SaliencyMap map = integrated_gradients(model_target(*s.model, 0), x, Tensor(x.shape()), 16);
  EXPECT_EQ(map.attributions.shape(), x.shape());
  EXPECT_TRUE(map.attributions.all_finite());
  EXPECT_TRUE(std::isfinite(map.completeness_gap));
}
