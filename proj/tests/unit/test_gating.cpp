#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "enecg/error.hpp"
#include "enecg/gating/baselines.hpp"
#include "enecg/gating/gate.hpp"
#include "test_util.hpp"

using namespace enecg;
using namespace enecg::gating;
using enecg::test_support::random_tensor;

namespace {

GateOptions small_gate() {
  GateOptions o;
  o.leads = {0, 2};
  o.pooled_len = 8;
  o.hidden = 6;
  return o;
}

void randomize(Tensor& t, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double& v : t.data()) v = u(rng);
}

Targets classes(std::vector<double> v) { return {TargetKind::multiclass, std::move(v)}; }

// Loss used for the end-to-end gradient checks: a fixed projection of the
// combined logits.
double combined_objective(GatingNetwork& g, const Tensor& x, const Tensor& logits,
                          const Tensor& proj) {
  Tape tape;
  Var w = g.forward(tape.leaf(static_cast<const Tensor&>(x)));
  Var y = combine(tape.constant(logits), w);
  return numerics::sum(numerics::mul(y, tape.constant(proj))).value().item();
}

}  // namespace

TEST(Gate, WeightsAreProbabilitiesOverExperts) {
  std::mt19937_64 rng(1);
  GatingNetwork g(3, 4, small_gate(), rng);
  for (auto& l : g.layers()) randomize(l.b(), rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor w = gate_forward(g, random_tensor({2, 8}, rng, -3.0, 3.0));
    ASSERT_EQ(w.shape(), (Shape{3, 4}));
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0.0;
      for (std::size_t e = 0; e < 3; ++e) {
        EXPECT_GE(w.at(e, c), 0.0);
        s += w.at(e, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Gate, EqualScoresGiveUniformWeights) {
  std::mt19937_64 rng(2);
  GatingNetwork g(4, 2, small_gate(), rng);
  auto& last = g.layers()[1];
  std::fill(last.w0().data().begin(), last.w0().data().end(), 0.0);
  std::fill(last.bias().data().begin(), last.bias().data().end(), 0.7);
  const Tensor w = gate_forward(g, random_tensor({2, 8}, rng));
  for (double v : w.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Gate, ScalarModeHasOneColumn) {
  std::mt19937_64 rng(3);
  GateOptions o = small_gate();
  o.per_coordinate = false;
  GatingNetwork g(3, 1, o, rng);
  EXPECT_EQ(gate_forward(g, random_tensor({2, 8}, rng)).shape(), (Shape{3, 1}));
}

TEST(Gate, ShapeMismatchIsDimensionError) {
  std::mt19937_64 rng(4);
  GatingNetwork g(3, 1, small_gate(), rng);
  EXPECT_THROW(gate_forward(g, Tensor({1, 8})), DimensionError);
  EXPECT_THROW(gate_forward(g, Tensor({2, 9})), DimensionError);
  Tape tape;
  EXPECT_THROW(g.forward(tape.constant(Tensor({3, 15}))), DimensionError);
}

TEST(Gate, InputPoolsSelectedLeads) {
  Tensor rec({12, 1000});
  for (std::size_t c = 0; c < 12; ++c)
    for (std::size_t t = 0; t < 1000; ++t) rec[c * 1000 + t] = static_cast<double>(c);
  const Tensor in = gate_input(rec, GateOptions{});
  ASSERT_EQ(in.shape(), (Shape{250}));
  for (double v : in.data()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Gate, LoraFactorGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  GatingNetwork g(3, 2, small_gate(), rng);
  for (auto& l : g.layers()) randomize(l.b(), rng, 0.5);
  const Tensor x = random_tensor({4, 16}, rng);
  const Tensor logits = random_tensor({4, 3, 2}, rng, -2.0, 2.0);
  const Tensor proj = random_tensor({4, 2}, rng);
  {
    Tape tape;
    Var w = g.forward(tape.leaf(static_cast<const Tensor&>(x)));
    tape.backward(numerics::sum(numerics::mul(combine(tape.constant(logits), w), tape.constant(proj))));
  }
  const double eps = 1e-6;
  for (auto& l : g.layers()) {
    for (Tensor* p : {&l.a(), &l.b()}) {
      ASSERT_TRUE(p->has_grad());
      std::vector<double> fd(p->size());
      for (std::size_t i = 0; i < p->size(); ++i) {
        const double v = (*p)[i];
        (*p)[i] = v + eps;
        const double up = combined_objective(g, x, logits, proj);
        (*p)[i] = v - eps;
        const double down = combined_objective(g, x, logits, proj);
        (*p)[i] = v;
        fd[i] = (up - down) / (2.0 * eps);
      }
      const auto grad = p->grad();
      EXPECT_LE(numerics::relative_error(std::vector<double>(grad.begin(), grad.end()), fd), 1e-4);
    }
  }
}

TEST(Gate, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  GatingNetwork g(3, 2, small_gate(), rng);
  for (auto& l : g.layers()) randomize(l.b(), rng, 0.5);
  const Tensor logits = random_tensor({2, 3, 2}, rng, -2.0, 2.0);
  const double err = test_support::grad_check(
      [&](Tape& tape, std::vector<Var>& v) { return combine(tape.constant(logits), g.forward(v[0])); },
      {random_tensor({2, 16}, rng)});
  EXPECT_LE(err, 1e-4);
}

TEST(EnsembleCombine, OneHotSelectsExpertExactly) {
  std::mt19937_64 rng(7);
  const Tensor logits = random_tensor({3, 5}, rng);
  for (std::size_t j = 0; j < 3; ++j) {
    Tensor w({3, 5});
    for (std::size_t c = 0; c < 5; ++c) w.at(j, c) = 1.0;
    const Tensor y = ensemble_combine(logits, w);
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(y[c], logits.at(j, c));
  }
}

TEST(EnsembleCombine, UniformAverage) {
  const Tensor logits = Tensor::matrix(2, 2, {1, 3, 3, 5});
  const Tensor y = ensemble_combine(logits, Tensor({2, 2}, 0.5));
  EXPECT_DOUBLE_EQ(y[0], 2.0);
  EXPECT_DOUBLE_EQ(y[1], 4.0);
}

TEST(EnsembleCombine, MatchesScalarLoopOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor logits = random_tensor({4, 15}, rng, -5.0, 5.0);
    const Tensor w = random_tensor({4, 15}, rng, 0.0, 1.0);
    const Tensor y = ensemble_combine(logits, w);
    for (std::size_t c = 0; c < 15; ++c) {
      double ref = 0.0;
      for (std::size_t e = 0; e < 4; ++e) ref += w[e * 15 + c] * logits[e * 15 + c];
      EXPECT_NEAR(y[c], ref, 1e-12);
    }
  }
}

TEST(EnsembleCombine, BatchedFormAgreesWithSingleSample) {
  std::mt19937_64 rng(9);
  const Tensor logits = random_tensor({3, 4, 2}, rng);
  const Tensor w = random_tensor({3, 4, 2}, rng, 0.0, 1.0);
  Tape tape;
  const Tensor y = combine(tape.constant(logits), tape.constant(w)).value();
  ASSERT_EQ(y.shape(), (Shape{3, 2}));
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor ln({4, 2}), wn({4, 2});
    for (std::size_t i = 0; i < 8; ++i) {
      ln[i] = logits[n * 8 + i];
      wn[i] = w[n * 8 + i];
    }
    const Tensor yn = ensemble_combine(ln, wn);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(y[n * 2 + c], yn[c], 1e-12);
  }
}

TEST(EnsembleCombine, ConvexWeightsStayInsideEnvelope) {
  std::mt19937_64 rng(10);
  GatingNetwork g(4, 6, small_gate(), rng);
  for (auto& l : g.layers()) randomize(l.b(), rng);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor logits = random_tensor({4, 6}, rng, -10.0, 10.0);
    const Tensor y = ensemble_combine(logits, gate_forward(g, random_tensor({2, 8}, rng)));
    for (std::size_t c = 0; c < 6; ++c) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t e = 0; e < 4; ++e) {
        lo = std::min(lo, logits.at(e, c));
        hi = std::max(hi, logits.at(e, c));
      }
      EXPECT_GE(y[c], lo - 1e-12);
      EXPECT_LE(y[c], hi + 1e-12);
    }
  }
}

TEST(EnsembleCombine, Errors) {
  EXPECT_THROW(ensemble_combine(Tensor({2, 3}), Tensor({3, 2})), DimensionError);
  EXPECT_THROW(ensemble_combine(Tensor({2, 1}), Tensor::matrix(2, 1, {1.5, -0.5})), UsageError);
}

TEST(ZeroShot, ExactOneHotExpertGetsLargestWeight) {
  std::mt19937_64 rng(11);
  const Targets labels = classes({0, 2, 1, 1, 0, 2});
  Tensor perfect({6, 3});
  for (std::size_t i = 0; i < 6; ++i) perfect.at(i, static_cast<std::size_t>(labels.values[i])) = 1.0;
  const std::vector<Tensor> logits{random_tensor({6, 3}, rng), perfect, random_tensor({6, 3}, rng)};
  const Tensor w = zero_shot_confidence_weights(logits, labels);
  EXPECT_GT(w[1], w[0]);
  EXPECT_GT(w[1], w[2]);
  EXPECT_NEAR(w[0] + w[1] + w[2], 1.0, 1e-12);
}

TEST(ZeroShot, IdenticalExpertsShareEqually) {
  std::mt19937_64 rng(12);
  const Tensor z = random_tensor({5, 1}, rng);
  const std::vector<Tensor> logits{z, z};
  const Tensor w = zero_shot_confidence_weights(logits, {TargetKind::binary, {1, 0, 1, 1, 0}});
  EXPECT_DOUBLE_EQ(w[0], 0.5);
  EXPECT_DOUBLE_EQ(w[1], 0.5);
}

TEST(ZeroShot, RegressionIsNotApplicable) {
  const std::vector<Tensor> logits{Tensor({3, 1})};
  EXPECT_THROW(zero_shot_confidence_weights(logits, {TargetKind::regression, {1, 2, 3}}),
               NotApplicableError);
}

TEST(Greedy, SingleExpertGetsFullWeight) {
  const std::vector<Tensor> logits{Tensor::matrix(3, 1, {1, 2, 3})};
  const Tensor w = greedy_search_weights(logits, {TargetKind::regression, {1, 2, 4}});
  ASSERT_EQ(w.size(), 1u);
  EXPECT_DOUBLE_EQ(w[0], 1.0);
}

TEST(Greedy, PerfectExpertDominates) {
  std::mt19937_64 rng(13);
  Targets t{TargetKind::regression, {}};
  Tensor perfect({40, 1});
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t i = 0; i < 40; ++i) {
    t.values.push_back(nd(rng));
    perfect[i] = t.values.back();
  }
  const std::vector<Tensor> logits{random_tensor({40, 1}, rng, -3, 3), perfect,
                                   random_tensor({40, 1}, rng, -3, 3)};
  EXPECT_GE(greedy_search_weights(logits, t)[1], 0.9);
}

TEST(Greedy, NeverWorseThanBestSingleAndMonotone) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    Targets t{TargetKind::regression, {}};
    std::vector<Tensor> logits;
    for (int e = 0; e < 4; ++e) logits.push_back(random_tensor({30, 1}, rng, -2, 2));
    for (std::size_t i = 0; i < 30; ++i) t.values.push_back(0.5 * (logits[0][i] + logits[2][i]));
    const GreedyResult r = greedy_search(logits, t);
    double best_single = -INFINITY;
    for (const auto& z : logits) best_single = std::max(best_single, score(t, z));
    const double final_score = score(t, combine_static(logits, r.weights));
    EXPECT_GE(final_score, best_single);
    EXPECT_NEAR(final_score, r.history.back(), 1e-12);
    for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_GT(r.history[i], r.history[i - 1]);
    double s = 0.0;
    for (double v : r.weights.data()) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Greedy, ClassificationScores) {
  const Targets t = classes({0, 1, 1});
  const std::vector<Tensor> logits{Tensor::matrix(3, 2, {1, 0, 0, 1, 1, 0}),
                                   Tensor::matrix(3, 2, {1, 0, 0, 1, 0, 1})};
  const Tensor w = greedy_search_weights(logits, t);
  EXPECT_DOUBLE_EQ(w[1], 1.0);
}

TEST(Greedy, EmptyValidationIsUsageError) {
  const std::vector<Tensor> logits{Tensor({1, 1})};
  EXPECT_THROW(greedy_search_weights(logits, {TargetKind::regression, {}}), UsageError);
}

namespace {

// Expert quality depends on the sign of a feature visible to the gate.
struct SwitchScenario {
  Tensor inputs;
  std::vector<Tensor> logits;
  std::vector<double> y;
};

SwitchScenario switch_scenario(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  SwitchScenario s{Tensor({n, 4}), {Tensor({n, 1}), Tensor({n, 1})}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const double sign = i % 2 == 0 ? 1.0 : -1.0;
    for (std::size_t j = 0; j < 4; ++j) s.inputs[i * 4 + j] = sign;
    const double y = nd(rng);
    s.y.push_back(y);
    s.logits[0][i] = sign > 0 ? y : y + 4.0;
    s.logits[1][i] = sign > 0 ? y - 4.0 : y;
  }
  return s;
}

double mse(const Tensor& pred, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (pred[i] - y[i]) * (pred[i] - y[i]);
  return s / static_cast<double>(y.size());
}

GatingNetwork train_switch(const SwitchScenario& s, std::uint64_t seed) {
  GateOptions o;
  o.leads = {0};
  o.pooled_len = 4;
  o.hidden = 8;
  const Tensor target = Tensor({s.y.size(), 1}, s.y);
  const CombinedLoss loss = [&](const Var& combined, std::span<const std::size_t> rows) {
    Tape& tape = *combined.tape();
    Var diff = numerics::add(combined, numerics::scale(tape.constant(numerics::gather_rows(target, rows)), -1.0));
    return numerics::mean(numerics::mul(diff, diff));
  };
  return sample_aware_weights_train(s.inputs, s.logits, loss, o,
                                    {.epochs = 60, .batch_size = 16, .learning_rate = 1e-2, .seed = seed});
}

}  // namespace

TEST(SampleAware, BeatsUniformWeightsOnSwitchingExperts) {
  const SwitchScenario s = switch_scenario(64, 15);
  GatingNetwork g = train_switch(s, 3);
  const double uniform = mse(combine_static(s.logits, Tensor::vector({0.5, 0.5})), s.y);
  const double learned = mse(sample_aware_combine(g, s.inputs, s.logits), s.y);
  EXPECT_LT(learned, 0.5 * uniform);
  EXPECT_EQ(g.layers()[0].mode(), adapters::AdaptMode::full);
}

TEST(SampleAware, WeightsSumToOnePerSample) {
  const SwitchScenario s = switch_scenario(32, 16);
  GatingNetwork g = train_switch(s, 4);
  Tape tape;
  const Tensor w = g.forward(tape.constant(s.inputs)).value();
  for (std::size_t i = 0; i < 32; ++i) EXPECT_NEAR(w[i * 2] + w[i * 2 + 1], 1.0, 1e-9);
}

TEST(SampleAware, DeterministicUnderFixedSeed) {
  const SwitchScenario s = switch_scenario(32, 17);
  GatingNetwork a = train_switch(s, 5);
  GatingNetwork b = train_switch(s, 5);
  EXPECT_EQ(sample_aware_combine(a, s.inputs, s.logits), sample_aware_combine(b, s.inputs, s.logits));
}
