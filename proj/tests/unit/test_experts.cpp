#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "enecg/error.hpp"
#include "enecg/experts/expert.hpp"
#include "test_util.hpp"

using namespace enecg;
using namespace enecg::experts;
using enecg::test_support::grad_check;
using enecg::test_support::random_tensor;

namespace {

Tensor sinusoid(std::size_t leads, std::size_t n, double hz, double fs) {
  Tensor x({leads, n});
  for (std::size_t c = 0; c < leads; ++c)
    for (std::size_t t = 0; t < n; ++t)
      x[c * n + t] = std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(t) / fs);
  return x;
}

double l2_distance(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

class ExpertArchTest : public ::testing::TestWithParam<ExpertArch> {};

TEST_P(ExpertArchTest, SameSeedSameChecksum) {
  const auto a = build_expert(GetParam(), 11, default_input_len(GetParam()), 64);
  const auto b = build_expert(GetParam(), 11, default_input_len(GetParam()), 64);
  EXPECT_EQ(a.checksum(), b.checksum());
  const auto c = build_expert(GetParam(), 12, default_input_len(GetParam()), 64);
  EXPECT_NE(a.checksum(), c.checksum());
}

TEST_P(ExpertArchTest, OutputLengthIsFeatureDim) {
  std::mt19937_64 rng(1);
  const std::size_t len = default_input_len(GetParam());
  const auto m = build_expert(GetParam(), 3, len, 64);
  for (int i = 0; i < 3; ++i) {
    const Tensor y = expert_forward(m, random_tensor({12, len}, rng));
    EXPECT_EQ(y.shape(), (Shape{64}));
    EXPECT_TRUE(y.all_finite());
  }
}

TEST_P(ExpertArchTest, ForwardIsPure) {
  std::mt19937_64 rng(2);
  const std::size_t len = default_input_len(GetParam());
  const auto m = build_expert(GetParam(), 3, len, 32);
  const auto before = m.checksum();
  const Tensor x = random_tensor({12, len}, rng);
  EXPECT_EQ(expert_forward(m, x), expert_forward(m, x));
  EXPECT_EQ(m.checksum(), before);
}

TEST_P(ExpertArchTest, ParametersAreFrozen) {
  const auto m = build_expert(GetParam(), 3, default_input_len(GetParam()), 32);
  for (const auto& p : m.parameters()) EXPECT_FALSE(p.requires_grad());
}

TEST_P(ExpertArchTest, BackwardLeavesParametersUntouched) {
  std::mt19937_64 rng(4);
  const std::size_t len = default_input_len(GetParam());
  const auto m = build_expert(GetParam(), 3, len, 16);
  const auto before = m.checksum();
  Tensor x = random_tensor({12, len}, rng);
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(numerics::sum(m.forward(tape.leaf(x))));
  EXPECT_TRUE(x.has_grad());
  for (const auto& p : m.parameters()) EXPECT_FALSE(p.has_grad());
  EXPECT_EQ(m.checksum(), before);
}

TEST_P(ExpertArchTest, WrongLengthNamesExpectedLength) {
  const std::size_t len = default_input_len(GetParam());
  const auto m = build_expert(GetParam(), 3, len, 16);
  try {
    expert_forward(m, Tensor({12, len + 1}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(len)), std::string::npos) << e.what();
  }
  EXPECT_THROW(expert_forward(m, Tensor({11, len})), DimensionError);
}

TEST_P(ExpertArchTest, InputGradientMatchesFiniteDifferences) {
  // Small shapes keep the central-difference sweep cheap.
  const std::size_t len = GetParam() == ExpertArch::convolutional ? 100 : 64;
  const auto m = build_expert(GetParam(), 5, len, 8, 2);
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({2, len}, rng);
  const double err = grad_check([&](Tape&, std::vector<Var>& v) { return m.forward(v[0]); }, {x});
  EXPECT_LE(err, 1e-5);
}

INSTANTIATE_TEST_SUITE_P(AllArchitectures, ExpertArchTest,
                         ::testing::Values(ExpertArch::spectral, ExpertArch::convolutional,
                                           ExpertArch::statistical),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Expert, DefaultInputLengthsAreDistinct) {
  EXPECT_EQ(default_input_len(ExpertArch::spectral), 512u);
  EXPECT_EQ(default_input_len(ExpertArch::convolutional), 1000u);
  EXPECT_EQ(default_input_len(ExpertArch::statistical), 2500u);
}

TEST(Expert, UnknownTagIsUsageError) {
  EXPECT_THROW(build_expert("transformer", 1, 512, 64), UsageError);
  EXPECT_EQ(parse_arch("spectral"), ExpertArch::spectral);
}

TEST(Expert, SpectralZeroInputGivesBias) {
  const auto m = build_expert(ExpertArch::spectral, 2, 512, 64);
  const Tensor y = expert_forward(m, Tensor({12, 512}));
  const Tensor& bias = m.parameters()[1];
  ASSERT_EQ(bias.size(), 64u);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_DOUBLE_EQ(y[i], bias[i]);
}

TEST(Expert, SpectralSeparatesFrequencies) {
  const auto m = build_expert(ExpertArch::spectral, 2, 512, 64);
  const Tensor a = expert_forward(m, sinusoid(12, 512, 5.0, 51.2));
  const Tensor b = expert_forward(m, sinusoid(12, 512, 20.0, 51.2));
  EXPECT_GT(l2_distance(a, b), 0.0);
}

TEST(Expert, ParameterCountsFollowArchitecture) {
  const auto s = build_expert(ExpertArch::spectral, 1, 512, 64);
  EXPECT_EQ(s.parameter_count(), 12 * kSpectralBins * 64 + 64);
  const auto st = build_expert(ExpertArch::statistical, 1, 2500, 64);
  EXPECT_EQ(st.parameter_count(), 12 * 4 * kStatPatches * 64 + 64);
  const auto c = build_expert(ExpertArch::convolutional, 1, 1000, 64);
  EXPECT_EQ(c.parameter_count(), kConvChannels2 * 64 + 64 + kConvChannels1 * 12 * kConvWidth1 +
                                     kConvChannels2 * kConvChannels1 * kConvWidth2);
}
