#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "marm/param_coding.hpp"

using namespace marm;
using namespace marm::codec;

namespace {

std::vector<float> random_weights(std::size_t n, double scale, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  std::vector<float> w(n);
  for (auto& v : w) v = static_cast<float>(d(rng));
  return w;
}

}  // namespace

TEST(ParamCoding, ZeroGroupIsTinyAndRoundTrips) {
  const std::vector<float> w(500, 0.0f);
  const auto g = code_group(w, 6);
  ASSERT_TRUE(g);
  EXPECT_EQ(g->qmin, 0);
  EXPECT_EQ(g->qmax, 0);
  EXPECT_LE(g->payload.size(), 8u);
  EXPECT_EQ(decode_group(*g, w.size()), w);
}

TEST(ParamCoding, RoundTripReproducesTheQuantizedGridExactly) {
  for (int e = kMinStepExp; e <= kMaxStepExp; ++e) {
    const auto w = random_weights(1509, 0.3, static_cast<uint64_t>(e));
    const auto g = code_group(w, e);
    ASSERT_TRUE(g);
    const auto back = decode_group(*g, w.size());
    const double step = step_of(e);
    for (std::size_t i = 0; i < w.size(); ++i) {
      // Independent oracle: nearest grid point, halves away from zero.
      const double x = static_cast<double>(w[i]) / step;
      const double r = std::copysign(std::floor(std::abs(x) + 0.5), x);
      ASSERT_EQ(back[i], static_cast<float>(r * step)) << "e=" << e << " i=" << i;
    }
  }
}

TEST(ParamCoding, FinerStepsCostMoreBits) {
  const auto w = random_weights(2000, 0.5, 3);
  std::size_t prev = 0;
  for (int e = kMinStepExp; e <= kMaxStepExp; ++e) {
    const auto g = code_group(w, e);
    ASSERT_TRUE(g);
    EXPECT_GT(g->payload.size(), prev);
    prev = g->payload.size();
  }
}

TEST(ParamCoding, SigmaFitIsTheLaplaceMaximumLikelihoodScale) {
  const std::vector<int64_t> q{3, -1, 0, 4, -2};
  EXPECT_FLOAT_EQ(fit_sigma(q), static_cast<float>(std::sqrt(2.0) * 10.0 / 5.0));
  EXPECT_FLOAT_EQ(fit_sigma(std::vector<int64_t>(7, 0)), 0.05f);
}

TEST(ParamCoding, WideAlphabetsAreRejected) {
  std::vector<float> w{-20.0f, 20.0f};  // 40 * 2^9 > 2^14 at the finest step
  EXPECT_FALSE(code_group(w, 9));
  EXPECT_TRUE(code_group(w, 4));
  EXPECT_THROW(code_group(w, 3), ContractViolation);
  const std::vector<float> huge{-1e6f, 1e6f};
  EXPECT_THROW(choose_group_step(huge, [](const GroupCoding& g) { return g.bits(); }), EncodeError);
}

TEST(ParamCoding, StepChoiceMinimisesTheObjective) {
  // Toy model: distortion proxy is the squared quantization error of the
  // weights, weighted by lambda. Exhaustive evaluation is the oracle.
  const auto w = random_weights(300, 0.2, 4);
  for (double lambda : {1e-1, 1e1, 1e3, 1e5}) {
    auto objective = [&](const GroupCoding& g) {
      const auto back = decode_group(g, w.size());
      double d = 0;
      for (std::size_t i = 0; i < w.size(); ++i) d += std::pow(static_cast<double>(back[i] - w[i]), 2);
      return g.bits() + lambda * d;
    };
    double best = std::numeric_limits<double>::infinity();
    int best_e = -1;
    for (int e = kMinStepExp; e <= kMaxStepExp; ++e) {
      const double c = objective(*code_group(w, e));
      if (c < best) {
        best = c;
        best_e = e;
      }
    }
    const auto chosen = choose_group_step(w, objective);
    EXPECT_EQ(chosen.step_exp, best_e) << lambda;
    EXPECT_EQ(objective(chosen), best);
  }
  // Rate-only objective picks the coarsest step; distortion-heavy the finest.
  EXPECT_EQ(choose_group_step(w, [](const GroupCoding& g) { return g.bits(); }).step_exp, kMinStepExp);
}

TEST(ParamCoding, CorruptHeadersAreTypedErrors) {
  const auto w = random_weights(50, 0.3, 5);
  auto g = *code_group(w, 7);
  auto bad = g;
  bad.step_exp = 12;
  EXPECT_THROW(decode_group(bad, w.size()), BitstreamError);
  bad = g;
  bad.qmin = bad.qmax + 1;
  EXPECT_THROW(decode_group(bad, w.size()), BitstreamError);
  bad = g;
  bad.sigma = -1.0f;
  EXPECT_THROW(decode_group(bad, w.size()), BitstreamError);
  bad = g;
  bad.payload.resize(bad.payload.size() / 2);
  EXPECT_THROW(decode_group(bad, w.size()), BitstreamError);
}
