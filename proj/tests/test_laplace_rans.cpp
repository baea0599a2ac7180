#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "marm/laplace.hpp"
#include "marm/rans.hpp"

using namespace marm;

namespace {

// Independent oracle: integrate the Laplace density with b = sigma / sqrt(2)
// over [k - 0.5, k + 0.5] by composite Simpson.
double pmf_by_integration(int64_t k, double mu, double sigma) {
  const double b = sigma / std::sqrt(2.0);
  auto f = [&](double y) { return std::exp(-std::abs(y - mu) / b) / (2 * b); };
  const double lo = static_cast<double>(k) - 0.5, hi = static_cast<double>(k) + 0.5;
  // Split at mu so the kink sits on a node.
  auto simpson = [&](double a, double c) {
    const int n = 2000;
    const double h = (c - a) / n;
    double s = f(a) + f(c);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
    return s * h / 3;
  };
  if (mu > lo && mu < hi) return simpson(lo, mu) + simpson(mu, hi);
  return simpson(lo, hi);
}

}  // namespace

TEST(Laplace, PmfMatchesNumericIntegration) {
  for (double mu : {0.0, 0.3, -1.7, 4.2})
    for (double sigma : {0.1, 0.7, 1.0, 5.0, 20.0})
      for (int64_t k = -6; k <= 6; ++k) {
        const double want = pmf_by_integration(k, mu, sigma);
        EXPECT_NEAR(laplace::laplace_pmf(k, mu, sigma), want, 1e-9 + 1e-7 * want) << mu << " " << sigma << " " << k;
      }
}

TEST(Laplace, PmfSumsToOneOverTheSignaledRange) {
  for (double mu : {0.0, 2.5, -10.0})
    for (double sigma : {laplace::kSigmaFloor, 0.5, 3.0, 30.0}) {
      std::vector<double> t(256);
      laplace::pmf_table(mu, sigma, -128, 127, t);
      const double total = std::accumulate(t.begin(), t.end(), 0.0);
      EXPECT_GE(total, 1.0 - 1e-6);
      EXPECT_LE(total, 1.0 + 1e-12);
    }
}

TEST(Laplace, TableMatchesPointwisePmfWithTailsFolded) {
  const double mu = 1.3, sigma = 2.2;
  std::vector<double> t(21);
  laplace::pmf_table(mu, sigma, -10, 10, t);
  for (int64_t k = -9; k <= 9; ++k) EXPECT_NEAR(t[k + 10], laplace::laplace_pmf(k, mu, sigma), 1e-15);
  // Edge symbols hold everything beyond them; the oracle sums the far tail.
  double below = 0, above = 0;
  for (int64_t k = -400; k <= -10; ++k) below += pmf_by_integration(k, mu, sigma);
  for (int64_t k = 10; k <= 400; ++k) above += pmf_by_integration(k, mu, sigma);
  EXPECT_NEAR(t.front(), below, 1e-9);
  EXPECT_NEAR(t.back(), above, 1e-9);
}

TEST(Laplace, LogProbStaysFiniteInTheTails) {
  const auto lp = laplace::interval_log_prob(200.0, 0.0, laplace::kSigmaFloor);
  EXPECT_TRUE(std::isfinite(lp.logp));
  EXPECT_LT(lp.logp, -1e5);
}

TEST(Laplace, RateAccumulatorClampsImpossibleSymbols) {
  laplace::RateAccumulator acc;
  acc.add(0, 0.0, 1.0);
  acc.add(100, 0.0, laplace::kSigmaFloor);
  EXPECT_EQ(acc.symbols, 2u);
  EXPECT_EQ(acc.clamped, 1u);
  EXPECT_NEAR(acc.bits, -std::log2(laplace::laplace_pmf(0, 0.0, 1.0)) + 32.0, 1e-9);
}

TEST(QuantizedCdf, SumsToScaleWithNoZeroEntries) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> mu(-140, 140), ls(-7, 4.2);
  for (int trial = 0; trial < 500; ++trial) {
    const auto c = coder::quantize_cdf(mu(rng), std::exp(ls(rng)), -128, 127);
    const auto& f = c.frequencies();
    EXPECT_EQ(std::accumulate(f.begin(), f.end(), uint64_t{0}), coder::kProbScale);
    EXPECT_EQ(*std::min_element(f.begin(), f.end()) >= 1, true);
  }
}

TEST(QuantizedCdf, SymbolLookupInvertsStart) {
  const auto c = coder::quantize_cdf(0.4, 1.5, -10, 10);
  for (int64_t k = -10; k <= 10; ++k) {
    EXPECT_EQ(c.symbol_for(c.start(k)), k);
    EXPECT_EQ(c.symbol_for(c.start(k) + c.freq(k) - 1), k);
  }
}

TEST(QuantizedCdf, RejectsBadModels) {
  EXPECT_THROW(coder::quantize_cdf(0, 1, 3, 2), ContractViolation);
  EXPECT_THROW(coder::quantize_cdf(0, -1, 0, 2), ContractViolation);
  EXPECT_THROW(coder::quantize_cdf(std::nan(""), 1, 0, 2), ContractViolation);
}

TEST(Rans, RoundTripsAMillionRandomSymbols) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> mu(-5, 5), ls(-3, 3);
  std::vector<coder::QuantizedCdf> tables;
  for (int i = 0; i < 64; ++i) tables.push_back(coder::quantize_cdf(mu(rng), std::exp(ls(rng)), -40, 40));
  const std::size_t n = 1'000'000;
  std::vector<int64_t> symbols(n);
  std::vector<uint8_t> which(n);
  std::uniform_int_distribution<int> pick(0, 63), sym(-40, 40);
  coder::RansEncoder enc;
  for (std::size_t i = 0; i < n; ++i) {
    which[i] = static_cast<uint8_t>(pick(rng));
    symbols[i] = sym(rng);  // deliberately not drawn from the model
    enc.put(tables[which[i]], symbols[i]);
  }
  const auto bytes = enc.finish();
  coder::RansDecoder dec(bytes);
  for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(dec.decode(tables[which[i]]), symbols[i]) << i;
  EXPECT_NO_THROW(dec.finish());
}

TEST(Rans, PayloadApproachesModelEntropy) {
  // Symbols drawn from the quantized model: the payload stays within a few
  // bytes of the ideal code length.
  const auto c = coder::quantize_cdf(0.0, 2.0, -30, 30);
  std::vector<double> w;
  for (uint32_t f : c.frequencies()) w.push_back(f);
  std::discrete_distribution<int> d(w.begin(), w.end());
  std::mt19937_64 rng(9);
  coder::RansEncoder enc;
  double ideal = 0;
  for (int i = 0; i < 100000; ++i) {
    const int64_t s = d(rng) - 30;
    ideal += c.bits(s);
    enc.put(c, s);
  }
  const auto bytes = enc.finish();
  EXPECT_LE(8.0 * static_cast<double>(bytes.size()), ideal * 1.001 + 64);
  EXPECT_GE(8.0 * static_cast<double>(bytes.size()), ideal - 64);
}

TEST(Rans, EmptyStreamRoundTrips) {
  coder::RansEncoder enc;
  const auto bytes = enc.finish();
  coder::RansDecoder dec(bytes);
  EXPECT_NO_THROW(dec.finish());
}

TEST(Rans, CorruptStreamsFailWithTypedErrors) {
  const auto c = coder::quantize_cdf(0.0, 1.0, -5, 5);
  coder::RansEncoder enc;
  for (int i = 0; i < 100; ++i) enc.put(c, (i % 11) - 5);
  const auto bytes = enc.finish();
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    std::vector<uint8_t> t(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    try {
      coder::RansDecoder dec(t);
      for (int i = 0; i < 100; ++i) dec.decode(c);
      dec.finish();
      ADD_FAILURE() << "truncation at " << cut << " went unnoticed";
    } catch (const BitstreamError&) {
    }
  }
  // Trailing garbage is detected by finish().
  auto longer = bytes;
  longer.insert(longer.end(), {1, 2, 3, 4});
  try {
    coder::RansDecoder dec(longer);
    for (int i = 0; i < 100; ++i) dec.decode(c);
    dec.finish();
    ADD_FAILURE() << "trailing bytes went unnoticed";
  } catch (const BitstreamError&) {
  }
}

TEST(QuantizedCdf, CentreFrequencyMatchesThePmf) {
  const auto c = coder::quantize_cdf(0.0, std::sqrt(2.0), -8, 8);
  // b = 1: P(|y| < 0.5) = 1 - e^-0.5.
  EXPECT_NEAR(static_cast<double>(c.freq(0)) / coder::kProbScale, 1.0 - std::exp(-0.5), std::ldexp(1.0, -12));
  EXPECT_NEAR(1.0 - std::exp(-0.5), 0.393469, 1e-6);
}

TEST(QuantizedCdf, IdenticalInputsGiveIdenticalTables) {
  const auto a = coder::quantize_cdf(0.37, 2.9, -40, 40), b = coder::quantize_cdf(0.37, 2.9, -40, 40);
  EXPECT_EQ(a.frequencies(), b.frequencies());
}

TEST(Rans, EmptyFlushIsSmall) {
  coder::RansEncoder enc;
  EXPECT_LE(enc.finish().size(), 16u);
}

TEST(Rans, MixedModelsRoundTripAndStayNearTheModelledRate) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> mu(-20, 20), ls(-6, 4);
    std::uniform_int_distribution<int> lo(-128, 0);
    const std::size_t n = 100000;
    std::vector<coder::QuantizedCdf> models;
    std::vector<int64_t> symbols;
    double ideal = 0;
    coder::RansEncoder enc;
    for (std::size_t i = 0; i < n; ++i) {
      const int64_t a = lo(rng);
      models.push_back(coder::quantize_cdf(mu(rng), std::exp(ls(rng)), a, a + 127));
      // Draw from the quantized model so the rate bound is meaningful.
      std::uniform_int_distribution<uint32_t> u(0, coder::kProbScale - 1);
      const int64_t s = models.back().symbol_for(u(rng));
      symbols.push_back(s);
      ideal += models.back().bits(s);
      enc.put(models.back(), s);
    }
    const auto bytes = enc.finish();
    EXPECT_LE(static_cast<double>(bytes.size()), ideal / 8.0 * 1.01 + 32) << seed;
    coder::RansDecoder dec(bytes);
    for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(dec.decode(models[i]), symbols[i]) << seed << " " << i;
    EXPECT_NO_THROW(dec.finish());
  }
}
