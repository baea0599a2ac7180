#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "marm/entropy_model.hpp"
#include "marm/latent_coding.hpp"
#include "test_util.hpp"

using namespace marm;
using namespace marm::entropy;
using namespace marm::testing;

namespace {

template <typename T>
MarmNetworks<T> random_networks(const MarmConfig& cfg, uint64_t seed, double spread = 0.5) {
  std::mt19937_64 rng(seed);
  auto n = MarmNetworks<T>::make(cfg, rng);
  nn::ParamList<T> ps;
  n.collect(ps);
  std::uniform_real_distribution<double> u(-spread, spread);
  for (auto* p : ps)
    for (auto& v : p->mutable_value().vec()) v = static_cast<T>(u(rng));
  return n;
}

std::vector<int32_t> random_level(latent::Extent e, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(-4, 4);
  std::vector<int32_t> v(e.count());
  for (auto& x : v) x = d(rng);
  return v;
}

Tensor<Real> plane(const std::vector<int32_t>& v, latent::Extent e) {
  Tensor<Real> t(Shape{1, e.h, e.w});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<Real>(v[i]);
  return t;
}

}  // namespace

TEST(Schedule, AruPassCountIsTwiceTheAruLevelsMinusOne) {
  for (std::size_t L : {1u, 2u, 4u, 7u})
    for (std::size_t M = 0; M <= L; ++M)
      for (auto [h, w] : {std::pair{64, 64}, std::pair{256, 256}, std::pair{512, 512}, std::pair{5, 9}}) {
        MarmConfig cfg;
        cfg.levels = L;
        cfg.arm_levels = M;
        const Plan p = marm_param_schedule(latent::Geometry(h, w, L), cfg);
        EXPECT_EQ(p.vectorized_passes, M == L ? 0 : 2 * (L - M) - 1);
        EXPECT_EQ(p.arm_levels, M);
      }
}

TEST(Schedule, ArmLevelsAreTheLastM) {
  MarmConfig cfg;
  cfg.levels = 7;
  cfg.arm_levels = 2;
  for (std::size_t i = 0; i < 5; ++i) EXPECT_FALSE(cfg.is_arm_level(i));
  EXPECT_TRUE(cfg.is_arm_level(5));
  EXPECT_TRUE(cfg.is_arm_level(6));
  cfg.arm_levels = 8;
  EXPECT_THROW(cfg.validate(), ContractViolation);
}

TEST(ArmContext, OffsetsAreStrictlyCausal) {
  const auto off = arm_offsets(12);
  ASSERT_EQ(off.size(), 12u);
  for (auto [dy, dx] : off) EXPECT_TRUE(dy < 0 || (dy == 0 && dx < 0)) << dy << "," << dx;
  std::set<std::pair<int, int>> unique(off.begin(), off.end());
  EXPECT_EQ(unique.size(), off.size());
}

// Exhaustive perturbation on small grids: the vectorized ARM map at raster
// index t must not move when any index >= t changes.
TEST(Causality, ArmIsRasterCausal) {
  MarmConfig cfg;
  cfg.levels = 2;
  cfg.arm_levels = 2;
  const auto n = random_networks<double>(cfg, 11);
  std::mt19937_64 rng(5);
  std::size_t violations = 0, dependencies = 0;
  for (latent::Extent e : {latent::Extent{8, 8}, latent::Extent{5, 7}, latent::Extent{1, 6}}) {
    const auto base = random_level(e, rng);
    auto eval = [&](const std::vector<int32_t>& v) {
      Tensor<double> t(Shape{1, e.h, e.w});
      for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
      const auto p = arm_params_map(n, ad::constant(t), 1);
      return std::pair{p.mu.value(), p.sigma.value()};
    };
    const auto [mu0, s0] = eval(base);
    for (std::size_t s = 0; s < e.count(); ++s) {
      auto v = base;
      v[s] += 3;
      const auto [mu1, s1] = eval(v);
      for (std::size_t t = 0; t < e.count(); ++t) {
        const bool moved = mu1[t] != mu0[t] || s1[t] != s0[t];
        if (t <= s && moved) ++violations;
        if (t > s && moved) ++dependencies;
      }
    }
  }
  EXPECT_EQ(violations, 0u);
  EXPECT_GT(dependencies, 0u);
}

TEST(Causality, PixelWiseArmReadsOnlyThePast) {
  MarmConfig cfg;
  cfg.levels = 3;
  cfg.arm_levels = 3;
  const auto n = random_networks<Real>(cfg, 12);
  std::mt19937_64 rng(6);
  const latent::Extent e{8, 8};
  const auto v = random_level(e, rng);
  for (std::size_t t = 0; t < e.count(); ++t) {
    ArmEvaluator<Real> full(n, 2, e);
    for (std::size_t i = 0; i < e.count(); ++i) full.set(i / e.w, i % e.w, static_cast<Real>(v[i]));
    EXPECT_EQ(full.params(t / e.w, t % e.w), arm_params<Real>(n, v, e, 2, t)) << t;
  }
}

TEST(Causality, AruAnchorsDependOnlyOnThePreviousLevel) {
  MarmConfig cfg;
  cfg.levels = 3;
  const auto n = random_networks<Real>(cfg, 13);
  std::mt19937_64 rng(7);
  const latent::Geometry g(8, 8, 3);
  const latent::Extent pe = g.level(1), e = g.level(2);
  const auto prev = random_level(pe, rng);
  LevelParams<Real> prev_params{Tensor<Real>(Shape{1, pe.h, pe.w}, 0.3f), Tensor<Real>(Shape{1, pe.h, pe.w}, 1.1f)};
  const auto a0 = infer_pass1(n, plane(prev, pe), prev_params, 2, e);
  // Pass 1 never sees level 2 at all; every previous-level value matters somewhere.
  std::size_t dependencies = 0;
  for (std::size_t s = 0; s < pe.count(); ++s) {
    auto p = prev;
    p[s] -= 2;
    const auto a1 = infer_pass1(n, plane(p, pe), prev_params, 2, e);
    dependencies += !(a1.mu == a0.mu);
  }
  EXPECT_EQ(dependencies, pe.count());
}

TEST(Causality, AruNonAnchorsDependOnlyOnAnchors) {
  MarmConfig cfg;
  cfg.levels = 3;
  const auto n = random_networks<Real>(cfg, 14);
  std::mt19937_64 rng(8);
  std::size_t violations = 0, dependencies = 0;
  for (latent::Extent e : {latent::Extent{8, 8}, latent::Extent{3, 5}}) {
    const auto y = random_level(e, rng);
    LevelParams<Real> anchors{Tensor<Real>(Shape{1, e.h, e.w}, 0.0f), Tensor<Real>(Shape{1, e.h, e.w}, 1.0f)};
    const auto r0 = infer_pass2(n, plane(y, e), anchors, 1);
    for (std::size_t s = 0; s < e.count(); ++s) {
      auto v = y;
      v[s] += 5;
      const auto r1 = infer_pass2(n, plane(v, e), anchors, 1);
      const bool s_anchor = latent::is_anchor(s / e.w, s % e.w);
      for (std::size_t t = 0; t < e.count(); ++t) {
        if (latent::is_anchor(t / e.w, t % e.w)) continue;  // anchors take pass-1 params
        const bool moved = r1.mu[t] != r0.mu[t] || r1.sigma[t] != r0.sigma[t];
        if (!s_anchor && moved) ++violations;
        if (s_anchor && moved) ++dependencies;
      }
    }
  }
  EXPECT_EQ(violations, 0u);
  EXPECT_GT(dependencies, 0u);
}

TEST(EntropyModel, TapedAndInferencePathsAgree) {
  for (std::size_t M : {0u, 2u, 4u}) {
    MarmConfig cfg;
    cfg.levels = 4;
    cfg.arm_levels = M;
    const auto n = random_networks<Real>(cfg, 20 + M, 0.3);
    const latent::Geometry g(13, 10, 4);
    std::mt19937_64 rng(M);
    latent::LatentPyramid y(g);
    std::vector<ad::Var<Real>> yv;
    for (std::size_t i = 0; i < g.levels; ++i) {
      y.levels[i] = random_level(g.level(i), rng);
      yv.push_back(ad::constant(plane(y.levels[i], g.level(i))));
    }
    const auto taped = taped_params(n, yv);
    // The coding schedule records (mu, sigma) in coding order.
    codec::ParamTrace trace;
    const auto ranges = codec::latent_ranges(y);
    const auto coded = codec::encode_latents(n, y, ranges, true, &trace);
    ASSERT_EQ(trace.mu.size(), g.symbol_count());
    std::size_t k = 0;
    double worst = 0;
    for (std::size_t i = 0; i < g.levels; ++i) {
      const latent::Extent e = g.level(i);
      std::vector<std::size_t> order;
      if (cfg.is_arm_level(i)) {
        for (std::size_t t = 0; t < e.count(); ++t) order.push_back(t);
      } else {
        for (int pass = 0; pass < 2; ++pass)
          for (std::size_t t = 0; t < e.count(); ++t)
            if (latent::is_anchor(t / e.w, t % e.w) == (pass == 0)) order.push_back(t);
      }
      for (std::size_t t : order) {
        worst = std::max(worst, static_cast<double>(std::abs(trace.mu[k] - taped[i].mu.value()[t])));
        worst = std::max(worst, static_cast<double>(std::abs(trace.sigma[k] - taped[i].sigma.value()[t])) /
                                    static_cast<double>(taped[i].sigma.value()[t]));
        ++k;
      }
    }
    EXPECT_LT(worst, 1e-5) << "M=" << M;
    // And the decoder reproduces the latents from the payload.
    codec::ScheduleCounters counters;
    const auto back = codec::decode_latents(n, g, ranges, coded.bytes, counters);
    EXPECT_EQ(back.levels, y.levels);
    EXPECT_EQ(counters.symbols, g.symbol_count());
    EXPECT_EQ(counters.aru_passes, M == cfg.levels ? 0 : 2 * (cfg.levels - M) - 1);
  }
}

TEST(EntropyModel, TapedRateMatchesPmfOracle) {
  MarmConfig cfg;
  cfg.levels = 3;
  cfg.arm_levels = 1;
  const auto n = random_networks<double>(cfg, 30, 0.3);
  const latent::Geometry g(6, 7, 3);
  std::mt19937_64 rng(31);
  std::vector<ad::Var<double>> yv;
  for (std::size_t i = 0; i < g.levels; ++i) yv.push_back(ad::constant(random_tensor(Shape{1, g.level(i).h, g.level(i).w}, rng, -3, 3)));
  const auto params = taped_params(n, yv);
  double want = 0;
  for (std::size_t i = 0; i < g.levels; ++i)
    for (std::size_t t = 0; t < yv[i].size(); ++t)
      want -= std::log2(laplace::interval_prob(yv[i].value()[t], params[i].mu.value()[t], params[i].sigma.value()[t]));
  EXPECT_NEAR(taped_rate(n, yv).value().item(), want, 1e-9 * std::abs(want));
}

TEST(EntropyModel, RateGradientMatchesFiniteDifferences) {
  MarmConfig cfg;
  cfg.levels = 3;
  cfg.arm_levels = 1;
  auto n = random_networks<double>(cfg, 40, 0.3);
  const latent::Geometry g(4, 6, 3);
  std::mt19937_64 rng(41);
  std::vector<Tensor<double>> ys;
  for (std::size_t i = 0; i < g.levels; ++i) ys.push_back(random_tensor(Shape{1, g.level(i).h, g.level(i).w}, rng, -2, 2));
  const auto r = check_gradients(ys, [&](const std::vector<D>& v) { return taped_rate(n, v); }, 1e-6);
  EXPECT_LT(r.max_rel_err, 1e-4);
}
