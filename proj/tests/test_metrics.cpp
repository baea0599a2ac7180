#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "marm/metrics.hpp"

using namespace marm;
using namespace marm::metrics;

namespace {

struct Poly {
  double c0, c1, c2, c3;
  double operator()(double q) const { return c0 + q * (c1 + q * (c2 + q * c3)); }
};

// Points with log10(x) = f(q) at the given PSNRs.
std::vector<CurvePoint> curve(const std::function<double(double)>& f, std::vector<double> qs) {
  std::vector<CurvePoint> out;
  for (double q : qs) out.push_back({std::pow(10.0, f(q)), q});
  return out;
}

// Independent oracle: trapezoid over 10^4 samples of the exact log difference.
double oracle(const std::function<double(double)>& h, double lo, double hi) {
  const int n = 10000;
  const double step = (hi - lo) / n;
  double acc = 0;
  for (int i = 0; i <= n; ++i) acc += (i == 0 || i == n ? 0.5 : 1.0) * h(lo + i * step);
  return (std::pow(10.0, acc * step / (hi - lo)) - 1.0) * 100.0;
}

image::Image filled(std::size_t w, std::size_t h, uint8_t v) {
  image::Image img(w, h);
  std::fill(img.rgb.begin(), img.rgb.end(), v);
  return img;
}

}  // namespace

TEST(Psnr, HandArithmetic) {
  const auto a = filled(3, 2, 17);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_DOUBLE_EQ(psnr(filled(2, 2, 0), filled(2, 2, 255)), 0.0);
  auto x = filled(1, 1, 100), y = filled(1, 1, 100);
  y.rgb[1] = 116;
  EXPECT_NEAR(psnr(x, y), 10.0 * std::log10(65025.0 * 3.0 / 256.0), 1e-12);
  EXPECT_NEAR(psnr(x, y), 28.82, 0.005);
  EXPECT_EQ(psnr(x, y), psnr(y, x));
  EXPECT_THROW(psnr(filled(2, 2, 0), filled(2, 3, 0)), ContractViolation);
}

TEST(BdRate, AnalyticAnchors) {
  const Poly base{-8.0, 0.2, 0.001, -1e-5};
  const std::vector<double> qs{28, 31, 34, 37, 40};
  const auto a = curve(base, qs);
  EXPECT_NEAR(bd_rate(a, a), 0.0, 1e-9);
  const auto doubled = curve([&](double q) { return base(q) + std::log10(2.0); }, qs);
  EXPECT_NEAR(bd_rate(a, doubled), 100.0, 1e-6);
  const auto faster = curve([&](double q) { return base(q) - 1.0; }, qs);
  EXPECT_NEAR(bd_time(a, faster), -90.0, 1e-6);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", bd_rate(a, doubled));
  EXPECT_STREQ(buf, "100.00");
  std::snprintf(buf, sizeof buf, "%.2f", bd_time(a, faster));
  EXPECT_STREQ(buf, "-90.00");
}

TEST(BdRate, MatchesNumericIntegrationOnSyntheticPairs) {
  struct Case {
    Poly a;
    Poly h;
    std::vector<double> qa, qb;
  };
  const std::vector<Case> cases{
      {{-6, 0.15, 0, 0}, {0.1, 0.01, 0, 0}, {28, 31, 34, 37, 40}, {30, 33, 36, 39, 42}},
      {{-9, 0.3, -0.002, 1e-5}, {-0.2, 0.002, 0, 0}, {30, 32, 35, 38}, {29, 33, 36, 41}},
      {{-4, 0.05, 0.001, 0}, {0.05, 0, 0.0001, 0}, {25, 28, 31, 34, 37, 40}, {27, 30, 33, 36}},
      {{-7, 0.2, 0, -2e-6}, {0.3, -0.01, 0, 0}, {31, 33, 35, 37, 39}, {30, 34, 38, 42}},
      {{-5, 0.1, 0.0005, 0}, {-0.05, -0.001, 0, 1e-7}, {26, 30, 34, 38, 42}, {28, 31, 35, 40}},
  };
  for (const auto& c : cases) {
    auto fb = [&](double q) { return c.a(q) + c.h(q); };
    const auto a = curve(c.a, c.qa), b = curve(fb, c.qb);
    const double lo = std::max(c.qa.front(), c.qb.front()), hi = std::min(c.qa.back(), c.qb.back());
    EXPECT_NEAR(bd_rate(a, b), oracle(c.h, lo, hi), 0.1);
    EXPECT_NEAR(bd_time(a, b), oracle(c.h, lo, hi), 0.1);
  }
}

TEST(BdRate, IsAntisymmetricInTheRatioSenseAndOrderFree) {
  const auto a = curve(Poly{-6, 0.15, 0, 0}, {28, 31, 34, 37, 40});
  const auto b = curve(Poly{-5.7, 0.14, 0.0001, 0}, {29, 32, 35, 38, 41});
  const double ab = bd_rate(a, b), ba = bd_rate(b, a);
  EXPECT_NEAR(ab, -ba / (1.0 + ba / 100.0), 0.5);
  auto shuffled = b;
  std::mt19937_64 rng(1);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  EXPECT_DOUBLE_EQ(bd_rate(a, shuffled), ab);
}

TEST(BdRate, RejectsUnusableCurves) {
  const auto a = curve(Poly{-6, 0.15, 0, 0}, {20, 21, 22, 23});
  const auto b = curve(Poly{-6, 0.15, 0, 0}, {30, 31, 32, 33});
  EXPECT_THROW(bd_rate(a, b), MetricError);
  EXPECT_THROW(bd_rate(curve(Poly{-6, 0.15, 0, 0}, {30, 31, 32}), b), MetricError);
  // Infinite-PSNR points are dropped before fitting.
  auto with_inf = b;
  with_inf.push_back({5.0, std::numeric_limits<double>::infinity()});
  EXPECT_DOUBLE_EQ(bd_rate(b, with_inf), bd_rate(b, b));
}

TEST(Curves, CsvRoundTripsAndFeedsBd) {
  CurveRow r{"kodim", 0.0004, 2, 0.583, 37.5, 12.5, 0.14, 0.01, 0.1, 0.03, 2165.8125};
  const auto one = to_csv({r});
  EXPECT_EQ(std::count(one.begin(), one.end(), '\n'), 2);
  const auto back = parse_csv(one);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].image, "kodim");
  EXPECT_EQ(back[0].lambda, r.lambda);
  EXPECT_EQ(back[0].arm_levels, 2u);
  EXPECT_EQ(back[0].bpp, r.bpp);
  EXPECT_EQ(back[0].psnr_db, r.psnr_db);
  EXPECT_EQ(back[0].macs_per_px, r.macs_per_px);
  EXPECT_EQ(to_csv(back), one);
  EXPECT_THROW(parse_csv("a,b\n"), MetricError);
  EXPECT_THROW(parse_csv(std::string(kCurveHeader) + "\nx,1,2\n"), MetricError);
}

TEST(Curves, AggregationIsThePerCellMean) {
  std::vector<CurveRow> rows;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (std::size_t m : {0u, 7u})
    for (double lambda : {0.001, 0.02})
      for (int img = 0; img < 3; ++img)
        rows.push_back({"img" + std::to_string(img), lambda, m, u(rng), 30 + u(rng), u(rng), u(rng), u(rng), u(rng),
                        u(rng), 2000 + u(rng)});
  const auto agg = aggregate(rows);
  ASSERT_EQ(agg.size(), 4u);
  for (const auto& a : agg) {
    double bpp = 0, psnr_sum = 0, dec = 0;
    int n = 0;
    for (const auto& r : rows)
      if (r.arm_levels == a.arm_levels && r.lambda == a.lambda) {
        bpp += r.bpp;
        psnr_sum += r.psnr_db;
        dec += r.dec_total_s;
        ++n;
      }
    EXPECT_EQ(n, 3);
    EXPECT_NEAR(a.bpp, bpp / 3, 1e-12);
    EXPECT_NEAR(a.psnr_db, psnr_sum / 3, 1e-12);
    EXPECT_NEAR(a.dec_total_s, dec / 3, 1e-12);
    EXPECT_EQ(a.image, "mean");
  }
  EXPECT_EQ(to_json(rows).size(), rows.size());
}
