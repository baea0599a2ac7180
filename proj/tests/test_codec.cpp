#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "marm/marm.hpp"
#include "test_util.hpp"

using namespace marm;
using namespace marm::codec;
using namespace marm::testing;

namespace {

EncodeConfig small_config(std::size_t arm, double lambda = 0.001, std::size_t iters = 60, uint64_t seed = 1) {
  EncodeConfig c;
  c.lambda = lambda;
  c.iterations = iters;
  c.seed = seed;
  c.marm.arm_levels = arm;
  return c;
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST(Codec, DecodeReproducesTheEncoderReconstruction) {
  const auto img = synthetic_image(29, 23, 3);
  for (std::size_t M : {0u, 2u, 7u}) {
    const auto res = encode(img, small_config(M));
    const auto dec = decode(res.bitstream);
    EXPECT_EQ(dec.image.rgb, res.reconstruction.rgb) << "M=" << M;
    EXPECT_EQ(dec.latents.levels, res.latents.levels);
    EXPECT_EQ(res.report.total_bytes, res.bitstream.size());
    EXPECT_DOUBLE_EQ(res.report.bpp, 8.0 * static_cast<double>(res.bitstream.size()) / (29.0 * 23.0));
    EXPECT_DOUBLE_EQ(dec.report.bpp, res.report.bpp);
    EXPECT_DOUBLE_EQ(res.report.psnr, metrics::psnr(res.reconstruction, img));
  }
}

TEST(Codec, SameSeedGivesIdenticalBytes) {
  const auto img = synthetic_image(20, 18, 4);
  const auto a = encode(img, small_config(2, 0.004, 40, 9));
  const auto b = encode(img, small_config(2, 0.004, 40, 9));
  EXPECT_EQ(a.bitstream, b.bitstream);
  const auto c = encode(img, small_config(2, 0.004, 40, 10));
  EXPECT_NE(a.bitstream, c.bitstream);
  const auto d1 = decode(a.bitstream), d2 = decode(a.bitstream);
  EXPECT_EQ(d1.image.rgb, d2.image.rgb);
  EXPECT_EQ(d1.report.counters.aru_passes, d2.report.counters.aru_passes);
  EXPECT_EQ(d1.report.counters.arm_evaluations, d2.report.counters.arm_evaluations);
}

TEST(Codec, DecoderSeesTheEncodersModelSequenceBitwise) {
  const auto img = synthetic_image(24, 24, 5);
  for (std::size_t M : {0u, 3u}) {
    ParamTrace enc_trace, dec_trace;
    const auto res = encode(img, small_config(M), &enc_trace);
    decode(res.bitstream, &dec_trace);
    ASSERT_EQ(enc_trace.mu.size(), latent::Geometry(24, 24, 7).symbol_count());
    EXPECT_TRUE(enc_trace == dec_trace);
  }
}

TEST(Codec, LatentPayloadTracksTheModelledRate) {
  for (uint64_t seed : {1u, 2u, 3u}) {
    const auto img = synthetic_image(40, 32, seed);
    for (double lambda : {0.02, 0.0001}) {
      const auto res = encode(img, small_config(seed % 3 == 0 ? 7 : 0, lambda, 80, seed));
      EXPECT_LE(8.0 * static_cast<double>(res.report.latent_bytes), 1.01 * res.report.rate_bits + 256)
          << seed << " " << lambda;
    }
  }
}

TEST(Codec, ScheduleCountsFollowTheGeometry) {
  const auto img = synthetic_image(37, 21, 6);
  const auto res = encode(img, small_config(0, 0.001, 20));
  const auto dec = decode(res.bitstream);
  std::size_t want = 0;
  for (std::size_t i = 0; i < 7; ++i) {
    const double s = std::ldexp(1.0, -static_cast<int>(6 - i));
    want += static_cast<std::size_t>(std::ceil(37 * s) * std::ceil(21 * s));
  }
  EXPECT_EQ(dec.report.counters.symbols, want);
  EXPECT_EQ(dec.report.counters.aru_passes, 13u);
  EXPECT_EQ(dec.report.counters.arm_evaluations, 0u);
  const auto arm = decode(encode(img, small_config(7, 0.001, 20)).bitstream);
  EXPECT_EQ(arm.report.counters.aru_passes, 0u);
  EXPECT_EQ(arm.report.counters.arm_evaluations, want);
}

TEST(Codec, StageTimesAddUpToTheTotal) {
  const auto res = encode(synthetic_image(64, 64, 7), small_config(2, 0.001, 20));
  const auto dec = decode(res.bitstream);
  const auto& r = dec.report;
  const double sum = r.params_s + r.latents_s + r.synthesis_s + r.export_s;
  EXPECT_NEAR(sum, r.total_s, 0.05 * r.total_s + 1e-4);
}

TEST(Codec, GoldenFixtureDecodesBitExactly) {
  const auto bytes = image::read_file(data_path("golden.marm"));
  const auto want = image::read_image(data_path("golden.ppm"));
  const auto dec = decode(bytes);
  EXPECT_EQ(dec.image.width, want.width);
  EXPECT_EQ(dec.image.height, want.height);
  EXPECT_EQ(dec.image.rgb, want.rgb);
}

TEST(Codec, EveryTruncationOfTheGoldenFixtureFailsCleanly) {
  const auto bytes = image::read_file(data_path("golden.marm"));
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    const std::span<const uint8_t> cut(bytes.data(), n);
    EXPECT_THROW(decode(cut), BitstreamError) << n;
  }
}

TEST(Codec, PayloadMutationsYieldTypedErrorsOrImages) {
  const auto bytes = image::read_file(data_path("golden.marm"));
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> pos(header_size(7), bytes.size() - 1);
  std::uniform_int_distribution<int> byte(1, 255);
  std::size_t errors = 0;
  for (int trial = 0; trial < 300; ++trial) {
    auto b = bytes;
    b[pos(rng)] ^= static_cast<uint8_t>(byte(rng));
    try {
      const auto d = decode(b);
      EXPECT_EQ(d.image.rgb.size(), d.image.width * d.image.height * 3);
    } catch (const BitstreamError&) {
      ++errors;
    }
  }
  EXPECT_GT(errors, 0u);
}

TEST(Codec, ConstantImageIsCheapAndNearlyExact) {
  image::Image img(16, 16);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<uint8_t>(i % 3 == 0 ? 200 : i % 3 == 1 ? 90 : 40);
  const auto res = encode(img, small_config(0, 0.001, 500));
  // The fitted representation is near exact and its latents almost free.
  // Total bpp at 256 pixels is set by the fixed header (99 bytes, 3.1 bpp)
  // and the weights, whose step the rate-distortion search coarsens.
  EXPECT_GT(10.0 * std::log10(1.0 / res.report.trace.back().mse), 45.0);
  EXPECT_LT(res.report.rate_bits / 256.0, 0.5);
  EXPECT_GE(res.report.bpp, 8.0 * static_cast<double>(header_size(7)) / 256.0);
  EXPECT_EQ(decode(res.bitstream).image.rgb, res.reconstruction.rgb);
}

TEST(Codec, RepresentationModeBeatsTheSmallestLambda) {
  const auto img = image::read_image(data_path("crop03_54x54.ppm"));
  const auto free_rate = encode(img, small_config(0, 0.0, 300, 2));
  const auto penalised = encode(img, small_config(0, 0.0001, 300, 2));
  EXPECT_GT(free_rate.report.psnr, penalised.report.psnr);
}

TEST(Codec, RateFallsAsLambdaGrows) {
  const auto img = image::read_image(data_path("crop06_49x61.ppm"));
  std::vector<double> bpp;
  for (double lambda : kLambdaPresets) bpp.push_back(encode(img, small_config(0, lambda, 250, 3)).report.bpp);
  // Presets run from the largest lambda to the smallest: bpp must not fall
  // along the list, allowing one inversion of at most 5%.
  int inversions = 0;
  for (std::size_t i = 1; i < bpp.size(); ++i)
    if (bpp[i] < bpp[i - 1]) {
      ++inversions;
      EXPECT_LE(bpp[i - 1] - bpp[i], 0.05 * bpp[i - 1]) << i;
    }
  EXPECT_LE(inversions, 1);
}

TEST(Loss, PerfectReconstructionWithoutRateIsZero) {
  std::mt19937_64 rng(1);
  CodecConfig cc;
  cc.height = 12;
  cc.width = 10;
  auto m = CodecModel<Real>::make(cc, rng);
  std::vector<ad::Var<Real>> y;
  const latent::Geometry g = m.geometry();
  for (std::size_t i = 0; i < g.levels; ++i) {
    Tensor<Real> t(Shape{1, g.level(i).h, g.level(i).w});
    for (auto& v : t.vec()) v = static_cast<Real>(std::uniform_int_distribution<int>(-3, 3)(rng));
    y.push_back(ad::constant(t));
  }
  const Tensor<Real> target = m.synthesis.forward(m.upsampler.forward(y, g)).value();
  EXPECT_EQ(loss(m, y, target, 0.0).loss.value().item(), 0.0f);
  EXPECT_GT(loss(m, y, target, 0.01).loss.value().item(), 0.0f);
}

TEST(Loss, WithoutRateTheEntropyModelIsIrrelevant) {
  std::mt19937_64 rng(2);
  CodecConfig cc;
  cc.height = 9;
  cc.width = 14;
  auto m = CodecModel<Real>::make(cc, rng);
  const latent::Geometry g = m.geometry();
  std::vector<ad::Var<Real>> y;
  for (std::size_t i = 0; i < g.levels; ++i) y.push_back(ad::constant(latent::uniform_noise<Real>(Shape{1, g.level(i).h, g.level(i).w}, rng)));
  const Tensor<Real> target(Shape{3, 9, 14}, 0.25f);
  const float before = loss(m, y, target, 0.0).loss.value().item();
  const float rated = loss(m, y, target, 0.01).loss.value().item();
  for (auto* p : m.params(ad::Group::psi)) p->mutable_value().fill(0.7f);
  EXPECT_EQ(loss(m, y, target, 0.0).loss.value().item(), before);
  EXPECT_NE(loss(m, y, target, 0.01).loss.value().item(), rated);
}

TEST(Loss, EndToEndGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  CodecConfig cc;
  cc.height = 6;
  cc.width = 5;
  cc.marm.levels = 3;
  cc.marm.arm_levels = 1;
  auto m = CodecModel<double>::make(cc, rng);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  for (auto* p : m.all_params())
    for (auto& v : p->mutable_value().vec()) v = u(rng);
  const latent::Geometry g = m.geometry();
  std::vector<Tensor<double>> ys;
  for (std::size_t i = 0; i < g.levels; ++i) ys.push_back(random_tensor(Shape{1, g.level(i).h, g.level(i).w}, rng, -2, 2));
  const Tensor<double> target = random_tensor(Shape{3, 6, 5}, rng, 0, 1);
  const auto r = check_gradients(ys, [&](const std::vector<D>& v) { return loss(m, v, target, 0.01).loss; }, 1e-6, 50);
  EXPECT_EQ(r.coords, std::min<std::size_t>(50, g.symbol_count()));
  EXPECT_LT(r.max_rel_err, 1e-3);
}

TEST(Loss, DecreasesOverPhaseAWindows) {
  const auto img = image::read_image(data_path("crop07_30x31.ppm"));
  EncodeConfig c = small_config(0, 0.001, 1200, 4);
  c.trace_every = 1;
  const auto res = encode(img, c);
  std::vector<double> loss;
  for (const auto& p : res.report.trace) loss.push_back(p.loss);
  const std::size_t phase_a = c.phase_a_iterations(), w = 50;
  for (std::size_t t = 0; t + 500 + w <= phase_a; t += w) {
    const double a = median({loss.begin() + static_cast<long>(t), loss.begin() + static_cast<long>(t + w)});
    const double b = median({loss.begin() + static_cast<long>(t + 500), loss.begin() + static_cast<long>(t + 500 + w)});
    EXPECT_LE(b, a) << "window at " << t;
  }
}

TEST(GreedyBestOf, PicksTheLowestObjectiveThenTheLowestSeed) {
  auto rep = [](double loss, uint64_t seed) {
    EncodeReport r;
    r.final_loss = loss;
    r.config.seed = seed;
    return r;
  };
  const std::vector<EncodeReport> one{rep(5, 0)};
  EXPECT_EQ(greedy_best_of(one), 0u);
  const std::vector<EncodeReport> three{rep(3, 0), rep(1, 1), rep(2, 2)};
  EXPECT_EQ(greedy_best_of(three), 1u);
  const std::vector<EncodeReport> tied{rep(1, 7), rep(1, 3), rep(1, 5)};
  EXPECT_EQ(greedy_best_of(tied), 1u);
  EXPECT_THROW(greedy_best_of(std::span<const EncodeReport>{}), ContractViolation);
}

TEST(Encode, RejectsBadInputs) {
  EXPECT_THROW(encode(image::Image(0, 0), small_config(0)), ContractViolation);
  EXPECT_THROW(encode(image::Image(8, 8), small_config(8)), ContractViolation);
  EXPECT_THROW(encode(image::Image(8, 8), small_config(0, -1.0)), ContractViolation);
}
