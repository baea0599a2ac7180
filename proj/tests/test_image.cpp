#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "marm/image.hpp"
#include "test_util.hpp"

using namespace marm;
using namespace marm::image;
using namespace marm::testing;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("marm_test_" + name)).string();
}

}  // namespace

TEST(Ppm, RoundTripsBitwise) {
  const auto img = synthetic_image(13, 7, 1);
  const auto bytes = encode_ppm(img);
  EXPECT_EQ(decode_ppm(bytes), img);
  const std::string p = temp_path("rt.ppm");
  write_image(p, img);
  EXPECT_EQ(read_image(p), img);
  std::filesystem::remove(p);
}

TEST(Ppm, AcceptsCommentsAndArbitraryWhitespace) {
  std::string text = "P6 # comment\n 2\t1\n# another\n255\n";
  text += std::string("\x01\x02\x03\x04\x05\x06", 6);
  const Image img = decode_ppm(std::vector<uint8_t>(text.begin(), text.end()));
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 1u);
  EXPECT_EQ(img.at(0, 1, 2), 6);
}

TEST(Ppm, RejectsMalformedFiles) {
  auto bytes_of = [](const std::string& s) { return std::vector<uint8_t>(s.begin(), s.end()); };
  EXPECT_THROW(decode_ppm(bytes_of("P3\n1 1\n255\n")), ImageError);
  EXPECT_THROW(decode_ppm(bytes_of("P6\n1 1\n65535\n\0\0\0\0\0\0")), ImageError);
  EXPECT_THROW(decode_ppm(bytes_of("P6\n0 1\n255\n")), ImageError);
  EXPECT_THROW(decode_ppm(bytes_of("P6\n2 2\n255\nabc")), ImageError);
  EXPECT_THROW(decode_ppm(bytes_of("P6\nx 2\n255\n")), ImageError);
  EXPECT_THROW(decode_ppm(bytes_of("P6\n99999999999 99999999999\n255\n")), ImageError);
  EXPECT_THROW(read_image("/nonexistent/file.ppm"), ImageError);
}

TEST(Ppm, EveryTruncationIsRejected) {
  const auto bytes = encode_ppm(synthetic_image(4, 3, 2));
  for (std::size_t n = 0; n < bytes.size(); ++n)
    EXPECT_THROW(decode_ppm(std::vector<uint8_t>(bytes.begin(), bytes.begin() + static_cast<long>(n))), ImageError)
        << n;
}

TEST(Png, RoundTripsWhenEnabled) {
  if (!png_supported()) GTEST_SKIP() << "built without libpng";
  const auto img = synthetic_image(17, 9, 3);
  const std::string p = temp_path("rt.png");
  write_image(p, img);
  EXPECT_EQ(read_image(p), img);
  std::filesystem::remove(p);
}

TEST(TensorBridge, ExportRoundsAndClamps) {
  Tensor<double> t(Shape{3, 1, 4});
  const double vals[4] = {-0.2, 0.5 / 255.0, 1.5 / 255.0 - 1e-9, 3.0};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t x = 0; x < 4; ++x) t.at(c, 0, x) = vals[x];
  const Image img = from_tensor(t);
  EXPECT_EQ(img.at(0, 0, 0), 0);
  EXPECT_EQ(img.at(0, 1, 1), 1);  // half away from zero
  EXPECT_EQ(img.at(0, 2, 2), 1);
  EXPECT_EQ(img.at(0, 3, 0), 255);
  const auto src = synthetic_image(6, 5, 4);
  EXPECT_EQ(from_tensor(to_tensor<double>(src)), src);
  EXPECT_EQ(from_tensor(to_tensor<float>(src)), src);
}

TEST(Crop, CopiesTheWindow) {
  const auto src = synthetic_image(10, 8, 5);
  const auto c = crop(src, 2, 3, 4, 5);
  ASSERT_EQ(c.width, 5u);
  ASSERT_EQ(c.height, 4u);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 5; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(c.at(y, x, ch), src.at(y + 2, x + 3, ch));
  EXPECT_THROW(crop(src, 5, 0, 4, 1), ContractViolation);
}
