// Writes tests/data/golden.marm and golden.ppm: a small bitstream and the
// encoder's own reconstruction of it. Regenerate only on a format change.
#include <cstdio>
#include <string>

#include "marm/marm.hpp"

int main(int argc, char** argv) {
  const std::string dir = argc > 1 ? argv[1] : "tests/data";
  const marm::image::Image img = marm::image::read_image(dir + "/crop07_30x31.ppm");
  marm::codec::EncodeConfig cfg;
  cfg.lambda = 0.001;
  cfg.iterations = 300;
  cfg.seed = 5;
  cfg.marm.arm_levels = 2;
  const auto res = marm::codec::encode(img, cfg);
  marm::image::write_file(dir + "/golden.marm", res.bitstream);
  marm::image::write_image(dir + "/golden.ppm", res.reconstruction);
  std::printf("%zu bytes, %.3f bpp, %.2f dB\n", res.bitstream.size(), res.report.bpp, res.report.psnr);
}
