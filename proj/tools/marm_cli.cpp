// marm: encode, decode and benchmark images with the MARM codec.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "marm/marm.hpp"

namespace fs = std::filesystem;
using namespace marm;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EncodeFlags {
  double lambda = 0.001;
  std::size_t latents = 7;
  std::size_t arm = 0;
  std::size_t iters = 2000;
  uint64_t seed = 0;
};

void add_encode_flags(CLI::App* cmd, EncodeFlags& f) {
  cmd->add_option("--lambda", f.lambda, "rate weight (>= 0)")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--latents", f.latents, "latent levels L")->capture_default_str()->check(CLI::Range(1, 16));
  cmd->add_option("--arm", f.arm, "levels coded by the pixel-wise model (M <= L)")->capture_default_str();
  cmd->add_option("--iters", f.iters, "training iterations")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--seed", f.seed, "random seed")->capture_default_str();
}

codec::EncodeConfig to_config(const EncodeFlags& f) {
  if (f.arm > f.latents)
    throw UsageError("--arm " + std::to_string(f.arm) + " exceeds --latents " + std::to_string(f.latents));
  codec::EncodeConfig c;
  c.lambda = f.lambda;
  c.iterations = f.iters;
  c.seed = f.seed;
  c.marm.levels = f.latents;
  c.marm.arm_levels = f.arm;
  return c;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream os(p);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Median of three decodes by total time.
codec::Decoded timed_decode(const std::vector<uint8_t>& bytes) {
  std::vector<codec::Decoded> runs;
  for (int i = 0; i < 3; ++i) runs.push_back(codec::decode(bytes));
  std::sort(runs.begin(), runs.end(),
            [](const codec::Decoded& a, const codec::Decoded& b) { return a.report.total_s < b.report.total_s; });
  return std::move(runs[1]);
}

int cmd_encode(const std::string& in, const std::string& out, const EncodeFlags& f) {
  const auto cfg = to_config(f);
  const image::Image img = image::read_image(in);
  const codec::EncodeResult r = codec::encode(img, cfg);
  image::write_file(out, r.bitstream);
  write_json(out + ".json", r.report.to_json());
  std::printf("%s: %zu bytes, %.4f bpp, %.3f dB\n", out.c_str(), r.report.total_bytes, r.report.bpp, r.report.psnr);
  return 0;
}

int cmd_decode(const std::string& in, const std::string& out) {
  const auto bytes = image::read_file(in);
  const codec::Decoded d = codec::decode(bytes);
  image::write_image(out, d.image);
  nlohmann::json j = d.report.to_json();
  j["version"] = MARM_VERSION;
  write_json(out + ".json", j);
  std::printf("%s: %zux%zu in %.4f s\n", out.c_str(), d.image.width, d.image.height, d.report.total_s);
  return 0;
}

int cmd_roundtrip(const std::string& in, const std::string& report, const EncodeFlags& f) {
  const auto cfg = to_config(f);
  const image::Image img = image::read_image(in);
  const codec::EncodeResult r = codec::encode(img, cfg);
  const codec::Decoded d = codec::decode(r.bitstream);
  if (!(d.image == r.reconstruction)) {
    std::fprintf(stderr, "roundtrip: decoded image differs from the encoder reconstruction\n");
    return 3;
  }
  const double psnr = metrics::psnr(d.image, img);
  if (!report.empty()) {
    nlohmann::json j = {{"encode", r.report.to_json()}, {"decode", d.report.to_json()}};
    j["bpp"] = d.report.bpp;
    j["decode_s"] = d.report.total_s;
    j["psnr_db"] = std::isfinite(psnr) ? nlohmann::json(psnr) : nlohmann::json("inf");
    j["version"] = MARM_VERSION;
    write_json(report, j);
  }
  std::printf("(%.4f, %.4fs, %.3f)\n", d.report.bpp, d.report.total_s, psnr);
  return 0;
}

struct Cell {
  fs::path image;
  double lambda;
  std::size_t arm;
  std::string stem() const {
    std::ostringstream os;
    os << image.stem().string() << "_l" << lambda << "_m" << arm;
    return os.str();
  }
};

int cmd_bench(const std::string& dir, const std::vector<double>& lambdas, const std::vector<std::size_t>& arms,
              const EncodeFlags& base, const std::string& emit, std::size_t jobs) {
  std::vector<fs::path> images;
  if (fs::is_directory(dir))
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".ppm" || (ext == ".png" && image::png_supported()))) images.push_back(e.path());
    }
  if (images.empty()) {
    std::fprintf(stderr, "bench: no images in '%s'\n", dir.c_str());
    return 1;
  }
  std::sort(images.begin(), images.end());
  for (std::size_t m : arms)
    if (m > base.latents) throw UsageError("--arm-list entry " + std::to_string(m) + " exceeds --latents");

  const fs::path out(emit), cells_dir = out / "cells";
  fs::create_directories(cells_dir);
  std::vector<Cell> cells;
  for (const auto& img : images)
    for (double l : lambdas)
      for (std::size_t m : arms) cells.push_back({img, l, m});

  // Encodes run in parallel; a cell is done once its bitstream and encode
  // report exist, so an interrupted sweep picks up where it stopped.
  std::atomic<std::size_t> next{0};
  std::mutex log;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const Cell& c = cells[i];
      const fs::path bits = cells_dir / (c.stem() + ".marm"), rep = cells_dir / (c.stem() + ".enc.json");
      if (fs::exists(bits) && fs::exists(rep)) continue;
      try {
        EncodeFlags f = base;
        f.lambda = c.lambda;
        f.arm = c.arm;
        const auto r = codec::encode(image::read_image(c.image.string()), to_config(f));
        write_json(rep.string() + ".tmp", r.report.to_json());
        image::write_file(bits.string() + ".tmp", r.bitstream);
        fs::rename(bits.string() + ".tmp", bits);
        fs::rename(rep.string() + ".tmp", rep);
        std::lock_guard lk(log);
        std::printf("encoded %s: %.4f bpp, %.3f dB, %.1f s\n", c.stem().c_str(), r.report.bpp, r.report.psnr,
                    r.report.total_s);
        std::fflush(stdout);
      } catch (const std::exception& e) {
        std::lock_guard lk(log);
        std::fprintf(stderr, "bench: %s failed: %s\n", c.stem().c_str(), e.what());
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::max<std::size_t>(jobs, 1); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failed) return 1;

  // Decode timing runs serially on this thread only.
  std::vector<metrics::CurveRow> rows;
  for (const Cell& c : cells) {
    const fs::path row_path = cells_dir / (c.stem() + ".row.json");
    metrics::CurveRow row;
    if (fs::exists(row_path)) {
      const auto j = nlohmann::json::parse(read_text(row_path));
      row.image = j.at("image");
      row.lambda = j.at("lambda");
      row.arm_levels = j.at("M");
      row.bpp = j.at("bpp");
      row.psnr_db = j.at("psnr_db").is_string() ? INFINITY : j.at("psnr_db").get<double>();
      row.enc_s = j.at("enc_s");
      row.dec_total_s = j.at("dec_total_s");
      row.dec_params_s = j.at("dec_params_s");
      row.dec_latents_s = j.at("dec_latents_s");
      row.dec_synth_s = j.at("dec_synth_s");
      row.macs_per_px = j.at("macs_per_px");
    } else {
      const auto bytes = image::read_file((cells_dir / (c.stem() + ".marm")).string());
      const auto enc = nlohmann::json::parse(read_text(cells_dir / (c.stem() + ".enc.json")));
      const image::Image src = image::read_image(c.image.string());
      const codec::Decoded d = timed_decode(bytes);
      const codec::Bitstream bs = codec::read_bitstream(bytes);
      row.image = c.image.stem().string();
      row.lambda = c.lambda;
      row.arm_levels = c.arm;
      row.bpp = d.report.bpp;
      row.psnr_db = metrics::psnr(d.image, src);
      row.enc_s = enc.at("total_s");
      row.dec_total_s = d.report.total_s;
      row.dec_params_s = d.report.params_s;
      row.dec_latents_s = d.report.latents_s;
      row.dec_synth_s = d.report.synthesis_s + d.report.export_s;
      row.macs_per_px = pipeline::count_macs(bs.config.geometry(), bs.config.marm, bs.config.synthesis).total();
      write_json(row_path, metrics::to_json(row));
    }
    rows.push_back(row);
  }

  std::ofstream(out / "curves.csv") << metrics::to_csv(rows);
  const auto summary = metrics::aggregate(rows);
  std::ofstream(out / "summary.csv") << metrics::to_csv(summary);
  nlohmann::json j = {{"version", MARM_VERSION},
                      {"config", to_config(base).to_json()},
                      {"rows", metrics::to_json(rows)},
                      {"summary", metrics::to_json(summary)}};
  write_json(out / "curves.json", j);
  for (std::size_t m : arms) {
    std::vector<metrics::CurveRow> per_m;
    for (const auto& r : summary)
      if (r.arm_levels == m) per_m.push_back(r);
    std::ofstream(out / ("curve_M" + std::to_string(m) + ".csv")) << metrics::to_csv(per_m);
  }
  for (const auto& r : summary)
    std::printf("M=%zu lambda=%g: %.4f bpp, %.3f dB, decode %.4f s\n", r.arm_levels, r.lambda, r.bpp, r.psnr_db,
                r.dec_total_s);
  return 0;
}

int cmd_bd(const std::string& mode, const std::string& a, const std::string& b) {
  const auto m = mode == "time" ? metrics::BdMode::time : metrics::BdMode::rate;
  const auto ra = metrics::parse_csv(read_text(a)), rb = metrics::parse_csv(read_text(b));
  const double v = metrics::bd_delta(metrics::curve_points(ra, m), metrics::curve_points(rb, m));
  std::printf("%.2f\n", v);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MARM image codec"};
  app.set_version_flag("--version", std::string(MARM_VERSION));
  app.require_subcommand(1);

  EncodeFlags ef;
  std::string input, output, report;

  auto* enc = app.add_subcommand("encode", "train a codec on an image and write its bitstream");
  enc->add_option("--input,-i", input, "PPM or PNG image")->required();
  enc->add_option("--output,-o", output, "bitstream path; the report goes to <output>.json")->required();
  add_encode_flags(enc, ef);

  auto* dec = app.add_subcommand("decode", "decode a bitstream to an image");
  dec->add_option("--input,-i", input, "bitstream")->required();
  dec->add_option("--output,-o", output, "PPM or PNG path; the report goes to <output>.json")->required();

  auto* rt = app.add_subcommand("roundtrip", "encode, decode, check closure and print (bpp, time, psnr)");
  rt->add_option("--input,-i", input, "PPM or PNG image")->required();
  rt->add_option("--report", report, "optional JSON report path");
  add_encode_flags(rt, ef);

  std::string dir, emit = "bench_out";
  std::vector<double> lambdas(codec::kLambdaPresets.begin(), codec::kLambdaPresets.end());
  std::vector<std::size_t> arms{0, 7};
  std::size_t jobs = 1;
  auto* bench = app.add_subcommand("bench", "sweep images x lambdas x M and emit curve files");
  bench->add_option("--dir", dir, "directory of images")->required();
  bench->add_option("--lambdas", lambdas, "rate weights")->delimiter(',')->capture_default_str();
  bench->add_option("--arm-list", arms, "values of M")->delimiter(',')->capture_default_str();
  bench->add_option("--emit", emit, "output directory")->capture_default_str();
  bench->add_option("--jobs", jobs, "parallel encodes")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--iters", ef.iters, "training iterations")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--latents", ef.latents, "latent levels L")->capture_default_str()->check(CLI::Range(1, 16));
  bench->add_option("--seed", ef.seed, "random seed")->capture_default_str();

  std::string mode = "rate", curve_a, curve_b;
  auto* bd = app.add_subcommand("bd", "Bjontegaard delta between two curve files (percent)");
  bd->add_option("--mode", mode, "rate or time")->check(CLI::IsMember({"rate", "time"}))->capture_default_str();
  bd->add_option("curve_a", curve_a, "reference curve CSV")->required()->check(CLI::ExistingFile);
  bd->add_option("curve_b", curve_b, "test curve CSV")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*enc) return cmd_encode(input, output, ef);
    if (*dec) return cmd_decode(input, output);
    if (*rt) return cmd_roundtrip(input, report, ef);
    if (*bench) return cmd_bench(dir, lambdas, arms, ef, emit, jobs);
    if (*bd) return cmd_bd(mode, curve_a, curve_b);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const BitstreamError& e) {
    std::fprintf(stderr, "bitstream error (%s): %s\n", std::string(to_string(e.kind())).c_str(), e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
