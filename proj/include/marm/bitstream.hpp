#pragma once

// Container layout, all little-endian:
//
//   "MARM" | version u8 | header_size u16
//   H u16 | W u16 | L u8 | M u8 | c u8 | family u8
//   arm_context u8 | arm_width u8 | aru_width u8 | aru_pass1_kernel u8 |
//   aru_pass2_kernel u8 | marm_hidden_layers u8
//   synth_layers u8 | synth_kernel u8 | synth_mlp_width u8 | synth_hidden_layers u8 | upsampler_kernel u8
//   3 x (step_exp u8 | qmin i32 | qmax i32 | sigma f32 | bytes u32)     psi, phi, theta
//   L x (min i8 | max i8)
//   latent_bytes u32 | crc32 u32 over every preceding header byte
//   psi payload | phi payload | theta payload | latent payload

#include <array>
#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "marm/error.hpp"
#include "marm/latent_coding.hpp"
#include "marm/model.hpp"
#include "marm/param_coding.hpp"

namespace marm::codec {

inline constexpr std::array<uint8_t, 4> kMagic{'M', 'A', 'R', 'M'};
inline constexpr uint8_t kVersion = 1;
inline constexpr uint8_t kFamilyLaplace = 0;

struct Bitstream {
  CodecConfig config;
  std::array<GroupCoding, 3> groups;  // psi, phi, theta
  std::vector<LatentRange> ranges;
  std::vector<uint8_t> latents;

  friend bool operator==(const Bitstream& a, const Bitstream& b) {
    if (!(a.config == b.config && a.ranges == b.ranges && a.latents == b.latents)) return false;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto &x = a.groups[i], &y = b.groups[i];
      if (x.step_exp != y.step_exp || x.qmin != y.qmin || x.qmax != y.qmax ||
          std::bit_cast<uint32_t>(x.sigma) != std::bit_cast<uint32_t>(y.sigma) || x.payload != y.payload)
        return false;
    }
    return true;
  }
};

inline std::size_t header_size(std::size_t levels) { return 4 + 1 + 2 + 8 + 6 + 5 + 3 * 17 + 2 * levels + 4 + 4; }

namespace detail {

class Writer {
 public:
  void u8(uint64_t v) { out.push_back(static_cast<uint8_t>(v)); }
  void u16(uint64_t v) { le(v, 2); }
  void u32(uint64_t v) { le(v, 4); }
  void i32(int32_t v) { le(static_cast<uint32_t>(v), 4); }
  void f32(float v) { le(std::bit_cast<uint32_t>(v), 4); }
  void bytes(std::span<const uint8_t> b) { out.insert(out.end(), b.begin(), b.end()); }
  std::vector<uint8_t> out;

 private:
  void le(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> b) : b_(b) {}
  uint8_t u8() { return static_cast<uint8_t>(le(1)); }
  uint16_t u16() { return static_cast<uint16_t>(le(2)); }
  uint32_t u32() { return static_cast<uint32_t>(le(4)); }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t pos() const { return pos_; }

 private:
  uint64_t le(int n) {
    if (pos_ + static_cast<std::size_t>(n) > b_.size())
      throw BitstreamError(BitstreamError::Kind::truncated, "bitstream: header truncated");
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::span<const uint8_t> b_;
  std::size_t pos_ = 0;
};

inline uint32_t crc32_of(std::span<const uint8_t> b) {
  return static_cast<uint32_t>(crc32(crc32(0L, Z_NULL, 0), b.data(), static_cast<uInt>(b.size())));
}

[[noreturn]] inline void bad_header(const std::string& what) {
  throw BitstreamError(BitstreamError::Kind::bad_header, "bitstream: " + what);
}

}  // namespace detail

inline std::vector<uint8_t> write_bitstream(const Bitstream& bs) {
  const CodecConfig& c = bs.config;
  c.validate();
  MARM_REQUIRE(bs.ranges.size() == c.marm.levels, "write_bitstream: ", bs.ranges.size(), " ranges for L=",
               c.marm.levels);
  detail::Writer w;
  for (uint8_t m : kMagic) w.u8(m);
  w.u8(kVersion);
  w.u16(header_size(c.marm.levels));
  w.u16(c.height);
  w.u16(c.width);
  w.u8(c.marm.levels);
  w.u8(c.marm.arm_levels);
  w.u8(1);
  w.u8(kFamilyLaplace);
  w.u8(c.marm.arm_context);
  w.u8(c.marm.arm_width);
  w.u8(c.marm.aru_width);
  w.u8(c.marm.aru_pass1_kernel);
  w.u8(c.marm.aru_pass2_kernel);
  w.u8(c.marm.mlp_hidden_layers);
  w.u8(c.synthesis.conv_layers);
  w.u8(c.synthesis.kernel);
  w.u8(c.synthesis.mlp_width);
  w.u8(c.synthesis.mlp_hidden_layers);
  w.u8(pipeline::kUpsamplerKernel);
  for (const auto& g : bs.groups) {
    w.u8(static_cast<uint8_t>(g.step_exp));
    w.i32(g.qmin);
    w.i32(g.qmax);
    w.f32(g.sigma);
    w.u32(g.payload.size());
  }
  for (const auto& r : bs.ranges) {
    MARM_REQUIRE(r.min >= latent::kLatentMin && r.max <= latent::kLatentMax && r.min <= r.max,
                 "write_bitstream: latent range [", r.min, ",", r.max, "]");
    w.u8(static_cast<uint8_t>(static_cast<int8_t>(r.min)));
    w.u8(static_cast<uint8_t>(static_cast<int8_t>(r.max)));
  }
  w.u32(bs.latents.size());
  w.u32(detail::crc32_of(w.out));
  MARM_REQUIRE(w.out.size() == header_size(c.marm.levels), "write_bitstream: header layout drifted");
  for (const auto& g : bs.groups) w.bytes(g.payload);
  w.bytes(bs.latents);
  return std::move(w.out);
}

inline Bitstream read_bitstream(std::span<const uint8_t> bytes) {
  using Kind = BitstreamError::Kind;
  if (bytes.size() < 4) throw BitstreamError(Kind::truncated, "bitstream: shorter than the magic");
  for (std::size_t i = 0; i < 4; ++i)
    if (bytes[i] != kMagic[i]) throw BitstreamError(Kind::bad_magic, "bitstream: bad magic");
  detail::Reader r(bytes);
  for (int i = 0; i < 4; ++i) r.u8();
  const uint8_t version = r.u8();
  if (version != kVersion)
    throw BitstreamError(Kind::bad_version, "bitstream: unsupported version " + std::to_string(version));
  const std::size_t hsize = r.u16();
  if (bytes.size() < hsize) throw BitstreamError(Kind::truncated, "bitstream: header truncated");
  if (hsize < header_size(1) || hsize > header_size(16))
    throw BitstreamError(Kind::bad_length, "bitstream: implausible header size");
  if (detail::crc32_of(bytes.first(hsize - 4)) !=
      (static_cast<uint32_t>(bytes[hsize - 4]) | static_cast<uint32_t>(bytes[hsize - 3]) << 8 |
       static_cast<uint32_t>(bytes[hsize - 2]) << 16 | static_cast<uint32_t>(bytes[hsize - 1]) << 24))
    throw BitstreamError(Kind::bad_checksum, "bitstream: header checksum mismatch");

  Bitstream bs;
  CodecConfig& c = bs.config;
  c.height = r.u16();
  c.width = r.u16();
  c.marm.levels = r.u8();
  c.marm.arm_levels = r.u8();
  const uint8_t channels = r.u8();
  const uint8_t family = r.u8();
  c.marm.arm_context = r.u8();
  c.marm.arm_width = r.u8();
  c.marm.aru_width = r.u8();
  c.marm.aru_pass1_kernel = r.u8();
  c.marm.aru_pass2_kernel = r.u8();
  c.marm.mlp_hidden_layers = r.u8();
  c.synthesis.conv_layers = r.u8();
  c.synthesis.kernel = r.u8();
  c.synthesis.mlp_width = r.u8();
  c.synthesis.mlp_hidden_layers = r.u8();
  const uint8_t up_kernel = r.u8();

  if (c.height == 0 || c.width == 0 || c.height * c.width > kMaxPixels) detail::bad_header("image extents");
  if (c.marm.levels < 1 || c.marm.levels > 16 || c.marm.arm_levels > c.marm.levels) detail::bad_header("L / M");
  if (hsize != header_size(c.marm.levels)) throw BitstreamError(Kind::bad_length, "bitstream: header size vs L");
  if (channels != 1) detail::bad_header("latent channels");
  if (family != kFamilyLaplace) detail::bad_header("unknown distribution family");
  if (c.marm.arm_context < 1 || c.marm.arm_context > 40) detail::bad_header("ARM context size");
  if (c.marm.arm_width < 1 || c.marm.arm_width > 64 || c.marm.aru_width < 1 || c.marm.aru_width > 64)
    detail::bad_header("entropy network width");
  if (c.marm.aru_pass1_kernel < 2 || c.marm.aru_pass1_kernel > 8) detail::bad_header("ARU pass-1 kernel");
  if (c.marm.aru_pass2_kernel % 2 == 0 || c.marm.aru_pass2_kernel > 7) detail::bad_header("ARU pass-2 kernel");
  if (c.marm.mlp_hidden_layers > 4) detail::bad_header("entropy network depth");
  if (c.synthesis.conv_layers > 8 || c.synthesis.kernel % 2 == 0 || c.synthesis.kernel > 15)
    detail::bad_header("synthesis convolution");
  if (c.synthesis.mlp_width < 1 || c.synthesis.mlp_width > 64 || c.synthesis.mlp_hidden_layers > 4)
    detail::bad_header("synthesis MLP");
  if (up_kernel != pipeline::kUpsamplerKernel) detail::bad_header("upsampler kernel");

  std::size_t payload = 0;
  for (auto& g : bs.groups) {
    g.step_exp = r.u8();
    g.qmin = r.i32();
    g.qmax = r.i32();
    g.sigma = r.f32();
    g.payload.resize(0);
    const std::size_t n = r.u32();
    if (g.step_exp < kMinStepExp || g.step_exp > kMaxStepExp) detail::bad_header("weight step");
    if (g.qmin > g.qmax || static_cast<int64_t>(g.qmax) - g.qmin + 1 > kMaxParamSpan)
      detail::bad_header("weight range");
    if (!std::isfinite(g.sigma) || !(g.sigma > 0) || g.sigma > 1e6f) detail::bad_header("weight scale");
    if (n > bytes.size()) throw BitstreamError(Kind::bad_length, "bitstream: section longer than file");
    payload += n;
    g.payload.reserve(n);
    g.payload.resize(n);
  }
  for (std::size_t i = 0; i < c.marm.levels; ++i) {
    LatentRange lr;
    lr.min = static_cast<int8_t>(r.u8());
    lr.max = static_cast<int8_t>(r.u8());
    if (lr.min > lr.max) detail::bad_header("latent range");
    bs.ranges.push_back(lr);
  }
  const std::size_t nlat = r.u32();
  r.u32();  // checksum, verified above
  if (nlat > bytes.size()) throw BitstreamError(Kind::bad_length, "bitstream: section longer than file");
  payload += nlat;
  if (bytes.size() < hsize + payload) throw BitstreamError(Kind::truncated, "bitstream: payload truncated");
  if (bytes.size() > hsize + payload) throw BitstreamError(Kind::bad_length, "bitstream: trailing bytes");
  std::size_t pos = hsize;
  for (auto& g : bs.groups) {
    std::copy_n(bytes.begin() + static_cast<long>(pos), g.payload.size(), g.payload.begin());
    pos += g.payload.size();
  }
  bs.latents.assign(bytes.begin() + static_cast<long>(pos), bytes.end());
  return bs;
}

}  // namespace marm::codec
