#pragma once

// The per-image model: entropy networks (psi), upsampler (phi) and synthesis
// (theta), plus the geometry they are built for.

#include <array>
#include <random>
#include <vector>

#include "marm/entropy_model.hpp"
#include "marm/pipeline.hpp"

namespace marm::codec {

// Largest image the container accepts; bounds every decoder allocation.
inline constexpr std::size_t kMaxPixels = std::size_t{1} << 24;

struct CodecConfig {
  std::size_t height = 0, width = 0;
  entropy::MarmConfig marm;
  pipeline::SynthesisConfig synthesis;

  latent::Geometry geometry() const { return latent::Geometry(height, width, marm.levels); }

  void validate() const {
    MARM_REQUIRE(height >= 1 && width >= 1, "codec: empty image");
    MARM_REQUIRE(height <= 65535 && width <= 65535 && height * width <= kMaxPixels, "codec: image ", width, "x",
                 height, " too large");
    marm.validate();
    MARM_REQUIRE(marm.levels <= 16, "codec: at most 16 latent levels");
  }

  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

inline constexpr std::array<ad::Group, 3> kNetworkGroups{ad::Group::psi, ad::Group::phi, ad::Group::theta};

template <typename T>
struct CodecModel {
  CodecConfig config;
  entropy::MarmNetworks<T> marm;
  pipeline::UpsamplerNetwork<T> upsampler;
  pipeline::SynthesisNetwork<T> synthesis;

  template <typename Rng>
  static CodecModel make(const CodecConfig& cfg, Rng& rng) {
    cfg.validate();
    CodecModel m;
    m.config = cfg;
    m.marm = entropy::MarmNetworks<T>::make(cfg.marm, rng);
    m.upsampler = pipeline::UpsamplerNetwork<T>::make();
    m.synthesis = pipeline::SynthesisNetwork<T>::make(cfg.marm.levels, cfg.synthesis, rng);
    return m;
  }

  latent::Geometry geometry() const { return config.geometry(); }

  // Parameters the configuration actually evaluates, in a fixed order. Unused
  // entropy sub-networks (pass 1 when only level 0 is ARU, ARU when M = L,
  // ARM when M = 0) are neither trained nor transmitted.
  nn::ParamList<T> params(ad::Group g) {
    nn::ParamList<T> out;
    const std::size_t aru = config.marm.aru_levels();
    switch (g) {
      case ad::Group::psi:
        if (aru >= 2) {
          out.push_back(&marm.pass1_w);
          out.push_back(&marm.pass1_b);
          marm.pass1_mlp.collect(out);
        }
        if (aru >= 1) {
          out.push_back(&marm.pass2_w);
          out.push_back(&marm.pass2_b);
          marm.pass2_mlp.collect(out);
        }
        if (config.marm.arm_levels >= 1) marm.arm_mlp.collect(out);
        break;
      case ad::Group::phi:
        if (config.marm.levels >= 2) upsampler.collect(out);
        break;
      case ad::Group::theta:
        synthesis.collect(out);
        break;
      case ad::Group::latent:
        break;
    }
    return out;
  }

  nn::ParamList<T> all_params() {
    nn::ParamList<T> out;
    for (ad::Group g : kNetworkGroups) {
      auto p = params(g);
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  std::size_t param_count(ad::Group g) {
    std::size_t n = 0;
    for (auto* p : params(g)) n += p->size();
    return n;
  }

  // Every weight, including unused sub-networks, set to zero.
  void zero_all() {
    nn::ParamList<T> ps;
    marm.collect(ps);
    upsampler.collect(ps);
    synthesis.collect(ps);
    for (auto* p : ps) p->mutable_value().fill(T(0));
  }
};

// Flattened copy of a parameter list's values.
template <typename T>
std::vector<T> flatten(const nn::ParamList<T>& ps) {
  std::vector<T> out;
  for (const auto* p : ps) out.insert(out.end(), p->value().vec().begin(), p->value().vec().end());
  return out;
}

template <typename T>
void assign(const nn::ParamList<T>& ps, std::span<const T> values) {
  std::size_t n = 0;
  for (const auto* p : ps) n += p->size();
  MARM_REQUIRE(values.size() == n, "assign: ", values.size(), " values for ", n, " weights");
  std::size_t off = 0;
  for (auto* p : ps) {
    auto& v = p->mutable_value().vec();
    std::copy_n(values.begin() + static_cast<long>(off), v.size(), v.begin());
    off += v.size();
  }
}

}  // namespace marm::codec
