#pragma once

// 64-bit-state rANS with 32-bit renormalisation and 16-bit frequency tables,
// plus the quantised Laplace CDF that feeds it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <vector>

#include "marm/error.hpp"
#include "marm/laplace.hpp"

namespace marm::coder {

inline constexpr uint32_t kProbBits = 16;
inline constexpr uint32_t kProbScale = 1u << kProbBits;

// Integer frequency table over [kmin, kmax]; total is exactly 2^16 and every
// symbol gets at least 1.
class QuantizedCdf {
 public:
  QuantizedCdf() = default;

  // Frequencies proportional to the discretized Laplace pmf, rounded half to
  // even, then nudged one unit at a time by largest remainder (lowest index
  // wins ties) until they sum to 2^16 with no zero entries.
  void assign_laplace(double mu, double sigma, int64_t kmin, int64_t kmax) {
    MARM_REQUIRE(kmin <= kmax, "quantize_cdf: empty range [", kmin, ",", kmax, "]");
    MARM_REQUIRE(kmax - kmin + 1 <= static_cast<int64_t>(kProbScale),
                 "quantize_cdf: range of ", kmax - kmin + 1, " symbols exceeds ", kProbScale);
    MARM_REQUIRE(std::isfinite(mu) && std::isfinite(sigma) && sigma > 0, "quantize_cdf: bad model mu=",
                 mu, " sigma=", sigma);
    kmin_ = kmin;
    kmax_ = kmax;
    const std::size_t n = static_cast<std::size_t>(kmax - kmin + 1);
    prob_.resize(n);
    laplace::pmf_table(mu, sigma, kmin, kmax, prob_);
    double total = 0;
    for (double p : prob_) total += p;
    if (!(total > 0) || !std::isfinite(total)) {
      std::fill(prob_.begin(), prob_.end(), 1.0);
      total = static_cast<double>(n);
    }
    assign_from_probabilities(total);
  }

  // Same normalisation from explicit weights (need not sum to 1).
  void assign_weights(std::span<const double> weights, int64_t kmin) {
    MARM_REQUIRE(!weights.empty() && weights.size() <= kProbScale, "quantize_cdf: bad weight count");
    kmin_ = kmin;
    kmax_ = kmin + static_cast<int64_t>(weights.size()) - 1;
    prob_.assign(weights.begin(), weights.end());
    double total = 0;
    for (double p : prob_) total += p;
    MARM_REQUIRE(total > 0 && std::isfinite(total), "quantize_cdf: weights sum to ", total);
    assign_from_probabilities(total);
  }

  int64_t kmin() const { return kmin_; }
  int64_t kmax() const { return kmax_; }
  std::size_t size() const { return freq_.size(); }
  bool contains(int64_t k) const { return k >= kmin_ && k <= kmax_; }

  uint32_t freq(int64_t k) const { return freq_[static_cast<std::size_t>(k - kmin_)]; }
  uint32_t start(int64_t k) const { return cum_[static_cast<std::size_t>(k - kmin_)]; }
  const std::vector<uint32_t>& frequencies() const { return freq_; }

  // Symbol whose interval holds slot (slot < 2^16).
  int64_t symbol_for(uint32_t slot) const {
    const auto it = std::upper_bound(cum_.begin() + 1, cum_.end(), slot);
    return kmin_ + static_cast<int64_t>(it - cum_.begin() - 1);
  }

  double bits(int64_t k) const { return static_cast<double>(kProbBits) - std::log2(static_cast<double>(freq(k))); }

  friend bool operator==(const QuantizedCdf& a, const QuantizedCdf& b) {
    return a.kmin_ == b.kmin_ && a.freq_ == b.freq_;
  }

 private:
  void assign_from_probabilities(double total) {
    const std::size_t n = prob_.size();
    freq_.resize(n);
    remainder_.resize(n);
    const double scale = static_cast<double>(kProbScale) / total;
    int64_t sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = prob_[i] * scale;
      double f = std::nearbyint(x);  // default rounding mode: half to even
      if (f < 1) f = 1;
      freq_[i] = static_cast<uint32_t>(f);
      remainder_[i] = x - f;
      sum += freq_[i];
    }
    int64_t diff = sum - static_cast<int64_t>(kProbScale);
    while (diff != 0) {
      order_.clear();
      if (diff < 0) {
        for (std::size_t i = 0; i < n; ++i) order_.push_back(static_cast<uint32_t>(i));
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(-diff), n);
        std::partial_sort(order_.begin(), order_.begin() + static_cast<long>(take), order_.end(),
                          [this](uint32_t a, uint32_t b) {
                            return remainder_[a] != remainder_[b] ? remainder_[a] > remainder_[b] : a < b;
                          });
        for (std::size_t j = 0; j < take; ++j) {
          ++freq_[order_[j]];
          remainder_[order_[j]] -= 1.0;
        }
        diff += static_cast<int64_t>(take);
      } else {
        for (std::size_t i = 0; i < n; ++i)
          if (freq_[i] > 1) order_.push_back(static_cast<uint32_t>(i));
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(diff), order_.size());
        std::partial_sort(order_.begin(), order_.begin() + static_cast<long>(take), order_.end(),
                          [this](uint32_t a, uint32_t b) {
                            return remainder_[a] != remainder_[b] ? remainder_[a] < remainder_[b] : a < b;
                          });
        for (std::size_t j = 0; j < take; ++j) {
          --freq_[order_[j]];
          remainder_[order_[j]] += 1.0;
        }
        diff -= static_cast<int64_t>(take);
      }
    }
    cum_.resize(n + 1);
    cum_[0] = 0;
    for (std::size_t i = 0; i < n; ++i) cum_[i + 1] = cum_[i] + freq_[i];
  }

  int64_t kmin_ = 0, kmax_ = -1;
  std::vector<uint32_t> freq_, cum_;
  std::vector<double> prob_, remainder_;
  std::vector<uint32_t> order_;
};

inline QuantizedCdf quantize_cdf(double mu, double sigma, int64_t kmin, int64_t kmax) {
  QuantizedCdf c;
  c.assign_laplace(mu, sigma, kmin, kmax);
  return c;
}

namespace detail {
inline constexpr uint64_t kRansLow = 1ull << 31;
}

// Symbols are queued in FIFO order and coded in reverse on finish(), so the
// decoder consumes them in the same order they were put.
class RansEncoder {
 public:
  void put(uint32_t start, uint32_t freq) {
    MARM_REQUIRE(freq > 0 && start + freq <= kProbScale, "rans: bad interval start=", start, " freq=", freq);
    pending_.push_back({start, freq});
  }

  void put(const QuantizedCdf& cdf, int64_t symbol) {
    MARM_REQUIRE(cdf.contains(symbol), "rans: symbol ", symbol, " outside [", cdf.kmin(), ",", cdf.kmax(), "]");
    put(cdf.start(symbol), cdf.freq(symbol));
  }

  std::size_t pending() const { return pending_.size(); }

  std::vector<uint8_t> finish() {
    uint64_t x = detail::kRansLow;
    std::vector<uint32_t> words;
    for (auto it = pending_.rbegin(); it != pending_.rend(); ++it) {
      const uint64_t x_max = ((detail::kRansLow >> kProbBits) << 32) * it->freq;
      if (x >= x_max) {
        words.push_back(static_cast<uint32_t>(x));
        x >>= 32;
      }
      x = ((x / it->freq) << kProbBits) + (x % it->freq) + it->start;
    }
    pending_.clear();
    std::vector<uint8_t> out(8 + 4 * words.size());
    for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<uint8_t>(x >> (8 * i));
    std::size_t pos = 8;
    for (auto it = words.rbegin(); it != words.rend(); ++it, pos += 4)
      for (int i = 0; i < 4; ++i) out[pos + static_cast<std::size_t>(i)] = static_cast<uint8_t>(*it >> (8 * i));
    return out;
  }

 private:
  struct Interval {
    uint32_t start, freq;
  };
  std::vector<Interval> pending_;
};

class RansDecoder {
 public:
  explicit RansDecoder(std::span<const uint8_t> bytes) : bytes_(bytes) {
    if (bytes.size() < 8 || (bytes.size() - 8) % 4 != 0)
      throw BitstreamError(BitstreamError::Kind::corrupt_payload, "rans: stream length " +
                                                                     std::to_string(bytes.size()) + " is malformed");
    for (int i = 0; i < 8; ++i) x_ |= static_cast<uint64_t>(bytes[static_cast<std::size_t>(i)]) << (8 * i);
    pos_ = 8;
    if (x_ < detail::kRansLow)
      throw BitstreamError(BitstreamError::Kind::corrupt_payload, "rans: initial state out of range");
  }

  uint32_t peek() const { return static_cast<uint32_t>(x_ & (kProbScale - 1)); }

  void advance(uint32_t start, uint32_t freq) {
    x_ = freq * (x_ >> kProbBits) + (x_ & (kProbScale - 1)) - start;
    if (x_ < detail::kRansLow) {
      if (pos_ + 4 > bytes_.size())
        throw BitstreamError(BitstreamError::Kind::corrupt_payload, "rans: read past end of stream");
      uint32_t w = 0;
      for (int i = 0; i < 4; ++i) w |= static_cast<uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
      pos_ += 4;
      x_ = (x_ << 32) | w;
    }
  }

  int64_t decode(const QuantizedCdf& cdf) {
    const int64_t s = cdf.symbol_for(peek());
    advance(cdf.start(s), cdf.freq(s));
    return s;
  }

  // The stream is valid only if it ends exactly where the encoder started.
  void finish() const {
    if (pos_ != bytes_.size() || x_ != detail::kRansLow)
      throw BitstreamError(BitstreamError::Kind::corrupt_payload, "rans: stream did not terminate cleanly");
  }

 private:
  std::span<const uint8_t> bytes_;
  std::size_t pos_ = 0;
  uint64_t x_ = 0;
};

inline std::vector<uint8_t> rans_encode(std::span<const int64_t> symbols, std::span<const QuantizedCdf> models) {
  MARM_REQUIRE(symbols.size() == models.size(), "rans_encode: ", symbols.size(), " symbols for ",
               models.size(), " models");
  RansEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) enc.put(models[i], symbols[i]);
  return enc.finish();
}

inline std::vector<int64_t> rans_decode(std::span<const uint8_t> bytes, std::span<const QuantizedCdf> models) {
  RansDecoder dec(bytes);
  std::vector<int64_t> out;
  out.reserve(models.size());
  for (const auto& m : models) out.push_back(dec.decode(m));
  dec.finish();
  return out;
}

}  // namespace marm::coder
