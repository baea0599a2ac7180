#pragma once

// Discretized Laplace symbol model. sigma is the standard deviation; the
// Laplace scale is b = sigma / sqrt(2). P(k) = F(k + 1/2) - F(k - 1/2).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

#include "marm/autodiff.hpp"

namespace marm::laplace {

inline constexpr double kSigmaFloor = 1e-3;
inline constexpr double kSigmaCap = 64.0;
// Prior used for level-0 anchors.
inline const double kSigmaInit = std::exp(-0.5);
inline constexpr double kMinProb = 1.0 / 4294967296.0;  // 2^-32

inline double scale_of(double sigma) { return sigma / std::numbers::sqrt2; }

inline double clamp_sigma(double sigma) { return std::clamp(sigma, kSigmaFloor, kSigmaCap); }

// Probability mass of the unit interval centred on y.
inline double interval_prob(double y, double mu, double sigma) {
  const double b = scale_of(sigma);
  const double lo = y - 0.5 - mu, hi = y + 0.5 - mu;
  if (lo >= 0) return 0.5 * std::exp(-lo / b) * -std::expm1(-1.0 / b);
  if (hi <= 0) return 0.5 * std::exp(hi / b) * -std::expm1(-1.0 / b);
  return 1.0 - 0.5 * std::exp(lo / b) - 0.5 * std::exp(-hi / b);
}

inline double laplace_pmf(int64_t k, double mu, double sigma) {
  return interval_prob(static_cast<double>(k), mu, sigma);
}

// log P and its partial derivatives w.r.t. y, mu and sigma. Tails are
// evaluated in the log domain so no input underflows to -inf.
struct LogProb {
  double logp, dy, dmu, dsigma;
};

inline LogProb interval_log_prob(double y, double mu, double sigma) {
  const double b = scale_of(sigma);
  const double w = 1.0 / b;
  const double u = (y - 0.5 - mu) / b;  // lower edge
  const double v = (y + 0.5 - mu) / b;  // upper edge
  LogProb r{};
  double dlogp_db;
  if (u >= 0) {
    r.logp = std::log(0.5) - u + std::log1p(-std::exp(-w));
    r.dy = -1.0 / b;
    r.dmu = 1.0 / b;
    dlogp_db = u / b - w * w / std::expm1(w);
  } else if (v <= 0) {
    r.logp = std::log(0.5) + v + std::log1p(-std::exp(-w));
    r.dy = 1.0 / b;
    r.dmu = -1.0 / b;
    dlogp_db = -v / b - w * w / std::expm1(w);
  } else {
    const double eu = std::exp(u), ev = std::exp(-v);
    const double p = 1.0 - 0.5 * eu - 0.5 * ev;
    r.logp = std::log(p);
    const double dp_dy = 0.5 * (ev - eu) / b;
    r.dy = dp_dy / p;
    r.dmu = -dp_dy / p;
    dlogp_db = (0.5 * u * eu - 0.5 * v * ev) / b / p;
  }
  r.dsigma = dlogp_db / std::numbers::sqrt2;
  return r;
}

// Laplace CDF and its complement, each accurate in its own small tail.
inline double laplace_cdf(double x, double mu, double sigma) {
  const double b = scale_of(sigma);
  return x < mu ? 0.5 * std::exp((x - mu) / b) : 1.0 - 0.5 * std::exp(-(x - mu) / b);
}
inline double laplace_sf(double x, double mu, double sigma) {
  const double b = scale_of(sigma);
  return x >= mu ? 0.5 * std::exp(-(x - mu) / b) : 1.0 - 0.5 * std::exp((x - mu) / b);
}

// pmf over [kmin, kmax] written to out (size kmax - kmin + 1); the edge
// symbols absorb the mass outside the range, so the table sums to one. The
// tails of a Laplace are geometric with ratio exp(-1/b), so only a handful
// of exponentials are evaluated per table.
inline void pmf_table(double mu, double sigma, int64_t kmin, int64_t kmax, std::span<double> out) {
  const double b = scale_of(sigma);
  const double r = std::exp(-1.0 / b);
  const double c = -0.5 * std::expm1(-1.0 / b);
  const int64_t kr = static_cast<int64_t>(std::ceil(mu + 0.5));   // first k with k - 0.5 >= mu
  const int64_t kl = static_cast<int64_t>(std::floor(mu - 0.5));  // last k with k + 0.5 <= mu
  constexpr double kTiny = 1e-300;
  for (int64_t k = std::max(kl + 1, kmin); k <= std::min(kr - 1, kmax); ++k)
    out[k - kmin] = interval_prob(static_cast<double>(k), mu, sigma);
  if (kr <= kmax) {
    const int64_t k0 = std::max(kr, kmin);
    double p = c * std::exp(-(static_cast<double>(k0) - 0.5 - mu) / b);
    for (int64_t k = k0; k <= kmax; ++k) {
      out[k - kmin] = p;
      p = p < kTiny ? 0.0 : p * r;
    }
  }
  if (kl >= kmin) {
    const int64_t k1 = std::min(kl, kmax);
    double p = c * std::exp((static_cast<double>(k1) + 0.5 - mu) / b);
    for (int64_t k = k1; k >= kmin; --k) {
      out[k - kmin] = p;
      p = p < kTiny ? 0.0 : p * r;
    }
  }
  out.front() += laplace_cdf(static_cast<double>(kmin) - 0.5, mu, sigma);
  out.back() += laplace_sf(static_cast<double>(kmax) + 0.5, mu, sigma);
}

// Sum over all symbols of -log2 P(y | mu, sigma) for relaxed latents y.
// Differentiable w.r.t. y, mu and sigma (sigma already floored by the caller).
template <typename T>
ad::Var<T> bits(const ad::Var<T>& y, const ad::Var<T>& mu, const ad::Var<T>& sigma) {
  MARM_REQUIRE(y.shape() == mu.shape() && y.shape() == sigma.shape(), "laplace::bits: shape mismatch ",
               y.shape(), " / ", mu.shape(), " / ", sigma.shape());
  const std::size_t n = y.size();
  Tensor<T> dy(y.shape()), dmu(y.shape()), dsig(y.shape());
  double total = 0;
  constexpr double inv_ln2 = 1.0 / std::numbers::ln2;
  for (std::size_t i = 0; i < n; ++i) {
    const LogProb lp = interval_log_prob(y.value()[i], mu.value()[i], sigma.value()[i]);
    total -= lp.logp * inv_ln2;
    dy[i] = static_cast<T>(-lp.dy * inv_ln2);
    dmu[i] = static_cast<T>(-lp.dmu * inv_ln2);
    dsig[i] = static_cast<T>(-lp.dsigma * inv_ln2);
  }
  return ad::Var<T>::make(Tensor<T>::scalar(static_cast<T>(total)), {y, mu, sigma},
                          [dy = std::move(dy), dmu = std::move(dmu), dsig = std::move(dsig)](ad::Node<T>& nd) {
                            const T g = nd.grad[0];
                            const Tensor<T>* locals[3] = {&dy, &dmu, &dsig};
                            for (std::size_t p = 0; p < 3; ++p) {
                              if (!nd.parents[p]->requires_grad) continue;
                              auto& gr = nd.parents[p]->ensure_grad();
                              const Tensor<T>& l = *locals[p];
                              for (std::size_t i = 0; i < gr.size(); ++i) gr[i] += g * l[i];
                            }
                          });
}

// Non-differentiable accounting of -log2 P for integer symbols. Probabilities
// below 2^-32 are clamped and counted.
struct RateAccumulator {
  double bits = 0;
  std::size_t symbols = 0;
  std::size_t clamped = 0;

  void add(int64_t k, double mu, double sigma) {
    double p = laplace_pmf(k, mu, sigma);
    if (!(p >= kMinProb)) {
      p = kMinProb;
      ++clamped;
    }
    bits -= std::log2(p);
    ++symbols;
  }
};

}  // namespace marm::laplace
