#pragma once

// Scalar statistics shared across modules: compensated summation, normal
// CDF/quantile, lognormal quantiles. Reductions are fixed-order so reported
// means do not depend on thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "divlab/errors.hpp"

namespace divlab {

// Kahan-compensated fixed-order sum.
inline double ksum(std::span<const double> xs) noexcept {
  double s = 0.0, c = 0.0;
  for (double x : xs) {
    const double y = x - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  return s;
}

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw NumericError("mean: empty sample");
  return ksum(xs) / static_cast<double>(xs.size());
}

// Two-pass sample variance (n-1 denominator).
inline double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw NumericError("sample_variance: need at least 2 values");
  const double m = mean(xs);
  double s = 0.0, c = 0.0;
  for (double x : xs) {
    const double d = (x - m) * (x - m);
    const double y = d - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  return s / static_cast<double>(xs.size() - 1);
}

inline double sample_sd(std::span<const double> xs) { return std::sqrt(sample_variance(xs)); }

inline double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Inverse standard-normal CDF: Acklam's rational approximation polished by
// one Halley step against erfc, giving ~1 ulp over (0, 1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw NumericError("normal_quantile: p must be in (0,1)");
  static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                  -2.759285104469687e+02, 1.383577518672690e+02,
                                  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                  -1.556989798598866e+02, 6.680131188771972e+01,
                                  -1.328068155288572e+01};
  static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                  -2.400758277161838e+00, -2.549732539343734e+00,
                                  4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                  2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement.
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

inline double two_sided_p(double t) noexcept {
  if (!std::isfinite(t)) return std::numeric_limits<double>::quiet_NaN();
  return 2.0 * normal_cdf(-std::fabs(t));
}

inline double lognormal_quantile(double log_mu, double log_sigma, double p) {
  return std::exp(log_mu + log_sigma * normal_quantile(p));
}

struct KsResult {
  double d = 0.0;
  double p = 1.0;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
};

// Kolmogorov survival function Q(lambda) = 2 sum_j (-1)^{j-1} exp(-2 j^2 lambda^2).
inline double kolmogorov_q(double lambda) noexcept {
  if (lambda < 1e-6) return 1.0;
  double sum = 0.0, sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
    sum += term;
    if (std::fabs(term) < 1e-12 * std::fabs(sum) + 1e-300) break;
    sign = -sign;
  }
  double q = 2.0 * sum;
  if (q < 0.0) q = 0.0;
  if (q > 1.0) q = 1.0;
  return q;
}

// Two-sample Kolmogorov-Smirnov test with the Stephens small-sample
// correction for the asymptotic p-value.
inline KsResult ks_two_sample(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw NumericError("ks_two_sample: empty sample");
  std::vector<double> a(x.begin(), x.end());
  std::vector<double> b(y.begin(), y.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  KsResult res;
  res.d = d;
  res.n1 = a.size();
  res.n2 = b.size();
  const double ne = std::sqrt(na * nb / (na + nb));
  res.p = (d == 0.0) ? 1.0 : kolmogorov_q((ne + 0.12 + 0.11 / ne) * d);
  return res;
}

}  // namespace divlab
