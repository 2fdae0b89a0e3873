#pragma once

// Saturated weighted regression y ~ alpha + b1*1{arm2} + b2*1{arm3} with
// HC3-robust covariance. Leverages come from the sqrt(weight)-scaled design;
// HC3 inflates squared residuals by (1-h)^-2. The three contrasts of
// interest are NIE = b1, TE = b2, NDE = b2 - b1 with the covariance-corrected
// variance Var(b1) + Var(b2) - 2 Cov(b1, b2).

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "divlab/errors.hpp"
#include "divlab/stats.hpp"

namespace divlab {

struct WlsRow {
  double y = 0.0;
  double weight = 1.0;
  int arm = 0;
  std::int32_t row_id = -1;  // index into a shared row universe (family bootstrap)
};

struct FitResult {
  std::array<double, 3> beta{};  // (alpha, b1, b2) against the reference arm
  std::array<double, 9> hc3{};   // row-major 3x3
  std::vector<double> fitted;
  std::vector<double> residuals;
  std::vector<double> leverages;
  std::vector<WlsRow> rows;
  int reference_arm = 1;

  double var(int i) const { return hc3[static_cast<std::size_t>(i * 3 + i)]; }
  double cov(int i, int j) const { return hc3[static_cast<std::size_t>(i * 3 + j)]; }
};

namespace detail {

// Column index of an arm in the (alpha, b1, b2) parameterization: the
// reference arm loads only the intercept; the two remaining arms (ascending)
// load dummies 1 and 2.
inline std::array<double, 3> design_row(int arm, int reference_arm) {
  std::array<double, 3> x = {1.0, 0.0, 0.0};
  int slot = 1;
  for (int a = 1; a <= 3; ++a) {
    if (a == reference_arm) continue;
    if (a == arm) x[static_cast<std::size_t>(slot)] = 1.0;
    ++slot;
  }
  return x;
}

inline std::array<double, 9> invert_sym3(const std::array<double, 9>& m) {
  const double a = m[0], b = m[1], c = m[2];
  const double d = m[4], e = m[5], f = m[8];
  const double c00 = d * f - e * e;
  const double c01 = c * e - b * f;
  const double c02 = b * e - c * d;
  const double det = a * c00 + b * c01 + c * c02;
  if (!(std::fabs(det) > 0.0) || !std::isfinite(det))
    throw NumericError("wls_fit: singular design (is an arm missing?)");
  const double inv_det = 1.0 / det;
  std::array<double, 9> r;
  r[0] = c00 * inv_det;
  r[1] = c01 * inv_det;
  r[2] = c02 * inv_det;
  r[3] = r[1];
  r[4] = (a * f - c * c) * inv_det;
  r[5] = (c * b - a * e) * inv_det;
  r[6] = r[2];
  r[7] = r[5];
  r[8] = (a * d - b * b) * inv_det;
  return r;
}

}  // namespace detail

inline FitResult wls_fit(std::span<const WlsRow> rows, int reference_arm = 1) {
  if (reference_arm < 1 || reference_arm > 3) throw ConfigError("wls_fit: reference arm must be 1..3");
  std::array<std::int64_t, 3> arm_rows{};
  for (const auto& r : rows) {
    if (r.arm < 1 || r.arm > 3) throw DataError("wls_fit: arm ids must be 1, 2 or 3");
    if (!(r.weight > 0.0)) throw DataError("wls_fit: weights must be positive");
    ++arm_rows[static_cast<std::size_t>(r.arm - 1)];
  }
  for (int a = 1; a <= 3; ++a) {
    const std::int64_t n = arm_rows[static_cast<std::size_t>(a - 1)];
    if (n == 0) throw DataError("wls_fit: arm " + std::to_string(a) + " has no observations");
    if (n == 1)
      throw DataError("wls_fit: arm " + std::to_string(a) +
                      " has a single observation (leverage 1, HC3 undefined)");
  }

  // Normal equations on the weighted design.
  std::array<double, 9> xtwx{};
  std::array<double, 3> xtwy{};
  for (const auto& r : rows) {
    const auto x = detail::design_row(r.arm, reference_arm);
    for (int i = 0; i < 3; ++i) {
      xtwy[static_cast<std::size_t>(i)] += r.weight * x[static_cast<std::size_t>(i)] * r.y;
      for (int j = 0; j < 3; ++j)
        xtwx[static_cast<std::size_t>(i * 3 + j)] +=
            r.weight * x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
    }
  }
  const auto inv = detail::invert_sym3(xtwx);

  FitResult fit;
  fit.reference_arm = reference_arm;
  fit.rows.assign(rows.begin(), rows.end());
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      fit.beta[static_cast<std::size_t>(i)] +=
          inv[static_cast<std::size_t>(i * 3 + j)] * xtwy[static_cast<std::size_t>(j)];

  const std::size_t n = rows.size();
  fit.fitted.resize(n);
  fit.residuals.resize(n);
  fit.leverages.resize(n);
  std::array<double, 9> meat{};
  for (std::size_t k = 0; k < n; ++k) {
    const auto& r = rows[k];
    const auto x = detail::design_row(r.arm, reference_arm);
    double yhat = 0.0;
    for (int i = 0; i < 3; ++i) yhat += x[static_cast<std::size_t>(i)] * fit.beta[static_cast<std::size_t>(i)];
    fit.fitted[k] = yhat;
    fit.residuals[k] = r.y - yhat;
    double h = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        h += x[static_cast<std::size_t>(i)] * inv[static_cast<std::size_t>(i * 3 + j)] *
             x[static_cast<std::size_t>(j)];
    h *= r.weight;
    fit.leverages[k] = h;
    const double one_minus_h = 1.0 - h;
    if (!(one_minus_h > 0.0))
      throw NumericError("wls_fit: leverage reached 1 on arm " + std::to_string(r.arm));
    const double u = r.weight * r.weight * fit.residuals[k] * fit.residuals[k] /
                     (one_minus_h * one_minus_h);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        meat[static_cast<std::size_t>(i * 3 + j)] +=
            u * x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
  }
  // Sandwich: inv * meat * inv.
  std::array<double, 9> tmp{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        tmp[static_cast<std::size_t>(i * 3 + j)] +=
            inv[static_cast<std::size_t>(i * 3 + k)] * meat[static_cast<std::size_t>(k * 3 + j)];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double v = 0.0;
      for (int k = 0; k < 3; ++k)
        v += tmp[static_cast<std::size_t>(i * 3 + k)] * inv[static_cast<std::size_t>(k * 3 + j)];
      fit.hc3[static_cast<std::size_t>(i * 3 + j)] = v;
    }
  return fit;
}

struct ContrastResult {
  std::string label;
  double estimate = 0.0;
  double se = 0.0;
  double t = 0.0;
  double p_raw = 1.0;  // normal reference
};

// The three contrasts recovered from one saturated fit (reference arm 1).
inline std::array<ContrastResult, 3> contrasts(const FitResult& fit) {
  if (fit.reference_arm != 1)
    throw ConfigError("contrasts: decomposition labels assume reference arm 1");
  const double b1 = fit.beta[1], b2 = fit.beta[2];
  const double v1 = fit.var(1), v2 = fit.var(2), c12 = fit.cov(1, 2);
  std::array<ContrastResult, 3> out;
  out[0] = {"NIE", b1, std::sqrt(std::max(0.0, v1)), 0.0, 1.0};
  out[1] = {"TE", b2, std::sqrt(std::max(0.0, v2)), 0.0, 1.0};
  out[2] = {"NDE", b2 - b1, std::sqrt(std::max(0.0, v1 + v2 - 2.0 * c12)), 0.0, 1.0};
  for (auto& c : out) {
    c.t = c.se > 0.0 ? c.estimate / c.se : 0.0;
    c.p_raw = c.se > 0.0 ? two_sided_p(c.t) : 1.0;
  }
  return out;
}

}  // namespace divlab
