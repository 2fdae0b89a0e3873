#pragma once

// Wild bootstrap (Rademacher weights, centered t-statistics) and the
// Romano-Wolf step-down adjustment. Each bootstrap draw flips residual signs
// on the identical design and weights, refits, and recomputes HC3 standard
// errors; families of fits share one sign vector per draw so the joint
// dependence across hypotheses is preserved.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "divlab/errors.hpp"
#include "divlab/parallel.hpp"
#include "divlab/rng.hpp"
#include "divlab/wls.hpp"

namespace divlab {

struct BootstrapDraws {
  std::int64_t b = 0;           // number of draws
  std::size_t hypotheses = 0;   // columns
  std::vector<double> tstats;   // row-major [b x hypotheses], centered t*
  std::uint64_t seed = 0;

  double at(std::int64_t draw, std::size_t k) const {
    return tstats[static_cast<std::size_t>(draw) * hypotheses + k];
  }
};

struct BootstrapOptions {
  std::int64_t b = 5000;
  std::uint64_t seed = 0;
  bool force_plus_one = false;  // test hook: omega = +1 everywhere
  int threads = 1;
};

// Joint wild bootstrap over a family of fits that index a shared row
// universe via WlsRow::row_id (or their own index when row_id < 0). Columns
// are fit-major: (NIE, TE, NDE) for fit 0, then fit 1, ...
inline BootstrapDraws wild_bootstrap_family(std::span<const FitResult> fits,
                                            std::size_t universe_rows,
                                            const BootstrapOptions& opt) {
  if (opt.b < 1) throw ConfigError("wild_bootstrap: B must be at least 1");
  if (fits.empty()) throw ConfigError("wild_bootstrap: empty family");

  std::vector<std::array<double, 3>> centers(fits.size());
  for (std::size_t f = 0; f < fits.size(); ++f) {
    const auto c = contrasts(fits[f]);
    centers[f] = {c[0].estimate, c[1].estimate, c[2].estimate};
  }

  BootstrapDraws draws;
  draws.b = opt.b;
  draws.hypotheses = fits.size() * 3;
  draws.seed = opt.seed;
  draws.tstats.assign(static_cast<std::size_t>(opt.b) * draws.hypotheses, 0.0);

  const std::uint64_t stage_key = SeedCtx{opt.seed}.stage(Stage::Bootstrap);
  parallel_for(static_cast<std::size_t>(opt.b), opt.threads, [&](std::size_t bi) {
    std::vector<double> omega(universe_rows, 1.0);
    if (!opt.force_plus_one) {
      Rng rng(derive(stage_key, bi));
      for (auto& w : omega) w = rng.bernoulli(0.5) ? 1.0 : -1.0;
    }
    std::vector<WlsRow> star;
    for (std::size_t f = 0; f < fits.size(); ++f) {
      const FitResult& fit = fits[f];
      star.assign(fit.rows.begin(), fit.rows.end());
      for (std::size_t i = 0; i < star.size(); ++i) {
        const std::int32_t rid = fit.rows[i].row_id;
        const std::size_t u = rid >= 0 ? static_cast<std::size_t>(rid) : i;
        star[i].y = fit.fitted[i] + omega[u] * fit.residuals[i];
      }
      std::array<ContrastResult, 3> cs;
      try {
        cs = contrasts(wls_fit(star, fit.reference_arm));
      } catch (const std::exception& e) {
        throw NumericError("wild_bootstrap: refit failed at draw " + std::to_string(bi) + ": " +
                           e.what());
      }
      for (std::size_t k = 0; k < 3; ++k) {
        const double se = cs[k].se;
        const double num = cs[k].estimate - centers[f][k];
        draws.tstats[bi * draws.hypotheses + f * 3 + k] = se > 0.0 ? num / se : 0.0;
      }
    }
  });
  return draws;
}

inline BootstrapDraws wild_bootstrap(const FitResult& fit, const BootstrapOptions& opt) {
  return wild_bootstrap_family(std::span<const FitResult>(&fit, 1), fit.rows.size(), opt);
}

// Single-hypothesis bootstrap p-value: share of draws with |t*| at or above
// |t_obs|, floored at 1/(B+1).
inline double bootstrap_raw_p(double t_obs, const BootstrapDraws& draws, std::size_t k) {
  std::int64_t count = 0;
  for (std::int64_t bi = 0; bi < draws.b; ++bi)
    if (std::fabs(draws.at(bi, k)) >= std::fabs(t_obs)) ++count;
  const double p = static_cast<double>(count) / static_cast<double>(draws.b);
  return std::max(p, 1.0 / (static_cast<double>(draws.b) + 1.0));
}

// Romano-Wolf step-down adjusted p-values. Hypotheses are ordered by
// descending |t_obs| (ties by input index); at each step the p-value is the
// share of draws whose max |t*| over the remaining hypotheses reaches
// |t_obs|, and adjusted p-values are forced monotone down the ordering.
inline std::vector<double> romano_wolf(std::span<const double> t_obs,
                                       const BootstrapDraws& draws) {
  const std::size_t k = t_obs.size();
  if (k != draws.hypotheses)
    throw ConfigError("romano_wolf: hypothesis count does not match bootstrap columns");
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ta = std::fabs(t_obs[a]), tb = std::fabs(t_obs[b]);
    if (ta != tb) return ta > tb;
    return a < b;
  });

  // max |t*| over the not-yet-rejected tail, per draw; built from the back.
  std::vector<std::vector<double>> tail_max(k,
                                            std::vector<double>(static_cast<std::size_t>(draws.b)));
  for (std::size_t pos = k; pos-- > 0;) {
    const std::size_t h = order[pos];
    for (std::int64_t bi = 0; bi < draws.b; ++bi) {
      double m = std::fabs(draws.at(bi, h));
      if (pos + 1 < k) m = std::max(m, tail_max[pos + 1][static_cast<std::size_t>(bi)]);
      tail_max[pos][static_cast<std::size_t>(bi)] = m;
    }
  }

  std::vector<double> adjusted(k, 0.0);
  double running = 0.0;
  const double floor = 1.0 / (static_cast<double>(draws.b) + 1.0);
  for (std::size_t pos = 0; pos < k; ++pos) {
    const std::size_t h = order[pos];
    std::int64_t count = 0;
    for (std::int64_t bi = 0; bi < draws.b; ++bi)
      if (tail_max[pos][static_cast<std::size_t>(bi)] >= std::fabs(t_obs[h])) ++count;
    double p = static_cast<double>(count) / static_cast<double>(draws.b);
    p = std::max(p, floor);
    running = std::max(running, p);
    adjusted[h] = running;
  }
  return adjusted;
}

}  // namespace divlab
