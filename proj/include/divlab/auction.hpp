#pragma once

// Two-stage delivery model: users are matched to the top ceil(q*N)
// advertisers by a perceived click-rate signal (true rate plus regime noise),
// then the highest bidder in the matched set wins a single second-price
// auction. Everything is reported from the focal advertiser's point of view.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "divlab/errors.hpp"
#include "divlab/matrix.hpp"
#include "divlab/rng.hpp"
#include "divlab/stats.hpp"

namespace divlab {

enum class Gender : std::uint8_t { Female = 0, Male = 1 };
enum class AdvertiserClass : std::uint8_t { Focal = 0, Other = 1 };

struct PopulationConfig {
  std::int64_t n_users = 10000;
  std::int64_t n_advertisers = 500;
  double male_share = 0.462;
  double match_quantile = 0.1;       // matched set size = ceil(q * N)
  double click_mean = 0.02;          // Beta mean mu_r
  double click_concentration = 50.0; // Beta kappa: alpha = mu*kappa, beta = (1-mu)*kappa
  std::optional<double> female_click_mean;  // calibration knob; defaults to click_mean

  double female_mean() const { return female_click_mean.value_or(click_mean); }

  // ceil(q*N) with a 1e-9 snap so q*N values that are integers up to
  // floating-point dust (e.g. 0.1 * 500) do not round up.
  std::int64_t matched_set_size() const {
    const double qn = match_quantile * static_cast<double>(n_advertisers);
    const auto nearest = static_cast<std::int64_t>(std::llround(qn));
    if (std::fabs(qn - static_cast<double>(nearest)) <= 1e-9) return nearest;
    return static_cast<std::int64_t>(std::ceil(qn));
  }

  void validate() const {
    std::vector<std::string> bad;
    if (n_users <= 0) bad.push_back("n_users must be positive");
    if (n_advertisers <= 0) bad.push_back("n_advertisers must be positive");
    if (!(male_share > 0.0 && male_share < 1.0)) bad.push_back("male_share must be in (0,1)");
    if (!(click_mean > 0.0 && click_mean < 1.0)) bad.push_back("click_mean must be in (0,1)");
    if (female_click_mean && !(*female_click_mean > 0.0 && *female_click_mean < 1.0))
      bad.push_back("female_click_mean must be in (0,1)");
    if (!(click_concentration > 0.0)) bad.push_back("click_concentration must be positive");
    const std::int64_t k = matched_set_size();
    if (k < 1 || k > n_advertisers)
      bad.push_back("match_quantile must give 1 <= ceil(q*N) <= N");
    if (!bad.empty()) {
      std::string msg = "invalid population config:";
      for (const auto& b : bad) msg += " " + b + ";";
      throw ConfigError(msg);
    }
  }
};

struct BidConfig {
  double log_mu = 0.0;
  double log_sigma = 0.5;
  std::optional<double> focal_bid;
  std::optional<double> focal_percentile;

  void validate() const {
    std::vector<std::string> bad;
    if (!(log_sigma > 0.0)) bad.push_back("log_sigma must be positive");
    if (focal_bid.has_value() == focal_percentile.has_value())
      bad.push_back("exactly one of focal_bid / focal_percentile must be set");
    if (focal_bid && !(*focal_bid > 0.0)) bad.push_back("focal_bid must be positive");
    if (focal_percentile && !(*focal_percentile > 0.0 && *focal_percentile < 1.0))
      bad.push_back("focal_percentile must be in (0,1)");
    if (!bad.empty()) {
      std::string msg = "invalid bid config:";
      for (const auto& b : bad) msg += " " + b + ";";
      throw ConfigError(msg);
    }
  }

  // The focal bid is a quantile of the fitted LogNormal, not of the realized
  // non-focal draws.
  double resolve_focal_bid() const {
    if (focal_bid) return *focal_bid;
    return lognormal_quantile(log_mu, log_sigma, *focal_percentile);
  }

  double resolve_focal_percentile() const {
    if (focal_percentile) return *focal_percentile;
    return normal_cdf((std::log(*focal_bid) - log_mu) / log_sigma);
  }
};

// Noise regime of the matching signal: sd of the perceived-click-rate error
// by (advertiser class, user gender). S(A) is the all-zero map; S(B) puts
// sigma on the focal advertiser's female entries only. The "other" sigmas
// apply to the first ceil(share * (N-1)) non-focal advertisers by index.
struct MediatorRegime {
  double sigma_focal_f = 0.0;
  double sigma_focal_m = 0.0;
  double sigma_other_f = 0.0;
  double sigma_other_m = 0.0;
  double noisy_competitor_share = 0.0;

  bool operator==(const MediatorRegime&) const = default;

  static MediatorRegime all_zero() { return {}; }
  static MediatorRegime female_noise(double sigma, double competitor_share = 0.0) {
    MediatorRegime r;
    r.sigma_focal_f = sigma;
    if (competitor_share > 0.0) {
      r.sigma_other_f = sigma;
      r.noisy_competitor_share = competitor_share;
    }
    return r;
  }

  double sigma(AdvertiserClass c, Gender g) const {
    if (c == AdvertiserClass::Focal)
      return g == Gender::Female ? sigma_focal_f : sigma_focal_m;
    return g == Gender::Female ? sigma_other_f : sigma_other_m;
  }

  bool is_zero() const {
    return sigma_focal_f == 0.0 && sigma_focal_m == 0.0 && sigma_other_f == 0.0 &&
           sigma_other_m == 0.0;
  }

  void validate() const {
    if (sigma_focal_f < 0 || sigma_focal_m < 0 || sigma_other_f < 0 || sigma_other_m < 0)
      throw ConfigError("mediator regime: sigmas must be nonnegative");
    if (!(noisy_competitor_share >= 0.0 && noisy_competitor_share <= 1.0))
      throw ConfigError("mediator regime: noisy_competitor_share must be in [0,1]");
    if (!std::isfinite(sigma_focal_f) || !std::isfinite(sigma_focal_m) ||
        !std::isfinite(sigma_other_f) || !std::isfinite(sigma_other_m))
      throw ConfigError("mediator regime: sigmas must be finite");
  }
};

struct Population {
  std::vector<Gender> genders;  // n_users
  Matrix click_rates;           // n_users x n_advertisers, in (0,1)
  std::vector<double> bids;     // n_advertisers; bids[focal] is the focal bid
  std::int32_t focal = 0;

  std::int64_t n_users() const { return static_cast<std::int64_t>(genders.size()); }
  std::int64_t n_advertisers() const { return static_cast<std::int64_t>(bids.size()); }
};

struct DeliveryOutcome {
  std::int64_t wins = 0;
  std::int64_t female_wins = 0;
  std::int64_t matches = 0;
  std::int64_t female_matches = 0;
  std::int64_t clicks = 0;
  double mean_true_rate_won = 0.0;  // mu_r over won impressions
  double mean_signal_won = 0.0;     // mu_s over won impressions
  double spend = 0.0;

  double female_share() const {
    return wins > 0 ? static_cast<double>(female_wins) / static_cast<double>(wins) : 0.0;
  }
  double match_female_share() const {
    return matches > 0 ? static_cast<double>(female_matches) / static_cast<double>(matches)
                       : 0.0;
  }
  double ctr() const {
    return wins > 0 ? static_cast<double>(clicks) / static_cast<double>(wins) : 0.0;
  }

  bool operator==(const DeliveryOutcome&) const = default;
};

// Recover (log_mu, log_sigma) from two published quantiles by solving
// ln v = mu + z_p * sigma at both points.
inline std::pair<double, double> calibrate_lognormal(std::pair<double, double> q1,
                                                     std::pair<double, double> q2) {
  const auto [v1, p1] = q1;
  const auto [v2, p2] = q2;
  if (!(v1 > 0.0 && v2 > 0.0)) throw NumericError("calibrate_lognormal: values must be positive");
  if (!(p1 > 0.0 && p1 < 1.0 && p2 > 0.0 && p2 < 1.0))
    throw NumericError("calibrate_lognormal: percentiles must be in (0,1)");
  if (p1 == p2) throw NumericError("calibrate_lognormal: identical percentiles give a degenerate system");
  const double z1 = normal_quantile(p1);
  const double z2 = normal_quantile(p2);
  const double sigma = (std::log(v2) - std::log(v1)) / (z2 - z1);
  if (!(sigma > 0.0))
    throw NumericError("calibrate_lognormal: quantile pair implies non-positive log_sigma");
  const double mu = std::log(v1) - z1 * sigma;
  return {mu, sigma};
}

inline void build_population_into(const PopulationConfig& config, const BidConfig& bids,
                                  const SeedCtx& ctx, Population& out) {
  config.validate();
  bids.validate();
  const auto n_u = static_cast<std::size_t>(config.n_users);
  const auto n_a = static_cast<std::size_t>(config.n_advertisers);

  out.genders.resize(n_u);
  const std::uint64_t gender_key = ctx.stage(Stage::Gender);
  for (std::size_t u = 0; u < n_u; ++u) {
    Rng rng(derive(gender_key, u));
    out.genders[u] = rng.bernoulli(config.male_share) ? Gender::Male : Gender::Female;
  }

  const double kappa = config.click_concentration;
  const double a_m = config.click_mean * kappa;
  const double b_m = (1.0 - config.click_mean) * kappa;
  const double a_f = config.female_mean() * kappa;
  const double b_f = (1.0 - config.female_mean()) * kappa;

  out.click_rates.reshape(n_u, n_a);
  const std::uint64_t rate_key = ctx.stage(Stage::ClickRate);
  for (std::size_t u = 0; u < n_u; ++u) {
    const bool female = out.genders[u] == Gender::Female;
    const double a = female ? a_f : a_m;
    const double b = female ? b_f : b_m;
    double* row = out.click_rates.data.data() + u * n_a;
    for (std::size_t i = 0; i < n_a; ++i) {
      Rng rng(derive(rate_key, u * n_a + i));
      row[i] = rng.beta(a, b);
    }
  }

  out.bids.resize(n_a);
  out.focal = 0;
  const std::uint64_t bid_key = ctx.stage(Stage::Bids);
  for (std::size_t i = 0; i < n_a; ++i) {
    if (static_cast<std::int32_t>(i) == out.focal) continue;
    Rng rng(derive(bid_key, i));
    out.bids[i] = rng.lognormal(bids.log_mu, bids.log_sigma);
  }
  out.bids[static_cast<std::size_t>(out.focal)] = bids.resolve_focal_bid();
}

inline Population build_population(const PopulationConfig& config, const BidConfig& bids,
                                   const SeedCtx& ctx) {
  Population pop;
  build_population_into(config, bids, ctx, pop);
  return pop;
}

// Number of non-focal advertisers the "other" sigma applies to.
inline std::int64_t noisy_competitor_count(const MediatorRegime& regime,
                                           std::int64_t n_advertisers) {
  const double share = regime.noisy_competitor_share;
  if (share <= 0.0) return 0;
  const double m = share * static_cast<double>(n_advertisers - 1);
  const auto nearest = static_cast<std::int64_t>(std::llround(m));
  if (std::fabs(m - static_cast<double>(nearest)) <= 1e-9) return nearest;
  return static_cast<std::int64_t>(std::ceil(m));
}

inline void perceived_signals_into(const Population& pop, const MediatorRegime& regime,
                                   const SeedCtx& ctx, Matrix& out) {
  regime.validate();
  const auto n_u = static_cast<std::size_t>(pop.n_users());
  const auto n_a = static_cast<std::size_t>(pop.n_advertisers());
  out.reshape(n_u, n_a);
  out.data = pop.click_rates.data;  // sigma = 0 entries keep s = r exactly

  if (regime.is_zero()) return;

  const std::uint64_t noise_key = ctx.stage(Stage::SignalNoise);
  const auto focal = static_cast<std::size_t>(pop.focal);
  const std::int64_t noisy_others = noisy_competitor_count(regime, pop.n_advertisers());

  for (std::size_t u = 0; u < n_u; ++u) {
    const Gender g = pop.genders[u];
    double* row = out.data.data() + u * n_a;
    std::int64_t others_seen = 0;
    for (std::size_t i = 0; i < n_a; ++i) {
      double sd;
      if (i == focal) {
        sd = regime.sigma(AdvertiserClass::Focal, g);
      } else {
        sd = (others_seen < noisy_others) ? regime.sigma(AdvertiserClass::Other, g) : 0.0;
        ++others_seen;
      }
      if (sd == 0.0) continue;  // no draw: keyed streams leave other entries untouched
      Rng rng(derive(noise_key, u * n_a + i));
      row[i] = std::clamp(row[i] + rng.normal(0.0, sd), 0.0, 1.0);
    }
  }
}

inline Matrix perceived_signals(const Population& pop, const MediatorRegime& regime,
                                const SeedCtx& ctx) {
  Matrix m;
  perceived_signals_into(pop, regime, ctx, m);
  return m;
}

// Per-user matched sets: the k = ceil(q*N) advertisers with the largest
// signals; ties resolved toward the lowest advertiser index. Sets are stored
// flat, k ids per user, ascending.
struct MatchResult {
  std::int64_t k = 0;
  std::vector<std::int32_t> sets;

  std::span<const std::int32_t> user(std::size_t u) const {
    return {sets.data() + u * static_cast<std::size_t>(k), static_cast<std::size_t>(k)};
  }
};

inline void match_top_q_into(const Matrix& signals, double q, MatchResult& out,
                             std::vector<std::int32_t>& scratch) {
  const std::size_t n_u = signals.rows;
  const std::size_t n_a = signals.cols;
  const double qn = q * static_cast<double>(n_a);
  const auto nearest = static_cast<std::int64_t>(std::llround(qn));
  const std::int64_t k = (std::fabs(qn - static_cast<double>(nearest)) <= 1e-9)
                             ? nearest
                             : static_cast<std::int64_t>(std::ceil(qn));
  if (k < 1 || k > static_cast<std::int64_t>(n_a))
    throw ConfigError("match_top_q: need 1 <= ceil(q*N) <= N");

  out.k = k;
  out.sets.resize(n_u * static_cast<std::size_t>(k));
  scratch.resize(n_a);

  for (std::size_t u = 0; u < n_u; ++u) {
    const double* s = signals.data.data() + u * n_a;
    std::iota(scratch.begin(), scratch.end(), 0);
    const auto better = [s](std::int32_t lhs, std::int32_t rhs) {
      if (s[lhs] != s[rhs]) return s[lhs] > s[rhs];
      return lhs < rhs;
    };
    std::nth_element(scratch.begin(), scratch.begin() + (k - 1), scratch.end(), better);
    std::int32_t* dst = out.sets.data() + u * static_cast<std::size_t>(k);
    std::copy(scratch.begin(), scratch.begin() + k, dst);
    std::sort(dst, dst + k);
  }
}

inline MatchResult match_top_q(const Matrix& signals, double q) {
  MatchResult m;
  std::vector<std::int32_t> scratch;
  match_top_q_into(signals, q, m, scratch);
  return m;
}

// Second-price auction within each matched set, reported for the focal
// advertiser. Winner = highest bid (ties toward lowest index); price =
// second-highest bid in the set; a singleton set pays 0. Clicks are
// Bernoulli(r_{u,focal}) realized only on focal wins, with per-user keyed
// draws so arms sharing a seed share click realizations.
inline DeliveryOutcome run_auction(const Population& pop, const MatchResult& matches,
                                   const Matrix& signals, const SeedCtx& ctx) {
  if (matches.k < 1) throw NumericError("run_auction: empty matched set");
  const auto n_u = static_cast<std::size_t>(pop.n_users());
  const auto focal = pop.focal;
  const std::uint64_t click_key = ctx.stage(Stage::Clicks);

  DeliveryOutcome out;
  double sum_r = 0.0, sum_s = 0.0;
  for (std::size_t u = 0; u < n_u; ++u) {
    const auto set = matches.user(u);
    bool focal_matched = false;
    std::int32_t best = -1;
    double best_bid = -1.0, second_bid = 0.0;
    for (const std::int32_t id : set) {
      if (id == focal) focal_matched = true;
      const double bid = pop.bids[static_cast<std::size_t>(id)];
      if (bid > best_bid) {  // strict: ascending ids keep lowest index on ties
        second_bid = best_bid;
        best_bid = bid;
        best = id;
      } else if (bid > second_bid) {
        second_bid = bid;
      }
    }
    const bool female = pop.genders[u] == Gender::Female;
    if (focal_matched) {
      ++out.matches;
      if (female) ++out.female_matches;
    }
    if (focal_matched && best == focal) {
      ++out.wins;
      if (female) ++out.female_wins;
      out.spend += (set.size() > 1) ? second_bid : 0.0;
      const double r = pop.click_rates.at(u, static_cast<std::size_t>(focal));
      sum_r += r;
      sum_s += signals.at(u, static_cast<std::size_t>(focal));
      Rng rng(derive(click_key, u));
      if (rng.bernoulli(r)) ++out.clicks;
    }
  }
  if (out.wins > 0) {
    out.mean_true_rate_won = sum_r / static_cast<double>(out.wins);
    out.mean_signal_won = sum_s / static_cast<double>(out.wins);
  }
  return out;
}

}  // namespace divlab
