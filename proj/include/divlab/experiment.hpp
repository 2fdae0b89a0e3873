#pragma once

// Paired three-arm Monte Carlo experiment. Arm 1 runs creative A under the
// zero-noise regime S(A); arm 2 runs creative A under S(B); arm 3 runs
// creative B under S(B). All arms of a round share the population, bid and
// click substreams (common random numbers) unless independent pairing is
// requested. The click-rate primitive does not depend on the creative, so
// the population direct effect is zero by construction and arm3 - arm2 is a
// built-in placebo.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "divlab/auction.hpp"
#include "divlab/parallel.hpp"
#include "divlab/rng.hpp"
#include "divlab/stats.hpp"

namespace divlab {

enum class Creative : std::uint8_t { A = 0, B = 1 };

struct ArmSpec {
  int arm_id = 0;
  Creative creative = Creative::A;
  MediatorRegime regime;
};

// Design-table invariant: arm1 = (A, S(A)); arm2 = (A, S(B)); arm3 = (B, S(B)).
inline void validate_design(const std::array<ArmSpec, 3>& arms) {
  if (arms[0].arm_id != 1 || arms[1].arm_id != 2 || arms[2].arm_id != 3)
    throw ConfigError("three-arm design: arm ids must be 1, 2, 3 in order");
  if (arms[0].creative != Creative::A || arms[1].creative != Creative::A ||
      arms[2].creative != Creative::B)
    throw ConfigError("three-arm design: creatives must be (A, A, B)");
  if (!arms[0].regime.is_zero())
    throw ConfigError("three-arm design: arm 1 must use the all-zero regime S(A)");
  if (!(arms[1].regime == arms[2].regime))
    throw ConfigError("three-arm design: arms 2 and 3 must share the regime S(B)");
  for (const auto& a : arms) a.regime.validate();
}

inline std::array<ArmSpec, 3> three_arm_design(double sigma, double competitor_share = 0.0) {
  const MediatorRegime sb = MediatorRegime::female_noise(sigma, competitor_share);
  return {ArmSpec{1, Creative::A, MediatorRegime::all_zero()},
          ArmSpec{2, Creative::A, sb}, ArmSpec{3, Creative::B, sb}};
}

struct ArmSummary {
  int arm_id = 0;
  double mean_outcome = 0.0;  // impression-level female share (fraction)
  double variance = 0.0;      // across rounds
  std::int64_t n = 0;         // rounds
  double mean_wins = 0.0;
  double mean_matches = 0.0;
  double mean_match_female_share = 0.0;
  double mean_ctr = 0.0;
  double mean_spend = 0.0;
  double mean_true_rate_won = 0.0;
  double mean_signal_won = 0.0;
};

enum class DecompMethod { MonteCarloPaired, Neyman, Hc3 };

inline const char* to_string(DecompMethod m) {
  switch (m) {
    case DecompMethod::MonteCarloPaired: return "monte-carlo-paired";
    case DecompMethod::Neyman: return "neyman";
    case DecompMethod::Hc3: return "hc3";
  }
  return "?";
}

struct Decomposition {
  double nie = 0.0, nde = 0.0, te = 0.0;
  double se_nie = 0.0, se_nde = 0.0, se_te = 0.0;
  double ci_level = 0.95;
  DecompMethod method = DecompMethod::MonteCarloPaired;

  std::array<double, 2> ci_nie() const { return ci(nie, se_nie); }
  std::array<double, 2> ci_nde() const { return ci(nde, se_nde); }
  std::array<double, 2> ci_te() const { return ci(te, se_te); }

 private:
  std::array<double, 2> ci(double est, double se) const {
    const double z = normal_quantile(0.5 + ci_level / 2.0);
    return {est - z * se, est + z * se};
  }
};

// Point decomposition from the three arm means: NIE = y2 - y1,
// NDE = y3 - y2, TE = y3 - y1. The identity TE = NIE + NDE is exact.
inline Decomposition decompose(double y1, double y2, double y3) {
  if (!std::isfinite(y1) || !std::isfinite(y2) || !std::isfinite(y3))
    throw NumericError("decompose: non-finite input");
  Decomposition d;
  d.nie = y2 - y1;
  d.nde = y3 - y2;
  d.te = y3 - y1;
  return d;
}

// Neyman variance of a difference in arm means (Eq. of the saturated design):
// s_a^2/n_a + s_b^2/n_b.
inline double neyman_var(double s2_a, std::int64_t n_a, double s2_b, std::int64_t n_b) {
  if (n_a <= 0 || n_b <= 0) throw NumericError("neyman_var: arm sizes must be positive");
  if (s2_a < 0.0 || s2_b < 0.0) throw NumericError("neyman_var: variances must be nonnegative");
  return s2_a / static_cast<double>(n_a) + s2_b / static_cast<double>(n_b);
}

enum class Pairing { Shared, Independent };

struct RoundWorkspace {
  Population pop;
  Matrix signals;
  MatchResult matches;
  std::vector<std::int32_t> scratch;
};

// One paired round: the three delivery outcomes under a common population.
// With shared pairing and equal regimes, arms 2 and 3 are identical by
// construction (the creative never enters the simulation), so the arm-3 run
// is reused from arm 2.
inline std::array<DeliveryOutcome, 3> run_three_arm_round(
    const PopulationConfig& pop_config, const BidConfig& bid_config,
    const std::array<ArmSpec, 3>& arms, std::uint64_t seed, std::uint64_t round,
    Pairing pairing, RoundWorkspace& ws) {
  validate_design(arms);
  std::array<DeliveryOutcome, 3> out;
  const bool shared = pairing == Pairing::Shared;

  if (shared) {
    const SeedCtx ctx{seed, round, 0};
    build_population_into(pop_config, bid_config, ctx, ws.pop);
    for (int a = 0; a < 3; ++a) {
      if (a > 0 && arms[a].regime == arms[a - 1].regime) {
        out[a] = out[a - 1];
        continue;
      }
      perceived_signals_into(ws.pop, arms[a].regime, ctx, ws.signals);
      match_top_q_into(ws.signals, pop_config.match_quantile, ws.matches, ws.scratch);
      out[a] = run_auction(ws.pop, ws.matches, ws.signals, ctx);
    }
  } else {
    for (int a = 0; a < 3; ++a) {
      const SeedCtx ctx{seed, round, static_cast<std::uint64_t>(arms[a].arm_id)};
      build_population_into(pop_config, bid_config, ctx, ws.pop);
      perceived_signals_into(ws.pop, arms[a].regime, ctx, ws.signals);
      match_top_q_into(ws.signals, pop_config.match_quantile, ws.matches, ws.scratch);
      out[a] = run_auction(ws.pop, ws.matches, ws.signals, ctx);
    }
  }
  return out;
}

struct RoundRecord {
  std::array<DeliveryOutcome, 3> arms;
};

struct MonteCarloResult {
  std::array<ArmSummary, 3> arms;
  Decomposition impression;         // female share of won impressions
  Decomposition match;              // female share of matches (bid-free channel)
  Decomposition engagement_true;    // mu_r of won impressions
  Decomposition engagement_signal;  // mu_s of won impressions
  Decomposition ctr;                // realized clicks per win
  std::optional<KsResult> a3;       // arm-2 vs arm-3 realized signal noise
  std::vector<RoundRecord> rounds;
};

struct McOptions {
  std::int64_t rounds = 1000;
  std::uint64_t seed = 0;
  Pairing pairing = Pairing::Shared;
  int threads = 1;
  bool keep_rounds = true;
  bool a3_check = true;
};

namespace detail {

// Paired decomposition over per-round arm outcomes; MC SE from the sd of the
// per-round differences.
inline Decomposition paired_decomposition(std::span<const double> y1, std::span<const double> y2,
                                          std::span<const double> y3) {
  const std::size_t r = y1.size();
  std::vector<double> d_nie(r), d_nde(r), d_te(r);
  for (std::size_t i = 0; i < r; ++i) {
    d_nie[i] = y2[i] - y1[i];
    d_nde[i] = y3[i] - y2[i];
    d_te[i] = y3[i] - y1[i];
  }
  Decomposition d;
  d.method = DecompMethod::MonteCarloPaired;
  d.nie = mean(d_nie);
  d.nde = mean(d_nde);
  d.te = mean(d_te);
  const double sr = std::sqrt(static_cast<double>(r));
  d.se_nie = sample_sd(d_nie) / sr;
  d.se_nde = sample_sd(d_nde) / sr;
  d.se_te = sample_sd(d_te) / sr;
  return d;
}

// Realized focal-signal noise (s - r) on entries the regime perturbs,
// gathered for the A3 distribution check.
inline std::vector<double> focal_noise_sample(const Population& pop, const MediatorRegime& regime,
                                              const SeedCtx& ctx) {
  std::vector<double> noise;
  if (regime.sigma_focal_f == 0.0 && regime.sigma_focal_m == 0.0) return noise;
  const auto n_u = static_cast<std::size_t>(pop.n_users());
  const auto n_a = static_cast<std::size_t>(pop.n_advertisers());
  const auto focal = static_cast<std::size_t>(pop.focal);
  const std::uint64_t noise_key = ctx.stage(Stage::SignalNoise);
  noise.reserve(n_u);
  for (std::size_t u = 0; u < n_u; ++u) {
    const double sd = regime.sigma(AdvertiserClass::Focal, pop.genders[u]);
    if (sd == 0.0) continue;
    Rng rng(derive(noise_key, u * n_a + focal));
    noise.push_back(rng.normal(0.0, sd));
  }
  return noise;
}

}  // namespace detail

inline MonteCarloResult monte_carlo(const PopulationConfig& pop_config,
                                    const BidConfig& bid_config,
                                    const std::array<ArmSpec, 3>& arms, const McOptions& opt) {
  if (opt.rounds < 2) throw ConfigError("monte_carlo: need at least 2 rounds");
  validate_design(arms);

  const auto r = static_cast<std::size_t>(opt.rounds);
  std::vector<RoundRecord> records(r);
  const int threads = std::max(1, opt.threads);

  // Rounds are independent given per-round substreams; each worker owns a
  // workspace and writes only its own slots.
  {
    std::vector<RoundWorkspace> spaces(static_cast<std::size_t>(threads));
    parallel_for_workers(r, threads, [&](std::size_t worker, std::size_t i) {
      records[i].arms = run_three_arm_round(pop_config, bid_config, arms, opt.seed,
                                            static_cast<std::uint64_t>(i), opt.pairing,
                                            spaces[worker]);
    });
  }

  MonteCarloResult res;

  std::array<std::vector<double>, 3> share, mshare, mu_r, mu_s, ctr;
  for (auto& v : share) v.resize(r);
  for (auto& v : mshare) v.resize(r);
  for (auto& v : mu_r) v.resize(r);
  for (auto& v : mu_s) v.resize(r);
  for (auto& v : ctr) v.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    for (int a = 0; a < 3; ++a) {
      const DeliveryOutcome& o = records[i].arms[static_cast<std::size_t>(a)];
      share[a][i] = o.female_share();
      mshare[a][i] = o.match_female_share();
      mu_r[a][i] = o.mean_true_rate_won;
      mu_s[a][i] = o.mean_signal_won;
      ctr[a][i] = o.ctr();
    }
  }

  for (int a = 0; a < 3; ++a) {
    ArmSummary& s = res.arms[static_cast<std::size_t>(a)];
    s.arm_id = a + 1;
    s.n = opt.rounds;
    s.mean_outcome = mean(share[a]);
    s.variance = sample_variance(share[a]);
    s.mean_match_female_share = mean(mshare[a]);
    s.mean_true_rate_won = mean(mu_r[a]);
    s.mean_signal_won = mean(mu_s[a]);
    s.mean_ctr = mean(ctr[a]);
    std::vector<double> wins(r), matches(r), spend(r);
    for (std::size_t i = 0; i < r; ++i) {
      const DeliveryOutcome& o = records[i].arms[static_cast<std::size_t>(a)];
      wins[i] = static_cast<double>(o.wins);
      matches[i] = static_cast<double>(o.matches);
      spend[i] = o.spend;
    }
    s.mean_wins = mean(wins);
    s.mean_matches = mean(matches);
    s.mean_spend = mean(spend);
  }

  res.impression = detail::paired_decomposition(share[0], share[1], share[2]);
  res.match = detail::paired_decomposition(mshare[0], mshare[1], mshare[2]);
  res.engagement_true = detail::paired_decomposition(mu_r[0], mu_r[1], mu_r[2]);
  res.engagement_signal = detail::paired_decomposition(mu_s[0], mu_s[1], mu_s[2]);
  res.ctr = detail::paired_decomposition(ctr[0], ctr[1], ctr[2]);

  if (opt.a3_check) {
    // Round-0 realized mediator draws for arm 2 vs arm 3.
    RoundWorkspace ws;
    const std::uint64_t salt2 = opt.pairing == Pairing::Shared ? 0 : 2;
    const std::uint64_t salt3 = opt.pairing == Pairing::Shared ? 0 : 3;
    const SeedCtx ctx2{opt.seed, 0, salt2};
    const SeedCtx ctx3{opt.seed, 0, salt3};
    build_population_into(pop_config, bid_config, ctx2, ws.pop);
    const auto noise2 = detail::focal_noise_sample(ws.pop, arms[1].regime, ctx2);
    if (salt3 != salt2) build_population_into(pop_config, bid_config, ctx3, ws.pop);
    const auto noise3 = detail::focal_noise_sample(ws.pop, arms[2].regime, ctx3);
    if (!noise2.empty() && !noise3.empty()) res.a3 = ks_two_sample(noise2, noise3);
  }

  if (opt.keep_rounds) res.rounds = std::move(records);
  return res;
}

struct SweepEntry {
  double percentile = 0.0;
  double focal_bid = 0.0;
  Decomposition impression;
  Decomposition match;
  std::vector<double> impression_nie_rounds;
  std::vector<double> match_nie_rounds;
};

// Focal-bid sweep under common seeds: the matching stage never sees bids, so
// the match-level decomposition is identical across percentiles.
inline std::vector<SweepEntry> bid_sweep(const std::vector<double>& percentiles,
                                         const PopulationConfig& pop_config,
                                         const BidConfig& bid_config,
                                         const std::array<ArmSpec, 3>& arms,
                                         const McOptions& opt) {
  std::vector<SweepEntry> out;
  out.reserve(percentiles.size());
  for (const double p : percentiles) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("bid_sweep: percentiles must be in (0,1)");
    BidConfig bc = bid_config;
    bc.focal_bid.reset();
    bc.focal_percentile = p;
    McOptions mo = opt;
    mo.keep_rounds = true;
    mo.a3_check = false;
    MonteCarloResult mc = monte_carlo(pop_config, bc, arms, mo);
    SweepEntry e;
    e.percentile = p;
    e.focal_bid = bc.resolve_focal_bid();
    e.impression = mc.impression;
    e.match = mc.match;
    e.impression_nie_rounds.reserve(mc.rounds.size());
    e.match_nie_rounds.reserve(mc.rounds.size());
    for (const auto& rec : mc.rounds) {
      e.impression_nie_rounds.push_back(rec.arms[1].female_share() - rec.arms[0].female_share());
      e.match_nie_rounds.push_back(rec.arms[1].match_female_share() -
                                   rec.arms[0].match_female_share());
    }
    out.push_back(std::move(e));
  }
  return out;
}

struct SigmaInversion {
  double sigma = 0.0;
  double achieved_nie = 0.0;  // fraction units
  double target_nie = 0.0;
  int iterations = 0;
  std::int64_t rounds_per_step = 0;
};

struct InvertOptions {
  std::int64_t rounds = 200;
  std::uint64_t seed = 0;
  double tolerance = 1e-3;  // on NIE, fraction units
  double sigma_max = 0.1;
  int max_iterations = 40;
  int threads = 1;
  double competitor_share = 0.0;
};

// Bisection on sigma with all seeds fixed, so the objective NIE(sigma) is a
// deterministic, effectively monotone function. Stops when the achieved NIE
// is within max(tolerance, 2 * MC SE) of the target.
inline SigmaInversion invert_sigma(double target_nie, const PopulationConfig& pop_config,
                                   const BidConfig& bid_config, const InvertOptions& opt) {
  if (!(target_nie >= 0.0)) throw ConfigError("invert_sigma: target must be nonnegative");
  SigmaInversion res;
  res.target_nie = target_nie;
  res.rounds_per_step = opt.rounds;
  if (target_nie == 0.0) return res;  // NIE(0) = 0 exactly under shared seeds

  McOptions mo;
  mo.rounds = opt.rounds;
  mo.seed = opt.seed;
  mo.pairing = Pairing::Shared;
  mo.threads = opt.threads;
  mo.keep_rounds = false;
  mo.a3_check = false;

  const auto objective = [&](double sigma) {
    const auto arms = three_arm_design(sigma, opt.competitor_share);
    return monte_carlo(pop_config, bid_config, arms, mo);
  };

  double lo = 0.0, hi = opt.sigma_max;
  MonteCarloResult at_hi = objective(hi);
  ++res.iterations;
  if (at_hi.impression.nie < target_nie)
    throw NumericError("invert_sigma: target NIE exceeds NIE(sigma_max); widen the bracket");

  double best_sigma = hi;
  double best_nie = at_hi.impression.nie;
  while (res.iterations < opt.max_iterations) {
    const double mid = 0.5 * (lo + hi);
    MonteCarloResult at_mid = objective(mid);
    ++res.iterations;
    const double nie = at_mid.impression.nie;
    if (std::fabs(nie - target_nie) < std::fabs(best_nie - target_nie)) {
      best_sigma = mid;
      best_nie = nie;
    }
    const double tol = std::max(opt.tolerance, 2.0 * at_mid.impression.se_nie);
    if (std::fabs(nie - target_nie) <= tol) break;
    if (nie < target_nie)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-7) break;
  }
  res.sigma = best_sigma;
  res.achieved_nie = best_nie;
  return res;
}

// Minimize Var(NIE) + Var(NDE) = s1^2/n1 + 2 s2^2/n2 + s3^2/n3 subject to
// n1+n2+n3 = n_total: continuous optimum n_z proportional to (s1, s2*sqrt(2), s3),
// apportioned to integers by largest remainder, every arm at least 1.
inline std::array<std::int64_t, 3> optimal_allocation(double s1, double s2, double s3,
                                                      std::int64_t n_total) {
  if (!(s1 > 0.0) || !(s2 >= 0.0) || !(s3 > 0.0))
    throw ConfigError("optimal_allocation: sds must be positive (arm 2 may be zero)");
  if (n_total < 3) throw ConfigError("optimal_allocation: n_total must be at least 3");

  const std::array<double, 3> w = {s1, s2 * std::sqrt(2.0), s3};
  const double total = w[0] + w[1] + w[2];
  std::array<std::int64_t, 3> n{};
  std::array<double, 3> frac{};
  std::int64_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double ideal = static_cast<double>(n_total) * w[i] / total;
    n[i] = static_cast<std::int64_t>(std::floor(ideal));
    frac[i] = ideal - static_cast<double>(n[i]);
    assigned += n[i];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (frac[a] != frac[b]) return frac[a] > frac[b];
    return a < b;
  });
  for (int i = 0; assigned < n_total; ++i, ++assigned) n[order[static_cast<std::size_t>(i % 3)]]++;

  // Every arm participates in a contrast; floor each at one observation.
  for (int i = 0; i < 3; ++i) {
    while (n[i] < 1) {
      int donor = 0;
      for (int j = 1; j < 3; ++j)
        if (n[j] > n[donor]) donor = j;
      --n[donor];
      ++n[i];
    }
  }
  return n;
}

}  // namespace divlab
